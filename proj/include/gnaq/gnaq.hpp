#pragma once

#include "gnaq/adam.hpp"
#include "gnaq/dataset.hpp"
#include "gnaq/embedding.hpp"
#include "gnaq/errors.hpp"
#include "gnaq/fp8.hpp"
#include "gnaq/graph.hpp"
#include "gnaq/losses.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/metrics.hpp"
#include "gnaq/model_io.hpp"
#include "gnaq/parallel.hpp"
#include "gnaq/quantizer.hpp"
#include "gnaq/rng.hpp"
#include "gnaq/train.hpp"
