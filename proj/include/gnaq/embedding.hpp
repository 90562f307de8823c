#pragma once

#include <cstdint>

#include "gnaq/errors.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/rng.hpp"

namespace gnaq {

// Node embeddings, one row per graph node (users first, then items).
using EmbeddingTable = Matrix;

// Gaussian init, N(0, 0.1^2) per entry, filled row-major so the layout is
// independent of threading.
inline EmbeddingTable init_embeddings(std::size_t n_nodes, std::size_t dim,
                                      std::uint64_t seed) {
    if (n_nodes == 0 || dim == 0) throw InputError("init_embeddings: empty shape");
    EmbeddingTable e(n_nodes, dim);
    Rng rng(seed);
    for (std::size_t r = 0; r < n_nodes; ++r)
        for (std::size_t c = 0; c < dim; ++c) e(r, c) = rng_normal(rng, 0.0, 0.1);
    return e;
}

// Preference score = <h_u, h_item-node>. h rows cover all nodes; item i
// lives at row n_users + i. Works on any width (quantized tables are wider).
inline double score(const Matrix& h, std::size_t n_users, std::uint32_t user,
                    std::uint32_t item) {
    return dot(h.row(user), h.row(n_users + item));
}

}  // namespace gnaq
