#pragma once

#include <cmath>
#include <cstdint>

#include "gnaq/errors.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/parallel.hpp"

namespace gnaq {

// Adam with bias correction. One state per parameter matrix; step() applies
// a dense update (moments decay everywhere, including zero-gradient entries).
struct AdamState {
    Matrix m;
    Matrix v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    AdamState() = default;
    AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

inline void adam_step(AdamState& state, Matrix& params, const Matrix& grad, double lr) {
    require_same_shape(params, grad, "adam_step params/grad");
    require_same_shape(params, state.m, "adam_step params/state");
    ++state.t;
    const double b1 = state.beta1, b2 = state.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
    auto p = params.data();
    auto m = state.m.data();
    auto v = state.v.data();
    auto g = grad.data();
    const std::size_t n = p.size();
    const double eps = state.eps;
    parallel_for(n, [&](std::size_t begin, std::size_t end) {
        for (std::size_t k = begin; k < end; ++k) {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            const double mhat = m[k] / c1;
            const double vhat = v[k] / c2;
            p[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    });
}

}  // namespace gnaq
