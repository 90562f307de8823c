#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "gnaq/errors.hpp"
#include "gnaq/graph.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/parallel.hpp"

namespace gnaq {

// Per-node quantized embedding model.
//   codes  N x d, row-major, each in [0, 2^n)
//   scales N x 2^n, each row sorted ascending (canonical form), every entry
//          strictly inside the node's (range_lo, range_hi)
// Scales are the representative values of the quantization intervals; codes
// index into them.
struct QuantizedModel {
    std::size_t n_bits = 0;
    std::size_t d = 0;
    std::vector<std::uint8_t> codes;  // n_nodes * d
    Matrix scales;                    // n_nodes x (1 << n_bits)
    std::vector<double> range_lo;
    std::vector<double> range_hi;

    std::size_t n_nodes() const { return range_lo.size(); }
    std::size_t n_levels() const { return std::size_t{1} << n_bits; }

    std::uint8_t code(std::size_t node, std::size_t k) const { return codes[node * d + k]; }
    std::uint8_t& code(std::size_t node, std::size_t k) { return codes[node * d + k]; }

    void check_invariants() const {
        const std::size_t levels = n_levels();
        if (scales.rows() != n_nodes() || scales.cols() != levels ||
            codes.size() != n_nodes() * d || range_hi.size() != n_nodes())
            throw Error("QuantizedModel: inconsistent shapes");
        for (std::uint8_t c : codes)
            if (c >= levels) throw Error("QuantizedModel: code out of range");
        for (std::size_t i = 0; i < n_nodes(); ++i) {
            if (!(range_lo[i] < range_hi[i]))
                throw Error("QuantizedModel: node " + std::to_string(i) +
                            " has empty range");
            auto row = scales.row(i);
            for (std::size_t v = 0; v < levels; ++v) {
                if (v + 1 < levels && !(row[v] <= row[v + 1]))
                    throw Error("QuantizedModel: node " + std::to_string(i) +
                                " scales not sorted");
                if (!(row[v] > range_lo[i] && row[v] < range_hi[i]))
                    throw Error("QuantizedModel: node " + std::to_string(i) +
                                " scale outside open range");
            }
        }
    }
};

// Uniform per-node quantization of a full-precision table. Per node:
//   gap = (max - min) / 2^n, code = interval index (top interval closed),
//   scales = interval midpoints, range = [min, max].
// Constant rows degenerate to gap 0: all codes 0, all scales equal to the
// constant, range widened by eps = 1e-6 on both sides.
inline QuantizedModel init_quantizer(const Matrix& e_full, std::size_t n_bits) {
    if (n_bits < 1 || n_bits > 8)
        throw InputError("init_quantizer: bit width must be in [1, 8]");
    if (e_full.rows() == 0 || e_full.cols() == 0)
        throw InputError("init_quantizer: empty embedding table");
    if (!e_full.all_finite()) throw InputError("init_quantizer: non-finite embedding");

    QuantizedModel m;
    m.n_bits = n_bits;
    m.d = e_full.cols();
    const std::size_t levels = m.n_levels();
    m.codes.assign(e_full.rows() * m.d, 0);
    m.scales = Matrix(e_full.rows(), levels);
    m.range_lo.resize(e_full.rows());
    m.range_hi.resize(e_full.rows());

    parallel_for(e_full.rows(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto row = e_full.row(i);
            const auto [mn_it, mx_it] = std::minmax_element(row.begin(), row.end());
            const double lo = *mn_it, hi = *mx_it;
            auto srow = m.scales.row(i);
            if (lo == hi) {
                m.range_lo[i] = lo - 1e-6;
                m.range_hi[i] = hi + 1e-6;
                std::fill(srow.begin(), srow.end(), lo);
                continue;  // codes already 0
            }
            m.range_lo[i] = lo;
            m.range_hi[i] = hi;
            const double gap = (hi - lo) / static_cast<double>(levels);
            for (std::size_t v = 0; v < levels; ++v)
                srow[v] = lo + (2.0 * static_cast<double>(v) + 1.0) * gap / 2.0;
            for (std::size_t k = 0; k < m.d; ++k) {
                double q = std::floor((row[k] - lo) / gap);
                if (q > static_cast<double>(levels - 1)) q = static_cast<double>(levels - 1);
                m.codes[i * m.d + k] = static_cast<std::uint8_t>(q);
            }
        }
    });
    return m;
}

// out[i][k] = scales[i][codes[i][k]]
inline Matrix dequantize(const QuantizedModel& m) {
    Matrix out(m.n_nodes(), m.d);
    parallel_for(m.n_nodes(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto srow = m.scales.row(i);
            auto dst = out.row(i);
            for (std::size_t k = 0; k < m.d; ++k) dst[k] = srow[m.code(i, k)];
        }
    });
    return out;
}

// [dequantized | scales] per row, shape N x (d + 2^n). This widened table is
// what propagation and scoring consume, so scale columns participate in the
// forward pass directly.
inline Matrix extend_embedding(const QuantizedModel& m) {
    const std::size_t levels = m.n_levels();
    Matrix out(m.n_nodes(), m.d + levels);
    parallel_for(m.n_nodes(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto srow = m.scales.row(i);
            auto dst = out.row(i);
            for (std::size_t k = 0; k < m.d; ++k) dst[k] = srow[m.code(i, k)];
            for (std::size_t v = 0; v < levels; ++v) dst[m.d + v] = srow[v];
        }
    });
    return out;
}

// Chain rule through extend_embedding: scale v of node i receives the sum of
// gradients at the first-d positions whose code is v (gather path) plus the
// gradient at appended column d+v (direct path).
inline Matrix grad_scales(const Matrix& grad_h0, const QuantizedModel& m) {
    const std::size_t levels = m.n_levels();
    if (grad_h0.rows() != m.n_nodes() || grad_h0.cols() != m.d + levels)
        throw InputError("grad_scales: gradient shape mismatch");
    Matrix out(m.n_nodes(), levels);
    parallel_for(m.n_nodes(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto g = grad_h0.row(i);
            auto dst = out.row(i);
            for (std::size_t k = 0; k < m.d; ++k) dst[m.code(i, k)] += g[k];
            for (std::size_t v = 0; v < levels; ++v) dst[v] += g[m.d + v];
        }
    });
    return out;
}

// Result of the dynamic step-size update for one node.
//   boundaries  2^n + 1 values: [lo, midpoints of adjacent sorted scales, hi]
//   sorted_scales[p] = clamped original scale at index permutation[p]
//   steps[m] = boundaries[m+1] - boundaries[m]
// Codes remap through the inverse permutation: old code c becomes the p with
// permutation[p] = c.
struct StepUpdate {
    std::vector<double> boundaries;
    std::vector<double> sorted_scales;
    std::vector<std::size_t> permutation;
    std::vector<double> steps;
};

// Derives the updated quantization intervals from learned scales: clamp the
// scales into the open range, sort ascending (stable, ties by original
// index), and place boundaries at midpoints between adjacent sorted scales.
// Steps are non-negative and sum to hi - lo by telescoping.
inline StepUpdate update_steps(std::span<const double> scale_row, double lo, double hi) {
    if (!(lo < hi)) throw InputError("update_steps: need lo < hi");
    const std::size_t levels = scale_row.size();
    if (levels == 0) throw InputError("update_steps: empty scale row");

    const double inner_lo = std::nextafter(lo, std::numeric_limits<double>::infinity());
    const double inner_hi = std::nextafter(hi, -std::numeric_limits<double>::infinity());

    StepUpdate r;
    r.sorted_scales.resize(levels);
    r.permutation.resize(levels);
    std::iota(r.permutation.begin(), r.permutation.end(), std::size_t{0});
    std::vector<double> clamped(levels);
    for (std::size_t v = 0; v < levels; ++v)
        clamped[v] = std::clamp(scale_row[v], inner_lo, inner_hi);
    std::stable_sort(r.permutation.begin(), r.permutation.end(),
                     [&](std::size_t a, std::size_t b) { return clamped[a] < clamped[b]; });
    for (std::size_t p = 0; p < levels; ++p) r.sorted_scales[p] = clamped[r.permutation[p]];

    r.boundaries.resize(levels + 1);
    r.boundaries.front() = lo;
    r.boundaries.back() = hi;
    for (std::size_t m = 1; m < levels; ++m)
        r.boundaries[m] = (r.sorted_scales[m - 1] + r.sorted_scales[m]) / 2.0;

    r.steps.resize(levels);
    for (std::size_t m = 0; m < levels; ++m)
        r.steps[m] = r.boundaries[m + 1] - r.boundaries[m];
    return r;
}

namespace detail {

// Interval index of x for the given boundaries: right-open intervals with a
// closed top interval. Monotone non-decreasing in x; an empty (zero-width)
// interval captures no point.
inline std::uint8_t bin_value(std::span<const double> boundaries, double x) {
    auto first = boundaries.begin() + 1;
    auto last = boundaries.end() - 1;
    return static_cast<std::uint8_t>(std::upper_bound(first, last, x) - first);
}

}  // namespace detail

struct RauOptions {
    // When set, re-binning ignores learned step sizes and uses a uniform grid
    // over the expanded range (the initial-step ablation).
    bool uniform_grid = false;
};

// Relational aggregation-based update of the codes: quantize the neighbor
// mean of the dequantized table with the node's updated quantization
// function. The range expands (never shrinks) to cover both the aggregated
// values and all scales; scales themselves are unchanged.
inline QuantizedModel requantize_rau(const InteractionGraph& graph, const QuantizedModel& m,
                                     RauOptions opts = {}) {
    if (m.n_nodes() != graph.n_nodes())
        throw InputError("requantize_rau: model/graph node count mismatch");
    const Matrix agg = neighbor_mean(graph, dequantize(m));
    const std::size_t levels = m.n_levels();

    QuantizedModel out = m;
    parallel_for(m.n_nodes(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto arow = agg.row(i);
            auto srow = m.scales.row(i);
            const auto [mn_it, mx_it] = std::minmax_element(arow.begin(), arow.end());
            double lo = std::min(*mn_it, srow.front());
            double hi = std::max(*mx_it, srow.back());
            if (lo == hi) {
                lo -= 1e-6;
                hi += 1e-6;
            }
            // keep scales strictly inside the stored range
            if (lo == srow.front())
                lo = std::nextafter(lo, -std::numeric_limits<double>::infinity());
            if (hi == srow.back())
                hi = std::nextafter(hi, std::numeric_limits<double>::infinity());
            out.range_lo[i] = lo;
            out.range_hi[i] = hi;

            std::vector<double> boundaries;
            if (opts.uniform_grid) {
                boundaries.resize(levels + 1);
                const double step = (hi - lo) / static_cast<double>(levels);
                for (std::size_t b = 0; b <= levels; ++b)
                    boundaries[b] = lo + static_cast<double>(b) * step;
                boundaries.back() = hi;
            } else {
                boundaries = update_steps(srow, lo, hi).boundaries;
            }
            for (std::size_t k = 0; k < m.d; ++k)
                out.code(i, k) = detail::bin_value(boundaries, arow[k]);
        }
    });
    return out;
}

// Restores canonical form after gradient steps: sort each scale row
// ascending (stable) and remap codes through the sort permutation, so
// dequantize is bit-identical before and after. Idempotent.
inline void canonicalize(QuantizedModel& m) {
    const std::size_t levels = m.n_levels();
    parallel_for(m.n_nodes(), [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> perm(levels), inverse(levels);
        std::vector<double> sorted(levels);
        for (std::size_t i = begin; i < end; ++i) {
            auto srow = m.scales.row(i);
            if (std::is_sorted(srow.begin(), srow.end())) continue;
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            std::stable_sort(perm.begin(), perm.end(),
                             [&](std::size_t a, std::size_t b) { return srow[a] < srow[b]; });
            for (std::size_t p = 0; p < levels; ++p) {
                sorted[p] = srow[perm[p]];
                inverse[perm[p]] = p;
            }
            std::copy(sorted.begin(), sorted.end(), srow.begin());
            for (std::size_t k = 0; k < m.d; ++k)
                m.code(i, k) = static_cast<std::uint8_t>(inverse[m.code(i, k)]);
        }
    });
}

}  // namespace gnaq
