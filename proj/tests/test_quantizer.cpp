#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "gnaq/quantizer.hpp"
#include "support/synthetic.hpp"

using namespace gnaq;

namespace {

// hand-built model: one scale row replicated per node
QuantizedModel make_model(std::size_t n_bits, std::vector<std::vector<double>> scale_rows,
                          std::vector<std::vector<std::uint8_t>> code_rows, double lo,
                          double hi) {
    QuantizedModel m;
    m.n_bits = n_bits;
    m.d = code_rows[0].size();
    m.scales = Matrix(scale_rows.size(), std::size_t{1} << n_bits);
    for (std::size_t i = 0; i < scale_rows.size(); ++i)
        std::copy(scale_rows[i].begin(), scale_rows[i].end(), m.scales.row(i).begin());
    for (const auto& row : code_rows)
        m.codes.insert(m.codes.end(), row.begin(), row.end());
    m.range_lo.assign(scale_rows.size(), lo);
    m.range_hi.assign(scale_rows.size(), hi);
    return m;
}

}  // namespace

TEST_CASE("init_quantizer worked example", "[quantizer]") {
    Matrix e(1, 4);
    e(0, 0) = 0.0;
    e(0, 1) = 0.25;
    e(0, 2) = 0.5;
    e(0, 3) = 1.0;
    auto m = init_quantizer(e, 2);
    REQUIRE(m.n_bits == 2);
    REQUIRE(m.d == 4);
    REQUIRE(m.codes == std::vector<std::uint8_t>{0, 1, 2, 3});  // max value closes the top bin
    REQUIRE(m.scales(0, 0) == Catch::Approx(0.125).margin(1e-15));
    REQUIRE(m.scales(0, 1) == Catch::Approx(0.375).margin(1e-15));
    REQUIRE(m.scales(0, 2) == Catch::Approx(0.625).margin(1e-15));
    REQUIRE(m.scales(0, 3) == Catch::Approx(0.875).margin(1e-15));
    REQUIRE(m.range_lo[0] == 0.0);
    REQUIRE(m.range_hi[0] == 1.0);
    m.check_invariants();
}

TEST_CASE("init_quantizer constant row degenerates cleanly", "[quantizer]") {
    Matrix e(1, 3);
    e.fill(0.7);
    auto m = init_quantizer(e, 2);
    REQUIRE(m.codes == std::vector<std::uint8_t>{0, 0, 0});
    for (std::size_t v = 0; v < 4; ++v) REQUIRE(m.scales(0, v) == 0.7);
    REQUIRE(m.range_lo[0] == Catch::Approx(0.7 - 1e-6).margin(1e-12));
    REQUIRE(m.range_hi[0] == Catch::Approx(0.7 + 1e-6).margin(1e-12));
    m.check_invariants();
    REQUIRE(dequantize(m)(0, 1) == 0.7);
}

TEST_CASE("init_quantizer input validation", "[quantizer]") {
    Matrix e(1, 2);
    REQUIRE_THROWS_AS(init_quantizer(e, 0), InputError);
    REQUIRE_THROWS_AS(init_quantizer(e, 9), InputError);
    REQUIRE_THROWS_AS(init_quantizer(Matrix(), 2), InputError);
    e(0, 0) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE_THROWS_AS(init_quantizer(e, 2), InputError);
}

TEST_CASE("quantization error is at most half a gap", "[quantizer]") {
    Rng rng(21);
    for (std::size_t n_bits : {1u, 2u, 3u, 5u, 8u}) {
        auto e = testsupport::random_matrix(rng, 30, 16, 2.0);
        auto m = init_quantizer(e, n_bits);
        m.check_invariants();
        auto deq = dequantize(m);
        for (std::size_t i = 0; i < e.rows(); ++i) {
            auto row = e.row(i);
            const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
            const double gap = (*mx - *mn) / static_cast<double>(m.n_levels());
            for (std::size_t k = 0; k < e.cols(); ++k)
                REQUIRE(std::abs(deq(i, k) - e(i, k)) <= gap / 2.0 + 1e-12);
        }
    }
}

TEST_CASE("dequantize gathers scales through codes", "[quantizer]") {
    auto m = make_model(2, {{0.125, 0.375, 0.625, 0.875}}, {{0, 3}}, 0.0, 1.0);
    auto deq = dequantize(m);
    REQUIRE(deq(0, 0) == 0.125);
    REQUIRE(deq(0, 1) == 0.875);
}

TEST_CASE("extend_embedding appends the scale columns", "[quantizer]") {
    Rng rng(5);
    auto e = testsupport::random_matrix(rng, 7, 5, 1.0);
    auto m = init_quantizer(e, 2);
    auto ext = extend_embedding(m);
    REQUIRE(ext.rows() == 7);
    REQUIRE(ext.cols() == 5 + 4);
    auto deq = dequantize(m);
    for (std::size_t i = 0; i < 7; ++i) {
        for (std::size_t k = 0; k < 5; ++k) REQUIRE(ext(i, k) == deq(i, k));
        for (std::size_t v = 0; v < 4; ++v) REQUIRE(ext(i, 5 + v) == m.scales(i, v));
    }
}

TEST_CASE("grad_scales hand example", "[quantizer]") {
    // d=2, both codes 1: scale 1 collects both embedding grads plus its own column
    auto m = make_model(2, {{0.1, 0.2, 0.3, 0.4}}, {{1, 1}}, 0.0, 1.0);
    Matrix g(1, 2 + 4);
    g(0, 0) = 2.0;   // a
    g(0, 1) = 5.0;   // b
    g(0, 3) = 11.0;  // c, the appended column of scale 1
    g(0, 4) = 0.5;   // appended column of scale 2
    auto gs = grad_scales(g, m);
    REQUIRE(gs.rows() == 1);
    REQUIRE(gs.cols() == 4);
    REQUIRE(gs(0, 0) == 0.0);
    REQUIRE(gs(0, 1) == Catch::Approx(18.0).margin(1e-15));  // a + b + c
    REQUIRE(gs(0, 2) == 0.5);
    REQUIRE(gs(0, 3) == 0.0);
}

TEST_CASE("grad_scales matches finite differences", "[quantizer]") {
    // loss = 0.5 * ||extend(m)||^2, so dL/dX = X and dL/dscale via grad_scales
    Rng rng(33);
    auto e = testsupport::random_matrix(rng, 6, 5, 1.0);
    auto m = init_quantizer(e, 2);
    auto loss_of = [&](const QuantizedModel& model) {
        auto ext = extend_embedding(model);
        double s = 0.0;
        for (double x : ext.data()) s += 0.5 * x * x;
        return s;
    };
    auto analytic = grad_scales(extend_embedding(m), m);
    const double h = 1e-6;
    for (std::size_t i = 0; i < m.n_nodes(); ++i) {
        for (std::size_t v = 0; v < m.n_levels(); ++v) {
            QuantizedModel up = m, dn = m;
            up.scales(i, v) += h;
            dn.scales(i, v) -= h;
            const double fd = (loss_of(up) - loss_of(dn)) / (2.0 * h);
            REQUIRE(analytic(i, v) == Catch::Approx(fd).epsilon(1e-4).margin(1e-8));
        }
    }
}

TEST_CASE("grad_scales rejects wrong shapes", "[quantizer]") {
    auto m = make_model(2, {{0.1, 0.2, 0.3, 0.4}}, {{1, 1}}, 0.0, 1.0);
    REQUIRE_THROWS_AS(grad_scales(Matrix(1, 2), m), InputError);
}

TEST_CASE("update_steps worked example", "[quantizer]") {
    std::vector<double> scales = {0.1, 0.2, 0.5, 0.9};
    auto r = update_steps(scales, 0.0, 1.0);
    const std::vector<double> want_b = {0.0, 0.15, 0.35, 0.7, 1.0};
    const std::vector<double> want_s = {0.15, 0.2, 0.35, 0.3};
    REQUIRE(r.boundaries.size() == 5);
    for (std::size_t k = 0; k < 5; ++k)
        REQUIRE(std::abs(r.boundaries[k] - want_b[k]) <= 1e-15);
    for (std::size_t k = 0; k < 4; ++k)
        REQUIRE(std::abs(r.steps[k] - want_s[k]) <= 1e-15);
    REQUIRE(r.permutation == std::vector<std::size_t>{0, 1, 2, 3});
}

TEST_CASE("update_steps on freshly initialized scales gives uniform steps", "[quantizer]") {
    Matrix e(1, 8);
    for (std::size_t k = 0; k < 8; ++k) e(0, k) = static_cast<double>(k) / 7.0;
    auto m = init_quantizer(e, 2);
    auto r = update_steps(m.scales.row(0), m.range_lo[0], m.range_hi[0]);
    const double gap = 1.0 / 4.0;
    for (double s : r.steps) REQUIRE(s == Catch::Approx(gap).margin(1e-12));
}

TEST_CASE("update_steps sorts with stable ties and clamps outliers", "[quantizer]") {
    // scales out of order with a duplicate; one value outside the range
    std::vector<double> scales = {0.5, 0.2, 0.5, 1.7};
    auto r = update_steps(scales, 0.0, 1.0);
    REQUIRE(r.permutation == std::vector<std::size_t>{1, 0, 2, 3});  // ties keep input order
    REQUIRE(r.sorted_scales[0] == 0.2);
    REQUIRE(r.sorted_scales[1] == 0.5);
    REQUIRE(r.sorted_scales[2] == 0.5);
    REQUIRE(r.sorted_scales[3] < 1.0);  // clamped strictly inside
    REQUIRE(r.steps[1] >= 0.0);
    // duplicate scales produce a zero-width middle interval
    REQUIRE(r.boundaries[2] == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("update_steps partitions the range", "[quantizer]") {
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t levels = std::size_t{1} << (1 + rng_below(rng, 3));
        std::vector<double> scales(levels);
        for (auto& s : scales) s = rng_unit(rng) * 4.0 - 2.0;
        const double lo = -2.5, hi = 2.5;
        auto r = update_steps(scales, lo, hi);
        REQUIRE(std::is_sorted(r.boundaries.begin(), r.boundaries.end()));
        REQUIRE(std::is_sorted(r.sorted_scales.begin(), r.sorted_scales.end()));
        double sum = 0.0;
        for (double s : r.steps) {
            REQUIRE(s >= 0.0);
            sum += s;
        }
        REQUIRE(sum == Catch::Approx(hi - lo).margin(1e-9));
        // each sorted scale sits inside its own interval
        for (std::size_t v = 0; v < levels; ++v) {
            REQUIRE(r.sorted_scales[v] >= r.boundaries[v]);
            REQUIRE(r.sorted_scales[v] <= r.boundaries[v + 1]);
        }
    }
}

TEST_CASE("binning is monotone with right-open intervals and a closed top", "[quantizer]") {
    std::vector<double> scales = {0.1, 0.2, 0.5, 0.9};
    auto r = update_steps(scales, 0.0, 1.0);
    // boundaries [0, 0.15, 0.35, 0.7, 1]
    REQUIRE(detail::bin_value(r.boundaries, 0.0) == 0);
    // exactly on an inner boundary belongs to the upper bin (right-open below)
    REQUIRE(detail::bin_value(r.boundaries, r.boundaries[1]) == 1);
    REQUIRE(detail::bin_value(r.boundaries, std::nextafter(r.boundaries[1], 0.0)) == 0);
    REQUIRE(detail::bin_value(r.boundaries, 0.34) == 1);
    REQUIRE(detail::bin_value(r.boundaries, 1.0) == 3);  // top interval closed

    std::uint8_t prev = 0;
    for (int k = 0; k <= 100000; ++k) {
        const double x = static_cast<double>(k) / 100000.0;
        const std::uint8_t b = detail::bin_value(r.boundaries, x);
        REQUIRE(b >= prev);
        prev = b;
    }
    REQUIRE(prev == 3);
}

TEST_CASE("zero-width intervals capture no point", "[quantizer]") {
    std::vector<double> scales = {0.5, 0.5, 0.5, 0.9};
    auto r = update_steps(scales, 0.0, 1.0);
    // boundaries [0, .5, .5, .7, 1]: intervals 0 and 1 share the point 0.5,
    // interval 1 is [0.5, 0.5) = empty, so 0.5 bins to interval 2
    std::vector<std::size_t> hits(4, 0);
    for (int k = 0; k <= 1000; ++k)
        ++hits[detail::bin_value(r.boundaries, static_cast<double>(k) / 1000.0)];
    REQUIRE(hits[1] == 0);
    REQUIRE(detail::bin_value(r.boundaries, 0.5) == 2);
}

TEST_CASE("requantize_rau is a fixed point when neighbors agree", "[quantizer]") {
    // one user, one item, identical scale rows and codes: the neighbor mean of
    // each node is its own dequantized row, so codes stay put
    auto m = make_model(2, {{0.1, 0.3, 0.6, 0.9}, {0.1, 0.3, 0.6, 0.9}},
                        {{0, 1, 2, 3}, {0, 1, 2, 3}}, 0.0, 1.0);
    auto g = build_graph({{0, 0}}, 1, 1);
    auto out = requantize_rau(g, m);
    out.check_invariants();
    REQUIRE(out.codes == m.codes);
    REQUIRE(testsupport::max_abs_diff(out.scales, m.scales) == 0.0);
}

TEST_CASE("requantize_rau worked one-user-one-item trace", "[quantizer]") {
    // item dequantizes to [0.5, 0.6, 0.7, 0.8]; the user's learned boundaries
    // push everything at or above 0.35 into the top bin
    auto m = make_model(2, {{0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7, 0.8}},
                        {{0, 0, 0, 0}, {0, 1, 2, 3}}, 0.05, 0.85);
    auto g = build_graph({{0, 0}}, 1, 1);

    auto learned = requantize_rau(g, m);
    learned.check_invariants();
    REQUIRE(std::vector<std::uint8_t>(learned.codes.begin(), learned.codes.begin() + 4) ==
            std::vector<std::uint8_t>{3, 3, 3, 3});
    // range expanded to cover the aggregated values and the scales
    REQUIRE(learned.range_lo[0] <= 0.1);
    REQUIRE(learned.range_hi[0] >= 0.8);

    // uniform grid over [~0.1, 0.8] has boundaries at 0.275, 0.45, 0.625:
    // [0.5, 0.6, 0.7, 0.8] bins to [2, 2, 3, 3]
    auto uniform = requantize_rau(g, m, {.uniform_grid = true});
    uniform.check_invariants();
    REQUIRE(std::vector<std::uint8_t>(uniform.codes.begin(), uniform.codes.begin() + 4) ==
            std::vector<std::uint8_t>{2, 2, 3, 3});
    // scales are never touched by either variant
    REQUIRE(testsupport::max_abs_diff(learned.scales, m.scales) == 0.0);
    REQUIRE(testsupport::max_abs_diff(uniform.scales, m.scales) == 0.0);
}

TEST_CASE("requantize_rau expands ranges and keeps invariants", "[quantizer]") {
    Rng rng(13);
    auto edges = testsupport::random_edges(rng, 15, 12, 0.25);
    auto g = build_graph(edges, 15, 12);
    auto e = testsupport::random_matrix(rng, g.n_nodes(), 6, 1.5);
    auto m = init_quantizer(e, 2);
    auto out = requantize_rau(g, m);
    out.check_invariants();
    REQUIRE(testsupport::max_abs_diff(out.scales, m.scales) == 0.0);
    for (std::size_t i = 0; i < m.n_nodes(); ++i) {
        REQUIRE(out.range_lo[i] < m.scales(i, 0));
        REQUIRE(out.range_hi[i] > m.scales(i, m.n_levels() - 1));
    }
}

TEST_CASE("requantize_rau rejects mismatched graph", "[quantizer]") {
    auto m = make_model(2, {{0.1, 0.3, 0.6, 0.9}}, {{0, 1, 2, 3}}, 0.0, 1.0);
    auto g = build_graph({{0, 0}}, 1, 1);  // 2 nodes, model has 1
    REQUIRE_THROWS_AS(requantize_rau(g, m), InputError);
}

TEST_CASE("canonicalize sorts scales and remaps codes", "[quantizer]") {
    auto m = make_model(1, {{0.9, 0.1}}, {{0, 1}}, 0.0, 1.0);
    auto before = dequantize(m);
    canonicalize(m);
    REQUIRE(m.scales(0, 0) == 0.1);
    REQUIRE(m.scales(0, 1) == 0.9);
    REQUIRE(m.codes == std::vector<std::uint8_t>{1, 0});
    REQUIRE(testsupport::max_abs_diff(before, dequantize(m)) == 0.0);
    m.check_invariants();
}

TEST_CASE("canonicalize preserves dequantize bit-exactly and is idempotent", "[quantizer]") {
    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        auto e = testsupport::random_matrix(rng, 10, 8, 1.0);
        auto m = init_quantizer(e, 3);
        // scramble each scale row with a random permutation, fixing codes
        for (std::size_t i = 0; i < m.n_nodes(); ++i) {
            std::vector<std::size_t> perm(m.n_levels());
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            for (std::size_t k = perm.size() - 1; k > 0; --k)
                std::swap(perm[k], perm[rng_below(rng, k + 1)]);
            std::vector<double> old(m.scales.row(i).begin(), m.scales.row(i).end());
            std::vector<std::size_t> inverse(perm.size());
            for (std::size_t p = 0; p < perm.size(); ++p) inverse[perm[p]] = p;
            for (std::size_t p = 0; p < perm.size(); ++p) m.scales(i, p) = old[perm[p]];
            for (std::size_t k = 0; k < m.d; ++k)
                m.code(i, k) = static_cast<std::uint8_t>(inverse[m.code(i, k)]);
        }
        auto before = dequantize(m);
        canonicalize(m);
        REQUIRE(testsupport::max_abs_diff(before, dequantize(m)) == 0.0);
        m.check_invariants();
        auto snapshot_scales = m.scales;
        auto snapshot_codes = m.codes;
        canonicalize(m);
        REQUIRE(testsupport::max_abs_diff(snapshot_scales, m.scales) == 0.0);
        REQUIRE(snapshot_codes == m.codes);
    }
}
