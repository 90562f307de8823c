#include <catch2/catch_amalgamated.hpp>

#include "gnaq/graph.hpp"
#include "support/synthetic.hpp"

using namespace gnaq;

TEST_CASE("build_graph single edge", "[graph]") {
    auto g = build_graph({{0, 0}}, 1, 1);
    REQUIRE(g.n_nodes() == 2);
    REQUIRE(g.degree == std::vector<std::size_t>{1, 1});
    REQUIRE(g.items_of(0).size() == 1);
    REQUIRE(g.users_of(0).size() == 1);
}

TEST_CASE("build_graph deduplicates", "[graph]") {
    auto g = build_graph({{0, 0}, {0, 0}}, 1, 1);
    REQUIRE(g.edges.size() == 1);
    REQUIRE(g.degree == std::vector<std::size_t>{1, 1});
}

TEST_CASE("build_graph cross edges give unit degrees", "[graph]") {
    auto g = build_graph({{0, 1}, {1, 0}}, 2, 2);
    for (std::size_t v = 0; v < 4; ++v) REQUIRE(g.degree[v] == 1);
}

TEST_CASE("build_graph rejects bad input", "[graph]") {
    REQUIRE_THROWS_AS(build_graph({}, 1, 1), InputError);
    REQUIRE_THROWS_AS(build_graph({{0, 5}}, 1, 1), InputError);
    REQUIRE_THROWS_AS(build_graph({{3, 0}}, 1, 1), InputError);
}

TEST_CASE("build_graph transpose consistency", "[graph]") {
    Rng rng(7);
    auto edges = testsupport::random_edges(rng, 12, 9, 0.3);
    auto g = build_graph(edges, 12, 9);
    std::size_t forward = 0;
    for (std::uint32_t u = 0; u < 12; ++u) {
        for (std::uint32_t i : g.items_of(u)) {
            auto users = g.users_of(i);
            REQUIRE(std::binary_search(users.begin(), users.end(), u));
            ++forward;
        }
    }
    REQUIRE(forward == g.edges.size());
    std::size_t reverse = 0;
    for (std::uint32_t i = 0; i < 9; ++i) reverse += g.users_of(i).size();
    REQUIRE(reverse == g.edges.size());
}

TEST_CASE("propagate two-node worked example", "[graph]") {
    auto g = build_graph({{0, 0}}, 1, 1);
    Matrix h0(2, 2);
    h0(0, 0) = 1.0;
    h0(1, 1) = 1.0;
    auto state = propagate(g, h0, 1);
    REQUIRE(state.layers.size() == 2);
    for (std::size_t r = 0; r < 2; ++r)
        for (std::size_t c = 0; c < 2; ++c)
            REQUIRE(state.averaged(r, c) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("propagate isolated node halves its row at L=1", "[graph]") {
    // item 1 is isolated
    auto g = build_graph({{0, 0}}, 1, 2);
    Matrix h0(3, 1);
    h0(0, 0) = 2.0;
    h0(1, 0) = 4.0;
    h0(2, 0) = 6.0;
    auto state = propagate(g, h0, 1);
    REQUIRE(state.averaged(2, 0) == Catch::Approx(3.0).margin(1e-15));
}

TEST_CASE("propagate input validation", "[graph]") {
    auto g = build_graph({{0, 0}}, 1, 1);
    REQUIRE_THROWS_AS(propagate(g, Matrix(3, 2), 1), InputError);
    REQUIRE_THROWS_AS(propagate(g, Matrix(2, 2), 0), InputError);
}

TEST_CASE("propagate matches dense oracle on random graphs", "[graph]") {
    Rng rng(1234);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n_users = 1 + rng_below(rng, 25);
        const std::size_t n_items = 1 + rng_below(rng, 24);
        const std::size_t layers = 1 + rng_below(rng, 4);
        auto edges = testsupport::random_edges(rng, n_users, n_items, 0.2);
        auto g = build_graph(edges, n_users, n_items);
        Matrix h0 = testsupport::random_matrix(rng, g.n_nodes(), 3);
        auto state = propagate(g, h0, layers);
        Matrix oracle = testsupport::dense_averaged(g, h0, layers);
        REQUIRE(testsupport::max_abs_diff(state.averaged, oracle) <= 1e-10);
    }
}

TEST_CASE("backpropagate two-node worked example", "[graph]") {
    auto g = build_graph({{0, 0}}, 1, 1);
    Matrix grad(2, 2);
    grad(0, 0) = 1.0;
    Matrix out = backpropagate(g, grad, 1);
    REQUIRE(out(0, 0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(out(0, 1) == Catch::Approx(0.0).margin(1e-15));
    REQUIRE(out(1, 0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(out(1, 1) == Catch::Approx(0.0).margin(1e-15));
}

TEST_CASE("backpropagate of zero is zero", "[graph]") {
    Rng rng(5);
    auto g = build_graph(testsupport::random_edges(rng, 6, 7, 0.3), 6, 7);
    Matrix out = backpropagate(g, Matrix(g.n_nodes(), 4), 2);
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) REQUIRE(out(r, c) == 0.0);
}

TEST_CASE("adjoint identity on random graphs", "[graph]") {
    Rng rng(99);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n_users = 2 + rng_below(rng, 15);
        const std::size_t n_items = 2 + rng_below(rng, 15);
        const std::size_t layers = 1 + rng_below(rng, 4);
        auto g = build_graph(testsupport::random_edges(rng, n_users, n_items, 0.25),
                             n_users, n_items);
        Matrix x = testsupport::random_matrix(rng, g.n_nodes(), 3);
        Matrix grad = testsupport::random_matrix(rng, g.n_nodes(), 3);

        Matrix fwd = propagate(g, x, layers).averaged;
        Matrix adj = backpropagate(g, grad, layers);
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t r = 0; r < x.rows(); ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) {
                lhs += adj(r, c) * x(r, c);
                rhs += grad(r, c) * fwd(r, c);
            }
        REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-10).margin(1e-12));
    }
}

TEST_CASE("neighbor_mean basics", "[graph]") {
    // user 0 connects to items 0 and 1
    auto g = build_graph({{0, 0}, {0, 1}}, 1, 2);
    Matrix t(3, 2);
    t(1, 0) = 1.0;  // item 0 row [1, 0]
    t(2, 1) = 1.0;  // item 1 row [0, 1]
    Matrix out = neighbor_mean(g, t);
    REQUIRE(out(0, 0) == Catch::Approx(0.5).margin(1e-15));
    REQUIRE(out(0, 1) == Catch::Approx(0.5).margin(1e-15));
    // single-neighbor identity: items see the user row
    REQUIRE(out(1, 0) == t(0, 0));
    REQUIRE(out(2, 1) == t(0, 1));
}

TEST_CASE("neighbor_mean isolated node keeps its row", "[graph]") {
    auto g = build_graph({{0, 0}}, 1, 2);
    Matrix t(3, 2);
    t(2, 0) = 3.0;
    t(2, 1) = 7.0;
    Matrix out = neighbor_mean(g, t);
    REQUIRE(out(2, 0) == 3.0);
    REQUIRE(out(2, 1) == 7.0);
}

TEST_CASE("neighbor_mean preserves constant tables", "[graph]") {
    Rng rng(11);
    auto g = build_graph(testsupport::random_edges(rng, 8, 6, 0.4), 8, 6);
    Matrix t(g.n_nodes(), 3, 2.5);
    Matrix out = neighbor_mean(g, t);
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c)
            REQUIRE(out(r, c) == Catch::Approx(2.5).margin(1e-12));
}
