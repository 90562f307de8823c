#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "gnaq/errors.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/parallel.hpp"

namespace gnaq {

struct Edge {
    std::uint32_t user;
    std::uint32_t item;
    friend bool operator==(const Edge&, const Edge&) = default;
    friend auto operator<=>(const Edge& a, const Edge& b) {
        return std::pair(a.user, a.item) <=> std::pair(b.user, b.item);
    }
};

// Bipartite user-item interaction graph. Nodes share one index space:
// users occupy [0, n_users), item i maps to node n_users + i.
// Immutable after build_graph.
class InteractionGraph {
public:
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<Edge> edges;  // deduplicated, sorted by (user, item)

    // CSR user -> items and item -> users (both sides sorted ascending)
    std::vector<std::size_t> user_offsets;
    std::vector<std::uint32_t> user_items;
    std::vector<std::size_t> item_offsets;
    std::vector<std::uint32_t> item_users;

    std::vector<std::size_t> degree;  // over all N = n_users + n_items nodes

    std::size_t n_nodes() const { return n_users + n_items; }
    std::size_t item_node(std::uint32_t item) const { return n_users + item; }

    std::span<const std::uint32_t> items_of(std::uint32_t user) const {
        return {user_items.data() + user_offsets[user],
                user_offsets[user + 1] - user_offsets[user]};
    }
    std::span<const std::uint32_t> users_of(std::uint32_t item) const {
        return {item_users.data() + item_offsets[item],
                item_offsets[item + 1] - item_offsets[item]};
    }
};

inline InteractionGraph build_graph(std::vector<Edge> interactions, std::size_t n_users,
                                    std::size_t n_items) {
    if (interactions.empty()) throw InputError("build_graph: empty edge list");
    for (const Edge& e : interactions) {
        if (e.user >= n_users || e.item >= n_items)
            throw InputError("build_graph: edge (" + std::to_string(e.user) + ", " +
                             std::to_string(e.item) + ") out of range for " +
                             std::to_string(n_users) + " users x " + std::to_string(n_items) +
                             " items");
    }

    std::sort(interactions.begin(), interactions.end());
    interactions.erase(std::unique(interactions.begin(), interactions.end()),
                       interactions.end());

    InteractionGraph g;
    g.n_users = n_users;
    g.n_items = n_items;
    g.edges = std::move(interactions);

    g.user_offsets.assign(n_users + 1, 0);
    g.item_offsets.assign(n_items + 1, 0);
    for (const Edge& e : g.edges) {
        ++g.user_offsets[e.user + 1];
        ++g.item_offsets[e.item + 1];
    }
    for (std::size_t u = 0; u < n_users; ++u) g.user_offsets[u + 1] += g.user_offsets[u];
    for (std::size_t i = 0; i < n_items; ++i) g.item_offsets[i + 1] += g.item_offsets[i];

    g.user_items.resize(g.edges.size());
    g.item_users.resize(g.edges.size());
    std::vector<std::size_t> ucur(g.user_offsets.begin(), g.user_offsets.end() - 1);
    std::vector<std::size_t> icur(g.item_offsets.begin(), g.item_offsets.end() - 1);
    for (const Edge& e : g.edges) {
        g.user_items[ucur[e.user]++] = e.item;
        g.item_users[icur[e.item]++] = e.user;
    }

    g.degree.assign(g.n_nodes(), 0);
    for (std::size_t u = 0; u < n_users; ++u)
        g.degree[u] = g.user_offsets[u + 1] - g.user_offsets[u];
    for (std::size_t i = 0; i < n_items; ++i)
        g.degree[n_users + i] = g.item_offsets[i + 1] - g.item_offsets[i];
    return g;
}

// Layer stack H(0)..H(L) plus the layer-averaged table H.
struct PropagationState {
    std::vector<Matrix> layers;
    Matrix averaged;
};

namespace detail {

// inv_sqrt_deg[v] = deg(v)^(-1/2), with the zero-degree convention that
// isolated nodes neither send nor receive (factor 0).
inline std::vector<double> inv_sqrt_degrees(const InteractionGraph& g) {
    std::vector<double> isd(g.n_nodes());
    for (std::size_t v = 0; v < g.n_nodes(); ++v)
        isd[v] = g.degree[v] == 0 ? 0.0 : 1.0 / std::sqrt(static_cast<double>(g.degree[v]));
    return isd;
}

// out = D^(-1/2) A D^(-1/2) * in, where A is the symmetric bipartite
// adjacency assembled from the interaction matrix.
inline void spmm_normalized(const InteractionGraph& g, const std::vector<double>& isd,
                            const Matrix& in, Matrix& out) {
    const std::size_t w = in.cols();
    parallel_for(g.n_users, [&](std::size_t begin, std::size_t end) {
        for (std::size_t u = begin; u < end; ++u) {
            auto dst = out.row(u);
            std::fill(dst.begin(), dst.end(), 0.0);
            const double su = isd[u];
            if (su == 0.0) continue;
            for (std::uint32_t item : g.items_of(static_cast<std::uint32_t>(u)))
                axpy(su * isd[g.item_node(item)], in.row(g.item_node(item)), dst);
        }
    });
    parallel_for(g.n_items, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            auto dst = out.row(g.n_users + i);
            std::fill(dst.begin(), dst.end(), 0.0);
            const double si = isd[g.n_users + i];
            if (si == 0.0) continue;
            for (std::uint32_t user : g.users_of(static_cast<std::uint32_t>(i)))
                axpy(si * isd[user], in.row(user), dst);
        }
    });
    (void)w;
}

}  // namespace detail

// LightGCN-style propagation: layers[l+1] = D^(-1/2) A D^(-1/2) layers[l],
// averaged = mean(layers[0..L]).
inline PropagationState propagate(const InteractionGraph& graph, const Matrix& h0,
                                  std::size_t layer_count) {
    if (h0.rows() != graph.n_nodes())
        throw InputError("propagate: h0 has " + std::to_string(h0.rows()) + " rows, graph has " +
                         std::to_string(graph.n_nodes()) + " nodes");
    if (layer_count < 1) throw InputError("propagate: layer count must be >= 1");

    const std::vector<double> isd = detail::inv_sqrt_degrees(graph);

    PropagationState state;
    state.layers.reserve(layer_count + 1);
    state.layers.push_back(h0);
    for (std::size_t l = 0; l < layer_count; ++l) {
        Matrix next(h0.rows(), h0.cols());
        detail::spmm_normalized(graph, isd, state.layers.back(), next);
        state.layers.push_back(std::move(next));
    }

    state.averaged = Matrix(h0.rows(), h0.cols());
    const double inv = 1.0 / static_cast<double>(layer_count + 1);
    parallel_for(h0.rows(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t r = begin; r < end; ++r) {
            auto dst = state.averaged.row(r);
            for (const Matrix& layer : state.layers) axpy(inv, layer.row(r), dst);
        }
    });
    return state;
}

// Adjoint of h0 -> propagate(h0).averaged. The normalized adjacency is
// symmetric and so is the layer average, so the adjoint is forward
// propagation applied to the incoming gradient.
inline Matrix backpropagate(const InteractionGraph& graph, const Matrix& grad_h,
                            std::size_t layer_count) {
    return propagate(graph, grad_h, layer_count).averaged;
}

// Row i = mean of neighbor rows; isolated nodes keep their own row.
inline Matrix neighbor_mean(const InteractionGraph& graph, const Matrix& table) {
    if (table.rows() != graph.n_nodes())
        throw InputError("neighbor_mean: table has " + std::to_string(table.rows()) +
                         " rows, graph has " + std::to_string(graph.n_nodes()) + " nodes");
    Matrix out(table.rows(), table.cols());
    parallel_for(graph.n_users, [&](std::size_t begin, std::size_t end) {
        for (std::size_t u = begin; u < end; ++u) {
            auto dst = out.row(u);
            auto items = graph.items_of(static_cast<std::uint32_t>(u));
            if (items.empty()) {
                std::copy(table.row(u).begin(), table.row(u).end(), dst.begin());
                continue;
            }
            for (std::uint32_t item : items) axpy(1.0, table.row(graph.item_node(item)), dst);
            const double inv = 1.0 / static_cast<double>(items.size());
            for (double& v : dst) v *= inv;
        }
    });
    parallel_for(graph.n_items, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const std::size_t node = graph.n_users + i;
            auto dst = out.row(node);
            auto users = graph.users_of(static_cast<std::uint32_t>(i));
            if (users.empty()) {
                std::copy(table.row(node).begin(), table.row(node).end(), dst.begin());
                continue;
            }
            for (std::uint32_t user : users) axpy(1.0, table.row(user), dst);
            const double inv = 1.0 / static_cast<double>(users.size());
            for (double& v : dst) v *= inv;
        }
    });
    return out;
}

}  // namespace gnaq
