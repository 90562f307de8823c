#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "gnaq/embedding.hpp"
#include "gnaq/errors.hpp"
#include "gnaq/graph.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/parallel.hpp"

namespace gnaq {

// Top-K items for user u by descending score over all items, excluding u's
// training items. Ties break toward the lower item index. K past the number
// of rankable items clamps.
inline std::vector<std::uint32_t> rank_topk(const Matrix& h,
                                            const InteractionGraph& train_graph,
                                            std::uint32_t u, std::size_t k) {
    if (u >= train_graph.n_users) throw InputError("rank_topk: user index out of range");
    const std::size_t n_items = train_graph.n_items;
    auto train_items = train_graph.items_of(u);

    std::vector<std::uint32_t> cand;
    cand.reserve(n_items - train_items.size());
    for (std::uint32_t i = 0; i < n_items; ++i)
        if (!std::binary_search(train_items.begin(), train_items.end(), i))
            cand.push_back(i);

    std::vector<double> s(n_items);
    for (std::uint32_t i : cand) s[i] = score(h, train_graph.n_users, u, i);

    k = std::min(k, cand.size());
    auto better = [&](std::uint32_t a, std::uint32_t b) {
        if (s[a] != s[b]) return s[a] > s[b];
        return a < b;
    };
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), better);
    cand.resize(k);
    return cand;
}

// |topk ∩ test_pos| / |test_pos|. test_pos must be sorted ascending.
inline double recall_at_k(std::span<const std::uint32_t> topk,
                          std::span<const std::uint32_t> test_pos) {
    if (test_pos.empty()) throw InputError("recall_at_k: empty test positives");
    std::size_t hits = 0;
    for (std::uint32_t i : topk)
        if (std::binary_search(test_pos.begin(), test_pos.end(), i)) ++hits;
    return static_cast<double>(hits) / static_cast<double>(test_pos.size());
}

// DCG over 1-based ranks r of relevant items (1/log2(r+1)), normalized by
// the ideal DCG of min(K, |test_pos|) relevant items at the top ranks.
inline double ndcg_at_k(std::span<const std::uint32_t> topk,
                        std::span<const std::uint32_t> test_pos, std::size_t k) {
    if (test_pos.empty()) throw InputError("ndcg_at_k: empty test positives");
    double dcg = 0.0;
    for (std::size_t r = 1; r <= topk.size(); ++r)
        if (std::binary_search(test_pos.begin(), test_pos.end(), topk[r - 1]))
            dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    double idcg = 0.0;
    const std::size_t ideal = std::min(k, test_pos.size());
    for (std::size_t r = 1; r <= ideal; ++r)
        idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
    return dcg / idcg;
}

// Averages are over users with at least one test positive.
struct EvalReport {
    std::map<std::size_t, double> recall;
    std::map<std::size_t, double> ndcg;
    std::size_t n_users_evaluated = 0;
};

inline EvalReport evaluate(const Matrix& h, const InteractionGraph& train_graph,
                           const std::vector<std::vector<std::uint32_t>>& test_positives,
                           std::span<const std::size_t> ks) {
    if (ks.empty()) throw InputError("evaluate: no K values");
    if (test_positives.size() != train_graph.n_users)
        throw InputError("evaluate: test positives sized for a different user count");

    std::vector<std::uint32_t> users;
    for (std::uint32_t u = 0; u < train_graph.n_users; ++u)
        if (!test_positives[u].empty()) users.push_back(u);
    if (users.empty()) throw InputError("evaluate: empty test set");

    const std::size_t k_max = *std::max_element(ks.begin(), ks.end());
    // per-user metric rows, reduced serially below so the result does not
    // depend on thread count
    Matrix rec(users.size(), ks.size());
    Matrix ndc(users.size(), ks.size());
    parallel_for(users.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t idx = begin; idx < end; ++idx) {
            const std::uint32_t u = users[idx];
            const auto& pos = test_positives[u];
            auto topk = rank_topk(h, train_graph, u, k_max);
            for (std::size_t j = 0; j < ks.size(); ++j) {
                const std::size_t klen = std::min(ks[j], topk.size());
                std::span<const std::uint32_t> head(topk.data(), klen);
                rec(idx, j) = recall_at_k(head, pos);
                ndc(idx, j) = ndcg_at_k(head, pos, ks[j]);
            }
        }
    });

    EvalReport report;
    report.n_users_evaluated = users.size();
    for (std::size_t j = 0; j < ks.size(); ++j) {
        double rsum = 0.0, nsum = 0.0;
        for (std::size_t idx = 0; idx < users.size(); ++idx) {
            rsum += rec(idx, j);
            nsum += ndc(idx, j);
        }
        report.recall[ks[j]] = rsum / static_cast<double>(users.size());
        report.ndcg[ks[j]] = nsum / static_cast<double>(users.size());
    }
    return report;
}

}  // namespace gnaq
