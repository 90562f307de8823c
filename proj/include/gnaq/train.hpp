#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "gnaq/adam.hpp"
#include "gnaq/dataset.hpp"
#include "gnaq/embedding.hpp"
#include "gnaq/errors.hpp"
#include "gnaq/graph.hpp"
#include "gnaq/losses.hpp"
#include "gnaq/matrix.hpp"
#include "gnaq/metrics.hpp"
#include "gnaq/quantizer.hpp"
#include "gnaq/rng.hpp"

namespace gnaq {

struct TrainConfig {
    std::size_t n_bits = 2;
    std::size_t d = 64;
    std::size_t layers = 3;
    double lambda_reg = 5e-4;
    double lr = 1e-3;
    std::size_t batch_size = 2048;
    std::size_t epochs = 50;
    std::size_t k_list = 10;  // rank-loss list length
    std::vector<std::size_t> eval_ks = {10, 20};
    std::uint64_t seed = 42;
    double validation_ratio = 0.1;  // slice of train edges used for checkpoints

    // ablation switches
    bool no_dqs = false;        // keep uniform steps when re-binning
    bool no_rau = false;        // never re-bin codes
    bool no_rank_loss = false;  // BPR only

    // lr = 0 is allowed (useful to isolate the re-binning passes)
    void validate() const {
        if (n_bits < 1 || n_bits > 8) throw InputError("config: n_bits must be in [1, 8]");
        if (d < 1) throw InputError("config: d must be positive");
        if (layers < 1) throw InputError("config: layers must be >= 1");
        if (!(lambda_reg >= 0.0)) throw InputError("config: lambda must be >= 0");
        if (!(lr >= 0.0)) throw InputError("config: learning rate must be >= 0");
        if (batch_size < 1) throw InputError("config: batch_size must be positive");
        if (k_list < 2) throw InputError("config: k_list must be >= 2");
        if (eval_ks.empty()) throw InputError("config: eval_ks must not be empty");
        for (std::size_t k : eval_ks)
            if (k < 1) throw InputError("config: eval K values must be positive");
        if (!(validation_ratio > 0.0 && validation_ratio < 1.0))
            throw InputError("config: validation_ratio must be in (0, 1)");
    }
};

// A sampled batch: BPR triples plus the ranking lists of the triple users.
struct SampledBatch {
    std::vector<BprTriple> triples;
    std::vector<LambdaList> lists;
};

namespace detail {

inline constexpr std::uint64_t SEED_TAG_EMBED = 1;
inline constexpr std::uint64_t SEED_TAG_VALIDATION = 2;
inline constexpr std::uint64_t SEED_TAG_SAMPLER = 3;

inline std::vector<std::uint32_t> distinct_users(const std::vector<BprTriple>& triples,
                                                 std::size_t n_users) {
    std::vector<char> seen(n_users, 0);
    std::vector<std::uint32_t> users;
    for (const BprTriple& t : triples) {
        if (seen[t.user]) continue;
        seen[t.user] = 1;
        users.push_back(t.user);
    }
    return users;
}

inline double row_norm_sq(std::span<const double> row) { return dot(row, row); }

// Accumulates score-level gradients into grad_h for one scored pair list.
// d score(u, i) / d h_u = h_i and vice versa.
inline void add_pair_grads(Matrix& grad_h, const Matrix& h, std::size_t n_users,
                           const std::vector<BprTriple>& triples, const BprResult& bpr) {
    for (std::size_t t = 0; t < triples.size(); ++t) {
        const std::size_t u = triples[t].user;
        const std::size_t p = n_users + triples[t].pos_item;
        const std::size_t n = n_users + triples[t].neg_item;
        axpy(bpr.grad_pos[t], h.row(p), grad_h.row(u));
        axpy(bpr.grad_pos[t], h.row(u), grad_h.row(p));
        axpy(bpr.grad_neg[t], h.row(n), grad_h.row(u));
        axpy(bpr.grad_neg[t], h.row(u), grad_h.row(n));
    }
}

}  // namespace detail

// Combined loss of one batch against full-precision embeddings, and its
// gradient with respect to every entry of E (optional). The regularizer
// covers the embedding rows of each triple occurrence.
inline LossBreakdown fp_batch_grad(const InteractionGraph& graph, const Matrix& e_table,
                                   const SampledBatch& batch, const TrainConfig& cfg,
                                   Matrix* grad_out) {
    const Matrix h = propagate(graph, e_table, cfg.layers).averaged;
    const std::size_t n_users = graph.n_users;

    std::vector<double> pos_scores(batch.triples.size()), neg_scores(batch.triples.size());
    double reg_norm_sq = 0.0;
    for (std::size_t t = 0; t < batch.triples.size(); ++t) {
        const BprTriple& tr = batch.triples[t];
        pos_scores[t] = score(h, n_users, tr.user, tr.pos_item);
        neg_scores[t] = score(h, n_users, tr.user, tr.neg_item);
        reg_norm_sq += detail::row_norm_sq(e_table.row(tr.user)) +
                       detail::row_norm_sq(e_table.row(n_users + tr.pos_item)) +
                       detail::row_norm_sq(e_table.row(n_users + tr.neg_item));
    }
    const BprResult bpr = bpr_loss(pos_scores, neg_scores, reg_norm_sq, cfg.lambda_reg);

    double rank_sum = 0.0;
    std::vector<LambdaResult> list_grads;
    list_grads.reserve(batch.lists.size());
    for (const LambdaList& list : batch.lists) {
        std::vector<double> s(list.items.size());
        for (std::size_t k = 0; k < list.items.size(); ++k)
            s[k] = score(h, n_users, list.user, list.items[k]);
        list_grads.push_back(lambda_loss(s, list.relevance));
        rank_sum += list_grads.back().loss;
    }

    if (grad_out) {
        Matrix grad_h(h.rows(), h.cols());
        detail::add_pair_grads(grad_h, h, n_users, batch.triples, bpr);
        for (std::size_t l = 0; l < batch.lists.size(); ++l) {
            const LambdaList& list = batch.lists[l];
            const std::vector<double>& g = list_grads[l].grad;
            for (std::size_t k = 0; k < list.items.size(); ++k) {
                const std::size_t node = n_users + list.items[k];
                axpy(g[k], h.row(node), grad_h.row(list.user));
                axpy(g[k], h.row(list.user), grad_h.row(node));
            }
        }
        *grad_out = backpropagate(graph, grad_h, cfg.layers);
        const double two_lambda = 2.0 * cfg.lambda_reg;
        for (const BprTriple& tr : batch.triples) {
            axpy(two_lambda, e_table.row(tr.user), grad_out->row(tr.user));
            axpy(two_lambda, e_table.row(n_users + tr.pos_item),
                 grad_out->row(n_users + tr.pos_item));
            axpy(two_lambda, e_table.row(n_users + tr.neg_item),
                 grad_out->row(n_users + tr.neg_item));
        }
    }
    return combined_loss(bpr.loss, rank_sum, bpr.reg);
}

// Same batch objective against a quantized model: the extended table feeds
// propagation, scores use the full d+2^n width, and the gradient lands on
// the scale table. The regularizer covers the scale rows of each triple
// occurrence.
inline LossBreakdown gnaq_batch_grad(const InteractionGraph& graph, const QuantizedModel& m,
                                     const SampledBatch& batch, const TrainConfig& cfg,
                                     Matrix* grad_scales_out) {
    const Matrix x = extend_embedding(m);
    const Matrix h = propagate(graph, x, cfg.layers).averaged;
    const std::size_t n_users = graph.n_users;

    std::vector<double> pos_scores(batch.triples.size()), neg_scores(batch.triples.size());
    double reg_norm_sq = 0.0;
    for (std::size_t t = 0; t < batch.triples.size(); ++t) {
        const BprTriple& tr = batch.triples[t];
        pos_scores[t] = score(h, n_users, tr.user, tr.pos_item);
        neg_scores[t] = score(h, n_users, tr.user, tr.neg_item);
        reg_norm_sq += detail::row_norm_sq(m.scales.row(tr.user)) +
                       detail::row_norm_sq(m.scales.row(n_users + tr.pos_item)) +
                       detail::row_norm_sq(m.scales.row(n_users + tr.neg_item));
    }
    const BprResult bpr = bpr_loss(pos_scores, neg_scores, reg_norm_sq, cfg.lambda_reg);

    double rank_sum = 0.0;
    std::vector<LambdaResult> list_grads;
    list_grads.reserve(batch.lists.size());
    for (const LambdaList& list : batch.lists) {
        std::vector<double> s(list.items.size());
        for (std::size_t k = 0; k < list.items.size(); ++k)
            s[k] = score(h, n_users, list.user, list.items[k]);
        list_grads.push_back(lambda_loss(s, list.relevance));
        rank_sum += list_grads.back().loss;
    }

    if (grad_scales_out) {
        Matrix grad_h(h.rows(), h.cols());
        detail::add_pair_grads(grad_h, h, n_users, batch.triples, bpr);
        for (std::size_t l = 0; l < batch.lists.size(); ++l) {
            const LambdaList& list = batch.lists[l];
            const std::vector<double>& g = list_grads[l].grad;
            for (std::size_t k = 0; k < list.items.size(); ++k) {
                const std::size_t node = n_users + list.items[k];
                axpy(g[k], h.row(node), grad_h.row(list.user));
                axpy(g[k], h.row(list.user), grad_h.row(node));
            }
        }
        const Matrix grad_x = backpropagate(graph, grad_h, cfg.layers);
        *grad_scales_out = grad_scales(grad_x, m);
        const double two_lambda = 2.0 * cfg.lambda_reg;
        for (const BprTriple& tr : batch.triples) {
            axpy(two_lambda, m.scales.row(tr.user), grad_scales_out->row(tr.user));
            axpy(two_lambda, m.scales.row(n_users + tr.pos_item),
                 grad_scales_out->row(n_users + tr.pos_item));
            axpy(two_lambda, m.scales.row(n_users + tr.neg_item),
                 grad_scales_out->row(n_users + tr.neg_item));
        }
    }
    return combined_loss(bpr.loss, rank_sum, bpr.reg);
}

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean batch loss
    double recall20 = 0.0;  // on the validation slice
    double ndcg20 = 0.0;
};

namespace detail {

// Validation slice carved from the train edges with the same per-user rule
// as the main split.
struct ValidationCarve {
    std::vector<Edge> core_edges;
    std::vector<std::vector<std::uint32_t>> val_positives;  // per user, sorted
    bool has_validation = false;
};

inline ValidationCarve carve_validation(const Dataset& ds, double ratio,
                                        std::uint64_t seed) {
    ParsedInteractions view;
    view.user_ids.resize(ds.n_users);
    view.item_ids.resize(ds.n_items);
    view.edges = ds.train_edges;
    Dataset inner = split_train_test(view, ratio, seed);

    ValidationCarve carve;
    carve.core_edges = std::move(inner.train_edges);
    carve.val_positives.resize(ds.n_users);
    for (const Edge& e : inner.test_edges) carve.val_positives[e.user].push_back(e.item);
    for (auto& v : carve.val_positives) {
        std::sort(v.begin(), v.end());
        if (!v.empty()) carve.has_validation = true;
    }
    return carve;
}

inline void log_epoch(std::vector<EpochLog>& log, std::size_t epoch, double mean_loss,
                      const InteractionGraph& graph, const Matrix& h,
                      const ValidationCarve& carve) {
    EpochLog entry;
    entry.epoch = epoch;
    entry.loss = mean_loss;
    if (carve.has_validation) {
        const std::size_t ks[] = {20};
        EvalReport rep = evaluate(h, graph, carve.val_positives, ks);
        entry.recall20 = rep.recall.at(20);
        entry.ndcg20 = rep.ndcg.at(20);
    }
    log.push_back(entry);
}

inline SampledBatch sample_batch(const InteractionGraph& graph, const TrainConfig& cfg,
                                 Rng& rng) {
    SampledBatch batch;
    batch.triples = sample_bpr_triples(graph, cfg.batch_size, rng);
    if (!cfg.no_rank_loss) {
        auto users = distinct_users(batch.triples, graph.n_users);
        batch.lists = build_lambda_lists(graph, users, cfg.k_list, rng);
    }
    return batch;
}

}  // namespace detail

struct FpTrainResult {
    Matrix embeddings;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;  // 0 = no checkpoint beat the start
};

// Full-precision pre-training. A validation slice is carved from the train
// edges for checkpoint selection; the returned table is the best-Recall@20
// checkpoint (the final table when validation is empty or never improves).
inline FpTrainResult train_fp(const Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    auto carve = detail::carve_validation(
        ds, cfg.validation_ratio, rng_stream_seed(cfg.seed, detail::SEED_TAG_VALIDATION));
    const InteractionGraph graph = build_graph(carve.core_edges, ds.n_users, ds.n_items);

    FpTrainResult result;
    result.embeddings = init_embeddings(
        graph.n_nodes(), cfg.d, rng_stream_seed(cfg.seed, detail::SEED_TAG_EMBED));
    Matrix best = result.embeddings;
    double best_recall = -1.0;

    Rng sampler(rng_stream_seed(cfg.seed, detail::SEED_TAG_SAMPLER));
    AdamState adam(graph.n_nodes(), cfg.d);
    const std::size_t n_batches =
        std::max<std::size_t>(1, (carve.core_edges.size() + cfg.batch_size - 1) / cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            SampledBatch batch = detail::sample_batch(graph, cfg, sampler);
            Matrix grad;
            const LossBreakdown breakdown =
                fp_batch_grad(graph, result.embeddings, batch, cfg, &grad);
            if (!std::isfinite(breakdown.total))
                throw NumericError("train_fp: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " + std::to_string(b + 1));
            adam_step(adam, result.embeddings, grad, cfg.lr);
            loss_sum += breakdown.total;
        }
        const Matrix h = propagate(graph, result.embeddings, cfg.layers).averaged;
        detail::log_epoch(result.log, epoch, loss_sum / static_cast<double>(n_batches),
                          graph, h, carve);
        if (carve.has_validation && result.log.back().recall20 > best_recall) {
            best_recall = result.log.back().recall20;
            best = result.embeddings;
            result.best_epoch = epoch;
        }
    }
    if (carve.has_validation && result.best_epoch > 0)
        result.embeddings = std::move(best);
    return result;
}

struct GnaqTrainResult {
    QuantizedModel model;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
};

namespace detail {

// Keep every scale strictly inside its node's range so dequantized values
// never leave [lo, hi] mid-epoch.
inline void clamp_scales_to_range(QuantizedModel& m) {
    for (std::size_t i = 0; i < m.n_nodes(); ++i) {
        const double lo =
            std::nextafter(m.range_lo[i], std::numeric_limits<double>::infinity());
        const double hi =
            std::nextafter(m.range_hi[i], -std::numeric_limits<double>::infinity());
        for (double& v : m.scales.row(i)) v = std::clamp(v, lo, hi);
    }
}

}  // namespace detail

// Quantization-aware training on top of a pre-trained table. Adam moves only
// the scale table; codes change only through the aggregation-based update at
// epoch ends. Returns the best validation checkpoint.
inline GnaqTrainResult train_gnaq(const Dataset& ds, const Matrix& pretrained,
                                  const TrainConfig& cfg) {
    cfg.validate();
    if (pretrained.cols() != cfg.d)
        throw InputError("train_gnaq: pretrained table is " +
                         std::to_string(pretrained.cols()) + "-dimensional, config wants " +
                         std::to_string(cfg.d));
    if (pretrained.rows() != ds.n_users + ds.n_items)
        throw InputError("train_gnaq: pretrained table rows do not match dataset nodes");

    auto carve = detail::carve_validation(
        ds, cfg.validation_ratio, rng_stream_seed(cfg.seed, detail::SEED_TAG_VALIDATION));
    const InteractionGraph graph = build_graph(carve.core_edges, ds.n_users, ds.n_items);

    GnaqTrainResult result;
    result.model = init_quantizer(pretrained, cfg.n_bits);
    if (cfg.epochs == 0) return result;

    QuantizedModel best = result.model;
    double best_recall = -1.0;

    Rng sampler(rng_stream_seed(cfg.seed, detail::SEED_TAG_SAMPLER));
    AdamState adam(result.model.n_nodes(), result.model.n_levels());
    const std::size_t n_batches =
        std::max<std::size_t>(1, (carve.core_edges.size() + cfg.batch_size - 1) / cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        for (std::size_t b = 0; b < n_batches; ++b) {
            SampledBatch batch = detail::sample_batch(graph, cfg, sampler);
            Matrix grad;
            const LossBreakdown breakdown =
                gnaq_batch_grad(graph, result.model, batch, cfg, &grad);
            if (!std::isfinite(breakdown.total))
                throw NumericError("train_gnaq: non-finite loss at epoch " +
                                   std::to_string(epoch) + " batch " + std::to_string(b + 1));
            adam_step(adam, result.model.scales, grad, cfg.lr);
            detail::clamp_scales_to_range(result.model);
            canonicalize(result.model);
            loss_sum += breakdown.total;
        }
        // Epoch-end re-binning: boundaries from the learned scales (or the
        // uniform grid under the no-DQS ablation), applied to the neighbor
        // aggregation.
        if (!cfg.no_rau)
            result.model =
                requantize_rau(graph, result.model, RauOptions{.uniform_grid = cfg.no_dqs});

        const Matrix h = propagate(graph, extend_embedding(result.model), cfg.layers).averaged;
        detail::log_epoch(result.log, epoch, loss_sum / static_cast<double>(n_batches),
                          graph, h, carve);
        if (carve.has_validation && result.log.back().recall20 > best_recall) {
            best_recall = result.log.back().recall20;
            best = result.model;
            result.best_epoch = epoch;
        }
    }
    if (carve.has_validation && result.best_epoch > 0) result.model = std::move(best);
    return result;
}

}  // namespace gnaq
