// gnaq: prepare data, pre-train, quantize, evaluate, and inspect checkpoints.
// Exit codes: 0 ok, 2 input/config error, 3 numeric failure.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gnaq/gnaq.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int EXIT_INPUT = 2;
constexpr int EXIT_NUMERIC = 3;

// ---------------------------------------------------------------- config ---

struct CliOptions {
    gnaq::TrainConfig train;
    // which TrainConfig fields were set explicitly (JSON or flag); train-gnaq
    // adopts d from the checkpoint unless the user pinned it
    bool d_explicit = false;
    int threads = 0;
};

void apply_json_config(const fs::path& path, CliOptions& opt) {
    std::ifstream in(path);
    if (!in) throw gnaq::InputError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw gnaq::InputError("config " + path.string() + ": " + e.what());
    }
    if (!doc.is_object()) throw gnaq::InputError("config must be a JSON object");

    gnaq::TrainConfig& t = opt.train;
    for (const auto& [key, value] : doc.items()) {
        try {
            if (key == "n_bits") t.n_bits = value.get<std::size_t>();
            else if (key == "d") { t.d = value.get<std::size_t>(); opt.d_explicit = true; }
            else if (key == "layers") t.layers = value.get<std::size_t>();
            else if (key == "lambda") t.lambda_reg = value.get<double>();
            else if (key == "lr") t.lr = value.get<double>();
            else if (key == "batch_size") t.batch_size = value.get<std::size_t>();
            else if (key == "epochs") t.epochs = value.get<std::size_t>();
            else if (key == "k_list") t.k_list = value.get<std::size_t>();
            else if (key == "eval_ks") t.eval_ks = value.get<std::vector<std::size_t>>();
            else if (key == "seed") t.seed = value.get<std::uint64_t>();
            else if (key == "validation_ratio") t.validation_ratio = value.get<double>();
            else if (key == "no_dqs") t.no_dqs = value.get<bool>();
            else if (key == "no_rau") t.no_rau = value.get<bool>();
            else if (key == "no_rank_loss") t.no_rank_loss = value.get<bool>();
            else if (key == "threads") opt.threads = value.get<int>();
            else throw gnaq::InputError("config: unknown key \"" + key + "\"");
        } catch (const json::exception& e) {
            throw gnaq::InputError("config key \"" + key + "\": " + e.what());
        }
    }
}

// Train-flag plumbing shared by train-fp and train-gnaq. Flags parse after
// the config file loads, so they override it.
struct TrainFlags {
    std::string config_path;

    void attach(CLI::App* cmd, CliOptions& opt, bool quant) {
        cmd->add_option("--config", config_path, "JSON config file");
        gnaq::TrainConfig& t = opt.train;
        cmd->add_option("--epochs", t.epochs, "training epochs");
        cmd->add_option("--lr", t.lr, "Adam learning rate");
        cmd->add_option("--layers", t.layers, "propagation depth L");
        cmd->add_option("--lambda", t.lambda_reg, "L2 regularization weight");
        cmd->add_option("--batch-size", t.batch_size, "BPR triples per batch");
        cmd->add_option("--seed", t.seed, "RNG seed");
        cmd->add_option("--k-list", t.k_list, "rank-loss list length");
        cmd->add_option("--validation-ratio", t.validation_ratio,
                        "train slice held out for checkpoint selection");
        auto* dopt = cmd->add_option("--d", t.d, "embedding dimension");
        dopt->each([&opt](const std::string&) { opt.d_explicit = true; });
        if (quant) {
            cmd->add_option("--n-bits", t.n_bits, "quantization bit width");
            cmd->add_flag("--no-dqs", t.no_dqs, "uniform steps when re-binning");
            cmd->add_flag("--no-rau", t.no_rau, "never re-bin codes");
            cmd->add_flag("--no-rank-loss", t.no_rank_loss, "drop the rank loss");
        }
    }

    // config file must apply before flag values; CLI11 parsed flags into the
    // config already, so re-run: load json onto defaults, then re-parse flags
    void finalize(CLI::App* cmd, CliOptions& opt) {
        if (config_path.empty()) return;
        CliOptions from_json;
        from_json.threads = opt.threads;
        apply_json_config(config_path, from_json);
        // flags the user actually passed win over the file
        gnaq::TrainConfig& t = opt.train;
        const gnaq::TrainConfig& j = from_json.train;
        if (cmd->count("--epochs") == 0) t.epochs = j.epochs;
        if (cmd->count("--lr") == 0) t.lr = j.lr;
        if (cmd->count("--layers") == 0) t.layers = j.layers;
        if (cmd->count("--lambda") == 0) t.lambda_reg = j.lambda_reg;
        if (cmd->count("--batch-size") == 0) t.batch_size = j.batch_size;
        if (cmd->count("--seed") == 0) t.seed = j.seed;
        if (cmd->count("--k-list") == 0) t.k_list = j.k_list;
        if (cmd->count("--validation-ratio") == 0) t.validation_ratio = j.validation_ratio;
        if (cmd->count("--d") == 0) {
            t.d = j.d;
            opt.d_explicit = from_json.d_explicit;
        }
        t.eval_ks = j.eval_ks;
        if (cmd->get_option_no_throw("--n-bits") != nullptr) {
            if (cmd->count("--n-bits") == 0) t.n_bits = j.n_bits;
            if (cmd->count("--no-dqs") == 0) t.no_dqs = j.no_dqs;
            if (cmd->count("--no-rau") == 0) t.no_rau = j.no_rau;
            if (cmd->count("--no-rank-loss") == 0) t.no_rank_loss = j.no_rank_loss;
        }
        if (opt.threads == 0) opt.threads = from_json.threads;
    }
};

// ----------------------------------------------------------------- helpers --

void write_epoch_log(const fs::path& path, const std::vector<gnaq::EpochLog>& log) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw gnaq::InputError("cannot write log " + path.string());
    char line[128];
    for (const gnaq::EpochLog& e : log) {
        std::snprintf(line, sizeof line, "%zu\t%.6f\t%.6f\t%.6f\n", e.epoch, e.loss,
                      e.recall20, e.ndcg20);
        out << line;
    }
}

json report_to_json(const gnaq::EvalReport& rep) {
    json recall = json::object(), ndcg = json::object();
    for (const auto& [k, v] : rep.recall) recall[std::to_string(k)] = v;
    for (const auto& [k, v] : rep.ndcg) ndcg[std::to_string(k)] = v;
    return json{{"recall", recall}, {"ndcg", ndcg}, {"users", rep.n_users_evaluated}};
}

// Embedding table a model file yields for ranking: fp rows as-is, quantized
// models through their extended encoding.
gnaq::Matrix ranking_table(const gnaq::LoadedModel& model) {
    if (!model.quantized) return model.fp;
    return gnaq::extend_embedding(model.quant);
}

gnaq::EvalReport evaluate_model_file(const fs::path& data_dir, const fs::path& model_path,
                                     std::size_t layers, std::span<const std::size_t> ks) {
    const gnaq::LoadedSplit split = gnaq::load_split(data_dir);
    const gnaq::InteractionGraph graph = gnaq::build_graph(
        split.dataset.train_edges, split.dataset.n_users, split.dataset.n_items);
    const gnaq::LoadedModel model = gnaq::load_model(model_path);
    if (model.n_nodes() != graph.n_nodes())
        throw gnaq::InputError("model has " + std::to_string(model.n_nodes()) +
                               " nodes but the dataset has " +
                               std::to_string(graph.n_nodes()));
    const gnaq::Matrix h = gnaq::propagate(graph, ranking_table(model), layers).averaged;
    return gnaq::evaluate(h, graph, gnaq::test_positives(split.dataset), ks);
}

// ------------------------------------------------------------- subcommands --

int cmd_prepare(const std::string& input, const std::string& format, double holdout,
                std::uint64_t seed, const std::string& out_dir) {
    const std::string lib_format = format == "adjlist" ? "adjacency-list" : format;
    auto parsed = gnaq::parse_interactions_file(input, lib_format);
    auto ds = gnaq::split_train_test(parsed, holdout, seed);
    fs::create_directories(out_dir);
    gnaq::write_split(out_dir, ds, parsed);

    const double cells = static_cast<double>(ds.n_users) * static_cast<double>(ds.n_items);
    const double sparsity = 1.0 - static_cast<double>(parsed.edges.size()) / cells;
    std::printf("users=%zu items=%zu interactions=%zu sparsity=%.6f\n", ds.n_users,
                ds.n_items, parsed.edges.size(), sparsity);
    std::printf("wrote %s: train=%zu test=%zu\n", out_dir.c_str(), ds.train_edges.size(),
                ds.test_edges.size());
    return 0;
}

int cmd_train_fp(const std::string& data_dir, const CliOptions& opt, const std::string& out) {
    const gnaq::LoadedSplit split = gnaq::load_split(data_dir);
    auto result = gnaq::train_fp(split.dataset, opt.train);
    gnaq::save_model(result.embeddings, out);
    write_epoch_log(out + ".log", result.log);
    std::printf("trained %zu epochs, best validation epoch %zu\n", opt.train.epochs,
                result.best_epoch);
    std::printf("wrote %s and %s.log\n", out.c_str(), out.c_str());
    return 0;
}

int cmd_train_gnaq(const std::string& data_dir, const std::string& init_path,
                   CliOptions& opt, const std::string& out) {
    const gnaq::LoadedSplit split = gnaq::load_split(data_dir);
    const gnaq::LoadedModel init = gnaq::load_model(init_path);
    if (init.quantized)
        throw gnaq::InputError("--init must be a full-precision checkpoint, got a "
                               "quantized model");
    if (!opt.d_explicit) opt.train.d = init.dim();
    if (opt.train.d != init.dim())
        throw gnaq::InputError("config wants d=" + std::to_string(opt.train.d) +
                               " but " + init_path + " stores d=" +
                               std::to_string(init.dim()));
    auto result = gnaq::train_gnaq(split.dataset, init.fp, opt.train);
    gnaq::save_model(result.model, out);
    write_epoch_log(out + ".log", result.log);
    std::printf("trained %zu epochs, best validation epoch %zu\n", opt.train.epochs,
                result.best_epoch);
    std::printf("wrote %s and %s.log\n", out.c_str(), out.c_str());
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& model_path,
             const std::string& k_csv, std::size_t layers, const std::string& out) {
    std::vector<std::size_t> ks;
    std::size_t pos = 0;
    while (pos <= k_csv.size()) {
        const std::size_t comma = std::min(k_csv.find(',', pos), k_csv.size());
        const std::string field = k_csv.substr(pos, comma - pos);
        try {
            ks.push_back(std::stoul(field));
        } catch (const std::exception&) {
            throw gnaq::InputError("--k: bad K value \"" + field + "\"");
        }
        if (ks.back() < 1) throw gnaq::InputError("--k: K values must be positive");
        pos = comma + 1;
    }

    const auto report = evaluate_model_file(data_dir, model_path, layers, ks);
    const json doc = report_to_json(report);
    std::printf("%s\n", doc.dump(2).c_str());

    const std::string out_path = out.empty() ? model_path + ".eval.json" : out;
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw gnaq::InputError("cannot write " + out_path);
    f << doc.dump(2) << "\n";
    return 0;
}

int cmd_inspect(const std::string& model_path) {
    const auto size = fs::file_size(model_path);
    const gnaq::LoadedModel model = gnaq::load_model(model_path);
    std::printf("file: %s\n", model_path.c_str());
    std::printf("version: %u\n", gnaq::MODEL_VERSION);
    std::printf("kind: %s\n", model.quantized ? "quantized" : "full-precision");
    std::printf("nodes: %zu\n", model.n_nodes());
    std::printf("dim: %zu\n", model.dim());
    std::printf("size_bytes: %ju\n", static_cast<std::uintmax_t>(size));

    if (!model.quantized) {
        std::printf("compression_ratio: 1.0\n");
        return 0;
    }
    const gnaq::QuantizedModel& m = model.quant;
    std::printf("n_bits: %zu\n", m.n_bits);
    const double ratio =
        static_cast<double>(gnaq::fp_payload_bytes(m.n_nodes(), m.d)) /
        static_cast<double>(gnaq::quant_payload_bytes(m.n_nodes(), m.d, m.n_bits));
    std::printf("compression_ratio: %.2f\n", ratio);

    // distribution of learned step sizes across all nodes
    std::vector<double> steps;
    steps.reserve(m.n_nodes() * m.n_levels());
    for (std::size_t i = 0; i < m.n_nodes(); ++i) {
        auto r = gnaq::update_steps(m.scales.row(i), m.range_lo[i], m.range_hi[i]);
        steps.insert(steps.end(), r.steps.begin(), r.steps.end());
    }
    std::sort(steps.begin(), steps.end());
    double mean = 0.0;
    for (double s : steps) mean += s;
    mean /= static_cast<double>(steps.size());
    std::printf("steps: count=%zu min=%.6g p50=%.6g mean=%.6g max=%.6g\n", steps.size(),
                steps.front(), steps[steps.size() / 2], mean, steps.back());

    // 8-bucket histogram over [min, max]
    const double lo = steps.front(), hi = steps.back();
    std::size_t hist[8] = {};
    for (double s : steps) {
        std::size_t b = hi > lo ? static_cast<std::size_t>((s - lo) / (hi - lo) * 8.0) : 0;
        ++hist[std::min<std::size_t>(b, 7)];
    }
    std::printf("step_histogram:");
    for (std::size_t b = 0; b < 8; ++b) std::printf(" %zu", hist[b]);
    std::printf("\n");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"graph node-aware dynamic-step quantization for collaborative filtering"};
    app.require_subcommand(1);

    CliOptions opt;
    app.add_option("--threads", opt.threads, "worker thread cap (0 = all cores)")
        ->envname("GNAQ_THREADS");

    // prepare
    std::string in_path, format = "triplet", out_dir;
    double holdout = 0.2;
    std::uint64_t prep_seed = 42;
    auto* prep = app.add_subcommand("prepare", "parse interactions and write a split");
    prep->add_option("--input", in_path, "raw interaction file")->required();
    prep->add_option("--format", format, "triplet or adjlist")
        ->check(CLI::IsMember({"triplet", "adjlist", "adjacency-list"}));
    prep->add_option("--holdout", holdout, "test fraction per user");
    prep->add_option("--seed", prep_seed, "split seed");
    prep->add_option("--out", out_dir, "output directory")->required();

    // train-fp
    std::string fp_data, fp_out = "fp.gnaq";
    TrainFlags fp_flags;
    auto* tfp = app.add_subcommand("train-fp", "full-precision pre-training");
    tfp->add_option("--data", fp_data, "prepared split directory")->required();
    tfp->add_option("--out", fp_out, "checkpoint path");
    fp_flags.attach(tfp, opt, false);

    // train-gnaq
    std::string q_data, q_init, q_out = "q.gnaq";
    TrainFlags q_flags;
    auto* tq = app.add_subcommand("train-gnaq", "quantization-aware training");
    tq->add_option("--data", q_data, "prepared split directory")->required();
    tq->add_option("--init", q_init, "full-precision checkpoint")->required();
    tq->add_option("--out", q_out, "checkpoint path");
    q_flags.attach(tq, opt, true);

    // eval
    std::string e_data, e_model, e_k = "10,20", e_out;
    std::size_t e_layers = 3;
    auto* ev = app.add_subcommand("eval", "top-K metrics on the held-out split");
    ev->add_option("--data", e_data, "prepared split directory")->required();
    ev->add_option("--model", e_model, "checkpoint to score")->required();
    ev->add_option("--k", e_k, "comma-separated K values");
    ev->add_option("--layers", e_layers, "propagation depth L");
    ev->add_option("--out", e_out, "JSON report path (default <model>.eval.json)");

    // inspect
    std::string i_model;
    auto* ins = app.add_subcommand("inspect", "describe a checkpoint file");
    ins->add_option("--model", i_model, "checkpoint to describe")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : EXIT_INPUT;
    }

    try {
        if (tfp->parsed()) fp_flags.finalize(tfp, opt);
        if (tq->parsed()) q_flags.finalize(tq, opt);
        gnaq::set_thread_limit(opt.threads);

        if (prep->parsed()) return cmd_prepare(in_path, format, holdout, prep_seed, out_dir);
        if (tfp->parsed()) return cmd_train_fp(fp_data, opt, fp_out);
        if (tq->parsed()) return cmd_train_gnaq(q_data, q_init, opt, q_out);
        if (ev->parsed()) return cmd_eval(e_data, e_model, e_k, e_layers, e_out);
        if (ins->parsed()) return cmd_inspect(i_model);
    } catch (const gnaq::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return EXIT_NUMERIC;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return EXIT_INPUT;
    }
    return 0;
}
