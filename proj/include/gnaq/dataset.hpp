#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "gnaq/errors.hpp"
#include "gnaq/graph.hpp"
#include "gnaq/rng.hpp"

namespace gnaq {

// Raw interactions with dense internal ids assigned in first-seen order.
// edges preserves first-seen order and is deduplicated.
struct ParsedInteractions {
    std::vector<std::string> user_ids;  // internal index -> external id
    std::vector<std::string> item_ids;
    std::vector<Edge> edges;

    std::size_t n_users() const { return user_ids.size(); }
    std::size_t n_items() const { return item_ids.size(); }
};

namespace detail {

// Splits on runs of spaces/tabs; never returns empty fields.
inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t k = 0;
    while (k < line.size()) {
        while (k < line.size() && (line[k] == ' ' || line[k] == '\t')) ++k;
        std::size_t start = k;
        while (k < line.size() && line[k] != ' ' && line[k] != '\t') ++k;
        if (k > start) fields.push_back(line.substr(start, k - start));
    }
    return fields;
}

inline std::string_view strip_cr(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    return line;
}

}  // namespace detail

// Formats:
//   "triplet":        one "user item [rating] [timestamp]" per line,
//                     whitespace-separated; columns past the item are ignored
//   "adjacency-list": "user item1 item2 ..." per line
// Blank lines are skipped. Ids are arbitrary strings, mapped densely in
// first-seen order. Repeated (user, item) pairs collapse to one edge.
inline ParsedInteractions parse_interactions(std::istream& in, const std::string& format) {
    const bool triplet = format == "triplet";
    if (!triplet && format != "adjacency-list")
        throw InputError("parse_interactions: unknown format '" + format +
                         "' (expected 'triplet' or 'adjacency-list')");

    ParsedInteractions out;
    std::unordered_map<std::string, std::uint32_t> user_index;
    std::unordered_map<std::string, std::uint32_t> item_index;
    std::unordered_set<std::uint64_t> seen_edge;

    auto intern = [](std::unordered_map<std::string, std::uint32_t>& map,
                     std::vector<std::string>& ids, std::string_view key) {
        auto [it, inserted] = map.try_emplace(std::string(key),
                                              static_cast<std::uint32_t>(ids.size()));
        if (inserted) ids.emplace_back(key);
        return it->second;
    };

    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = detail::strip_cr(raw);
        auto fields = detail::split_ws(line);
        if (fields.empty()) continue;
        if (fields.size() < 2)
            throw ParseError(line_no, "expected a user and at least one item, got " +
                                          std::to_string(fields.size()) + " field(s)");

        std::uint32_t u = intern(user_index, out.user_ids, fields[0]);
        const std::size_t item_end = triplet ? 2 : fields.size();
        for (std::size_t f = 1; f < item_end; ++f) {
            std::uint32_t i = intern(item_index, out.item_ids, fields[f]);
            std::uint64_t key = (static_cast<std::uint64_t>(u) << 32) | i;
            if (!seen_edge.insert(key).second) continue;
            out.edges.push_back({u, i});
        }
    }
    if (out.edges.empty()) throw InputError("parse_interactions: no interactions found");
    return out;
}

inline ParsedInteractions parse_interactions_file(const std::filesystem::path& path,
                                                  const std::string& format) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return parse_interactions(in, format);
}

// Per-user holdout split over internal indices. Edge lists keep the parsed
// edge order, so train followed by test is a permutation-free partition of
// the input.
struct Dataset {
    std::size_t n_users = 0;
    std::size_t n_items = 0;
    std::vector<Edge> train_edges;
    std::vector<Edge> test_edges;
};

// Moves ceil(ratio * degree) of each user's edges to test, uniformly without
// replacement, capped so every user keeps at least one training edge; users
// with a single edge keep it in train. Deterministic in seed.
inline Dataset split_train_test(const ParsedInteractions& parsed, double ratio,
                                std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio < 1.0))
        throw InputError("split_train_test: holdout ratio must be in (0, 1)");
    if (parsed.edges.empty()) throw InputError("split_train_test: no edges");

    // positions into parsed.edges, grouped per user, input order preserved
    std::vector<std::vector<std::size_t>> pos(parsed.n_users());
    for (std::size_t k = 0; k < parsed.edges.size(); ++k)
        pos[parsed.edges[k].user].push_back(k);

    Rng rng(seed);
    std::vector<char> is_test(parsed.edges.size(), 0);
    for (std::size_t u = 0; u < parsed.n_users(); ++u) {
        auto& p = pos[u];
        const std::size_t deg = p.size();
        if (deg < 2) continue;
        std::size_t n_test =
            static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(deg)));
        n_test = std::min(n_test, deg - 1);
        // partial Fisher-Yates: the first n_test slots become the held-out set
        for (std::size_t k = 0; k < n_test; ++k) {
            std::size_t j = k + static_cast<std::size_t>(rng_below(rng, deg - k));
            std::swap(p[k], p[j]);
        }
        for (std::size_t k = 0; k < n_test; ++k) is_test[p[k]] = 1;
    }

    Dataset ds;
    ds.n_users = parsed.n_users();
    ds.n_items = parsed.n_items();
    for (std::size_t k = 0; k < parsed.edges.size(); ++k)
        (is_test[k] ? ds.test_edges : ds.train_edges).push_back(parsed.edges[k]);
    if (ds.train_edges.empty()) throw InputError("split_train_test: empty train split");
    return ds;
}

// Held-out items grouped per user, each list sorted ascending.
inline std::vector<std::vector<std::uint32_t>> test_positives(const Dataset& ds) {
    std::vector<std::vector<std::uint32_t>> per_user(ds.n_users);
    for (const Edge& e : ds.test_edges) per_user[e.user].push_back(e.item);
    for (auto& v : per_user) std::sort(v.begin(), v.end());
    return per_user;
}

struct BprTriple {
    std::uint32_t user;
    std::uint32_t pos_item;
    std::uint32_t neg_item;
};

// Samples (u, i+, i-): u uniform over users that have at least one training
// item and at least one non-interacted item, i+ uniform over u's training
// items, i- uniform over all items rejection-resampled until it is not a
// training item of u.
inline std::vector<BprTriple> sample_bpr_triples(const InteractionGraph& train_graph,
                                                 std::size_t count, Rng& rng) {
    std::vector<std::uint32_t> eligible;
    for (std::size_t u = 0; u < train_graph.n_users; ++u) {
        const std::size_t deg = train_graph.degree[u];
        if (deg >= 1 && deg < train_graph.n_items)
            eligible.push_back(static_cast<std::uint32_t>(u));
    }
    if (eligible.empty())
        throw SamplingError(
            "sample_bpr_triples: no user has both a positive and a negative item");

    std::vector<BprTriple> triples;
    triples.reserve(count);
    for (std::size_t t = 0; t < count; ++t) {
        std::uint32_t u = eligible[rng_below(rng, eligible.size())];
        auto items = train_graph.items_of(u);
        std::uint32_t pos = items[rng_below(rng, items.size())];
        std::uint32_t neg;
        while (true) {
            neg = static_cast<std::uint32_t>(rng_below(rng, train_graph.n_items));
            if (!std::binary_search(items.begin(), items.end(), neg)) break;
        }
        triples.push_back({u, pos, neg});
    }
    return triples;
}

// Ranking list for the pairwise rank loss: one positive followed by sampled
// distinct negatives. relevance[k] is 1 for the positive, 0 otherwise.
struct LambdaList {
    std::uint32_t user;
    std::vector<std::uint32_t> items;
    std::vector<int> relevance;
};

// One list per given user: 1 training positive plus min(list_size - 1,
// #non-interacted items) distinct negatives. A user with no training items
// or no negative items raises SamplingError.
inline std::vector<LambdaList> build_lambda_lists(const InteractionGraph& train_graph,
                                                  std::span<const std::uint32_t> users,
                                                  std::size_t list_size, Rng& rng) {
    if (list_size < 2) throw InputError("build_lambda_lists: list size must be >= 2");
    std::vector<LambdaList> lists;
    lists.reserve(users.size());
    for (std::uint32_t u : users) {
        if (u >= train_graph.n_users)
            throw InputError("build_lambda_lists: user index out of range");
        auto items = train_graph.items_of(u);
        if (items.empty())
            throw SamplingError("build_lambda_lists: user " + std::to_string(u) +
                                " has no training items");
        const std::size_t avail = train_graph.n_items - items.size();
        if (avail == 0)
            throw SamplingError("build_lambda_lists: user " + std::to_string(u) +
                                " has no negative items");

        LambdaList list;
        list.user = u;
        list.items.push_back(items[rng_below(rng, items.size())]);
        list.relevance.push_back(1);

        const std::size_t want = std::min(list_size - 1, avail);
        if (want * 3 >= avail) {
            // tight complement: enumerate it and partially shuffle
            std::vector<std::uint32_t> comp;
            comp.reserve(avail);
            for (std::uint32_t i = 0; i < train_graph.n_items; ++i)
                if (!std::binary_search(items.begin(), items.end(), i)) comp.push_back(i);
            for (std::size_t k = 0; k < want; ++k) {
                std::size_t j = k + static_cast<std::size_t>(rng_below(rng, comp.size() - k));
                std::swap(comp[k], comp[j]);
                list.items.push_back(comp[k]);
                list.relevance.push_back(0);
            }
        } else {
            std::vector<std::uint32_t> taken;
            while (taken.size() < want) {
                std::uint32_t cand =
                    static_cast<std::uint32_t>(rng_below(rng, train_graph.n_items));
                if (std::binary_search(items.begin(), items.end(), cand)) continue;
                if (std::find(taken.begin(), taken.end(), cand) != taken.end()) continue;
                taken.push_back(cand);
                list.items.push_back(cand);
                list.relevance.push_back(0);
            }
        }
        lists.push_back(std::move(list));
    }
    return lists;
}

// --- split manifests -------------------------------------------------------
//
// A prepared dataset directory contains:
//   train.txt, test.txt  "user<TAB>item" per line, internal indices
//                        (triplet format, so third-party tools can read it)
//   user_map.txt         "external_id<TAB>internal_index" per line
//   item_map.txt         same for items

namespace detail {

inline void write_edge_file(const std::filesystem::path& path,
                            const std::vector<Edge>& edges) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    for (const Edge& e : edges) out << e.user << '\t' << e.item << '\n';
    if (!out.flush()) throw InputError("write failed for " + path.string());
}

inline void write_map_file(const std::filesystem::path& path,
                           const std::vector<std::string>& ids) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    for (std::size_t k = 0; k < ids.size(); ++k) out << ids[k] << '\t' << k << '\n';
    if (!out.flush()) throw InputError("write failed for " + path.string());
}

inline std::uint32_t parse_index(std::string_view s, std::size_t line_no) {
    if (s.empty()) throw ParseError(line_no, "empty index field");
    std::uint64_t v = 0;
    for (char c : s) {
        if (c < '0' || c > '9')
            throw ParseError(line_no, "non-numeric index '" + std::string(s) + "'");
        v = v * 10 + static_cast<std::uint64_t>(c - '0');
        if (v > 0xFFFFFFFFull) throw ParseError(line_no, "index out of range");
    }
    return static_cast<std::uint32_t>(v);
}

inline std::vector<Edge> read_edge_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<Edge> edges;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        auto fields = split_ws(strip_cr(raw));
        if (fields.empty()) continue;
        if (fields.size() < 2)
            throw ParseError(line_no, "expected 'user item' in " + path.filename().string());
        edges.push_back({parse_index(fields[0], line_no), parse_index(fields[1], line_no)});
    }
    return edges;
}

inline std::vector<std::string> read_map_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<std::string> ids;
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string_view line = strip_cr(raw);
        if (line.empty()) continue;
        std::size_t tab = line.rfind('\t');
        if (tab == std::string_view::npos)
            throw ParseError(line_no, "expected 'id<TAB>index' in " + path.filename().string());
        std::uint32_t idx = parse_index(line.substr(tab + 1), line_no);
        if (idx != ids.size())
            throw ParseError(line_no, "indices must be dense and ascending in " +
                                          path.filename().string());
        ids.emplace_back(line.substr(0, tab));
    }
    if (ids.empty()) throw InputError("empty id map " + path.string());
    return ids;
}

}  // namespace detail

inline void write_split(const std::filesystem::path& dir, const Dataset& ds,
                        const ParsedInteractions& parsed) {
    if (ds.n_users != parsed.n_users() || ds.n_items != parsed.n_items())
        throw InputError("write_split: dataset and id maps disagree on shape");
    std::filesystem::create_directories(dir);
    detail::write_edge_file(dir / "train.txt", ds.train_edges);
    detail::write_edge_file(dir / "test.txt", ds.test_edges);
    detail::write_map_file(dir / "user_map.txt", parsed.user_ids);
    detail::write_map_file(dir / "item_map.txt", parsed.item_ids);
}

struct LoadedSplit {
    Dataset dataset;
    std::vector<std::string> user_ids;
    std::vector<std::string> item_ids;
};

inline LoadedSplit load_split(const std::filesystem::path& dir) {
    LoadedSplit s;
    s.user_ids = detail::read_map_file(dir / "user_map.txt");
    s.item_ids = detail::read_map_file(dir / "item_map.txt");
    s.dataset.n_users = s.user_ids.size();
    s.dataset.n_items = s.item_ids.size();
    s.dataset.train_edges = detail::read_edge_file(dir / "train.txt");
    s.dataset.test_edges = detail::read_edge_file(dir / "test.txt");
    if (s.dataset.train_edges.empty()) throw InputError("load_split: train.txt has no edges");
    auto check = [&](const std::vector<Edge>& edges, const char* which) {
        for (const Edge& e : edges)
            if (e.user >= s.dataset.n_users || e.item >= s.dataset.n_items)
                throw InputError(std::string("load_split: ") + which +
                                 " edge out of range of id maps");
    };
    check(s.dataset.train_edges, "train");
    check(s.dataset.test_edges, "test");
    return s;
}

}  // namespace gnaq
