#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "ctlrp/common.hpp"
#include "ctlrp/matrix.hpp"

namespace ctlrp {

struct Post {
    std::string post_id;
    std::optional<std::string> parent_id;  // absent for the source post
    std::vector<int> tokens;               // vocabulary indices, length >= 1
};

// One labelled event. Posts are ordered; the index is the node id and the
// source post is node 0. Reply edges must form a tree rooted at node 0.
struct PropagationEvent {
    std::string event_id;
    int label = 0;
    std::vector<Post> posts;

    std::size_t num_nodes() const { return posts.size(); }

    std::size_t total_tokens() const {
        std::size_t n = 0;
        for (const auto& p : posts) n += p.tokens.size();
        return n;
    }
};

// Top-down / bottom-up / undirected propagation matrices, each row-normalized
// with self-loops for convolution.
struct AdjacencyViews {
    Matrix top_down;
    Matrix bottom_up;
    Matrix undirected;
};

namespace detail {

// Parent index per node (-1 for the source). Throws on duplicates, missing
// parents, or cycles; a rooted tree is exactly "every node reaches node 0".
inline std::vector<long> resolve_parents(const PropagationEvent& ev, long line = 0) {
    if (ev.posts.empty()) throw IngestError("event has no posts", line);
    std::unordered_map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < ev.posts.size(); ++i) {
        if (!by_id.emplace(ev.posts[i].post_id, i).second)
            throw IngestError("duplicate post_id '" + ev.posts[i].post_id + "'", line);
        if (ev.posts[i].tokens.empty())
            throw IngestError("post '" + ev.posts[i].post_id + "' has no tokens", line);
    }
    if (ev.posts[0].parent_id)
        throw IngestError("source post must have null parent_id", line);
    std::vector<long> parent(ev.posts.size(), -1);
    for (std::size_t i = 1; i < ev.posts.size(); ++i) {
        if (!ev.posts[i].parent_id)
            throw IngestError("non-source post '" + ev.posts[i].post_id + "' has null parent_id", line);
        auto it = by_id.find(*ev.posts[i].parent_id);
        if (it == by_id.end())
            throw IngestError("dangling parent_id '" + *ev.posts[i].parent_id + "'", line);
        parent[i] = static_cast<long>(it->second);
    }
    for (std::size_t i = 1; i < ev.posts.size(); ++i) {
        long cur = static_cast<long>(i);
        std::size_t hops = 0;
        while (cur != 0) {
            cur = parent[static_cast<std::size_t>(cur)];
            if (++hops > ev.posts.size())
                throw IngestError("reply edges contain a cycle", line);
        }
    }
    return parent;
}

inline void validate_tree(const PropagationEvent& ev, long line = 0) { resolve_parents(ev, line); }

inline Matrix row_normalize_with_self_loops(Matrix a) {
    for (std::size_t i = 0; i < a.rows(); ++i) a(i, i) = 1.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double deg = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) deg += a(i, j);
        for (std::size_t j = 0; j < a.cols(); ++j) a(i, j) /= deg;
    }
    return a;
}

}  // namespace detail

inline AdjacencyViews build_adjacency(const PropagationEvent& ev) {
    std::vector<long> parent;
    try {
        parent = detail::resolve_parents(ev);
    } catch (const IngestError& e) {
        throw StructuralError(e.what());
    }
    const std::size_t n = ev.posts.size();
    Matrix td(n, n), bu(n, n), un(n, n);
    for (std::size_t i = 1; i < n; ++i) {
        const std::size_t p = static_cast<std::size_t>(parent[i]);
        td(p, i) = 1.0;
        bu(i, p) = 1.0;
        un(p, i) = un(i, p) = 1.0;
    }
    return {detail::row_normalize_with_self_loops(std::move(td)),
            detail::row_normalize_with_self_loops(std::move(bu)),
            detail::row_normalize_with_self_loops(std::move(un))};
}

// ---- JSONL dataset I/O ----

inline nlohmann::json event_to_json(const PropagationEvent& ev) {
    nlohmann::json posts = nlohmann::json::array();
    for (const auto& p : ev.posts) {
        nlohmann::json jp{{"post_id", p.post_id}, {"tokens", p.tokens}};
        jp["parent_id"] = p.parent_id ? nlohmann::json(*p.parent_id) : nlohmann::json(nullptr);
        posts.push_back(std::move(jp));
    }
    return nlohmann::json{{"event_id", ev.event_id}, {"label", ev.label}, {"posts", std::move(posts)}};
}

inline PropagationEvent event_from_json(const nlohmann::json& j, long line = 0) {
    try {
        PropagationEvent ev;
        ev.event_id = j.at("event_id").get<std::string>();
        ev.label = j.at("label").get<int>();
        if (ev.label < 0) throw IngestError("negative label", line);
        for (const auto& jp : j.at("posts")) {
            Post p;
            p.post_id = jp.at("post_id").get<std::string>();
            const auto& par = jp.at("parent_id");
            if (!par.is_null()) p.parent_id = par.get<std::string>();
            p.tokens = jp.at("tokens").get<std::vector<int>>();
            for (int t : p.tokens)
                if (t < 0) throw IngestError("negative token index", line);
            ev.posts.push_back(std::move(p));
        }
        detail::validate_tree(ev, line);
        return ev;
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(std::string("bad event record: ") + e.what(), line);
    }
}

inline std::vector<PropagationEvent> load_events(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IngestError("cannot open '" + path + "'", 0);
    std::vector<PropagationEvent> events;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IngestError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        events.push_back(event_from_json(j, line_no));
    }
    return events;
}

inline std::string serialize_events(const std::vector<PropagationEvent>& events) {
    std::ostringstream out;
    for (const auto& ev : events) out << event_to_json(ev).dump() << '\n';
    return out.str();
}

// ---- Vocabulary ----

// token string <-> dense index bijection with PAD=0 and UNK=1.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    Vocabulary() {
        add("<pad>");
        add("<unk>");
    }

    int add(const std::string& tok) {
        auto it = index_.find(tok);
        if (it != index_.end()) return it->second;
        const int id = static_cast<int>(tokens_.size());
        index_[tok] = id;
        tokens_.push_back(tok);
        return id;
    }

    int lookup(const std::string& tok) const {
        auto it = index_.find(tok);
        return it == index_.end() ? kUnk : it->second;
    }

    const std::string& token(int id) const { return tokens_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return tokens_.size(); }

    nlohmann::json to_json() const {
        nlohmann::json j = nlohmann::json::object();
        for (std::size_t i = 0; i < tokens_.size(); ++i) j[tokens_[i]] = i;
        return j;
    }

    static Vocabulary from_json(const nlohmann::json& j) {
        std::vector<std::string> tokens(j.size());
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::size_t id = it.value().get<std::size_t>();
            if (id >= tokens.size()) throw IngestError("vocabulary indices not dense", 0);
            tokens[id] = it.key();
        }
        Vocabulary v;
        v.tokens_.clear();
        v.index_.clear();
        for (const auto& t : tokens) v.add(t);
        return v;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

// ---- Synthetic generator with planted ground-truth tokens ----

struct SyntheticConfig {
    int num_events = 500;
    int num_classes = 4;
    int vocab_size = 200;
    int tree_size_min = 3, tree_size_max = 10;
    int tokens_per_post_min = 1, tokens_per_post_max = 3;
    int planted_tokens_per_class = 5;
    double noise_rate = 0.2;
    std::uint64_t seed = 0;
};

struct SyntheticDataset {
    std::vector<PropagationEvent> events;
    std::vector<std::vector<int>> planted;  // class -> planted token indices (disjoint)
    Vocabulary vocab;
};

// Each post of a class-c event carries one token from class c's planted set
// with probability (1 - noise_rate); its remaining tokens are uniform over
// the non-planted pool. Events keep at least one planted token whenever
// noise_rate < 1 so the ground-truth registry is never vacuous. The first two
// vocabulary slots are PAD/UNK and are never emitted.
inline SyntheticDataset generate_synthetic(const SyntheticConfig& cfg) {
    const int reserved = 2;
    const int planted_total = cfg.num_classes * cfg.planted_tokens_per_class;
    if (cfg.num_events <= 0 || cfg.num_classes < 2 || cfg.planted_tokens_per_class <= 0)
        throw ConfigError("synthetic config: counts must be positive, classes >= 2");
    if (cfg.vocab_size <= planted_total + reserved)
        throw ConfigError("synthetic config: vocab_size must exceed classes*planted_tokens_per_class + 2");
    if (cfg.tree_size_min < 1 || cfg.tree_size_max < cfg.tree_size_min ||
        cfg.tokens_per_post_min < 1 || cfg.tokens_per_post_max < cfg.tokens_per_post_min)
        throw ConfigError("synthetic config: invalid size ranges");
    if (cfg.noise_rate < 0.0 || cfg.noise_rate > 1.0)
        throw ConfigError("synthetic config: noise_rate must be in [0,1]");

    SyntheticDataset ds;
    ds.planted.resize(static_cast<std::size_t>(cfg.num_classes));
    for (int c = 0; c < cfg.num_classes; ++c)
        for (int k = 0; k < cfg.planted_tokens_per_class; ++k)
            ds.planted[static_cast<std::size_t>(c)].push_back(reserved + c * cfg.planted_tokens_per_class + k);

    for (int i = 0; i < cfg.vocab_size - reserved; ++i) ds.vocab.add("tok_" + std::to_string(i));

    const int noise_lo = reserved + planted_total;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<int> tree_size(cfg.tree_size_min, cfg.tree_size_max);
    std::uniform_int_distribution<int> post_len(cfg.tokens_per_post_min, cfg.tokens_per_post_max);
    std::uniform_int_distribution<int> noise_tok(noise_lo, cfg.vocab_size - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int e = 0; e < cfg.num_events; ++e) {
        PropagationEvent ev;
        ev.event_id = "ev" + std::to_string(e);
        ev.label = e % cfg.num_classes;
        const auto& pool = ds.planted[static_cast<std::size_t>(ev.label)];
        std::uniform_int_distribution<std::size_t> planted_pick(0, pool.size() - 1);

        const int n = tree_size(rng);
        bool event_has_planted = false;
        for (int v = 0; v < n; ++v) {
            Post p;
            p.post_id = "p" + std::to_string(v);
            if (v > 0) {
                std::uniform_int_distribution<int> parent(0, v - 1);
                p.parent_id = "p" + std::to_string(parent(rng));
            }
            const int len = post_len(rng);
            for (int t = 0; t < len; ++t) p.tokens.push_back(noise_tok(rng));
            if (unit(rng) < 1.0 - cfg.noise_rate) {
                std::uniform_int_distribution<int> pos(0, len - 1);
                p.tokens[static_cast<std::size_t>(pos(rng))] = pool[planted_pick(rng)];
                event_has_planted = true;
            }
            ev.posts.push_back(std::move(p));
        }
        if (!event_has_planted && cfg.noise_rate < 1.0) {
            std::uniform_int_distribution<int> node(0, n - 1);
            Post& p = ev.posts[static_cast<std::size_t>(node(rng))];
            std::uniform_int_distribution<std::size_t> pos(0, p.tokens.size() - 1);
            p.tokens[pos(rng)] = pool[planted_pick(rng)];
        }
        ds.events.push_back(std::move(ev));
    }
    return ds;
}

inline nlohmann::json registry_to_json(const std::vector<std::vector<int>>& planted) {
    nlohmann::json j = nlohmann::json::object();
    for (std::size_t c = 0; c < planted.size(); ++c) j[std::to_string(c)] = planted[c];
    return j;
}

inline std::vector<std::vector<int>> registry_from_json(const nlohmann::json& j) {
    std::vector<std::vector<int>> planted(j.size());
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::size_t c = static_cast<std::size_t>(std::stoul(it.key()));
        if (c >= planted.size()) throw IngestError("registry class indices not dense", 0);
        planted[c] = it.value().get<std::vector<int>>();
    }
    return planted;
}

}  // namespace ctlrp
