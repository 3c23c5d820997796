#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ctlrp/common.hpp"
#include "ctlrp/explain.hpp"
#include "ctlrp/model.hpp"

namespace ctlrp {

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"ct-lrp", "token-lrp", "node-lrp", "grad-cam", "c-eb"};
    return m;
}

// Explains the model's own prediction with the named method.
inline Explanation explain_with_method(const BiGcnModel& model, const PropagationEvent& event,
                                       const std::string& method,
                                       const Epsilon& eps = Epsilon(1e-6),
                                       PoolBackwardMode mode = PoolBackwardMode::Conserving) {
    const int cls = forward(model, event).predicted;
    if (method == "ct-lrp") return ct_lrp(model, event, eps, mode);
    if (method == "token-lrp") return lrp_token(model, event, cls, eps, mode);
    if (method == "node-lrp") return lrp_node(model, event, cls, eps);
    if (method == "grad-cam") return grad_cam(model, event, cls);
    if (method == "c-eb") return c_eb(model, event, cls);
    throw ConfigError("unknown method '" + method + "'");
}

struct EvalConfig {
    std::vector<double> sparsity_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double threshold = 0.01;
    int folds = 5;
    std::uint64_t seed = 0;

    void validate() const {
        for (double s : sparsity_grid)
            if (s < 0.0 || s >= 1.0) throw ConfigError("sparsity levels must lie in [0,1)");
        if (!(threshold > 0.0)) throw ConfigError("attribution threshold must be > 0");
        if (folds < 1) throw ConfigError("folds must be >= 1");
    }
};

namespace detail {

// Identified element of one explanation: a token or (for node-level methods)
// a whole node, with its attribution score.
struct Identified {
    std::size_t node;
    std::size_t position;  // unused for node-level
    double score;
};

inline std::vector<Identified> identified_elements(const Explanation& ex, double threshold) {
    std::vector<Identified> out;
    if (ex.token_level()) {
        for (const auto& rec : ex.tokens) {
            if (!rec.kept) continue;
            const double z = rec.z[static_cast<std::size_t>(ex.explained_class)];
            if (z > threshold) out.push_back({rec.node, rec.position, z});
        }
    } else {
        for (std::size_t v = 0; v < ex.node_scores.size(); ++v)
            if (ex.node_scores[v] > threshold) out.push_back({v, 0, ex.node_scores[v]});
    }
    return out;
}

// Descending by score; ties broken by (node, position) so reruns remove the
// same set.
inline void sort_by_importance(std::vector<Identified>& elems) {
    std::sort(elems.begin(), elems.end(), [](const Identified& a, const Identified& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.node != b.node) return a.node < b.node;
        return a.position < b.position;
    });
}

inline std::vector<TokenDrop> drops_for(const Explanation& ex, const PropagationEvent& ev,
                                        const std::vector<Identified>& elems, std::size_t take) {
    std::vector<TokenDrop> drops;
    for (std::size_t i = 0; i < take && i < elems.size(); ++i) {
        if (ex.token_level()) {
            drops.emplace_back(elems[i].node, elems[i].position);
        } else {
            // node removal = drop every token of the node, zeroing its feature
            for (std::size_t t = 0; t < ev.posts[elems[i].node].tokens.size(); ++t)
                drops.emplace_back(elems[i].node, t);
        }
    }
    return drops;
}

template <class F>
inline void parallel_for(std::size_t n, int jobs, F&& body) {
    if (jobs <= 1 || n < 2) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    const int workers = std::min<int>(jobs, static_cast<int>(n));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            for (std::size_t i = static_cast<std::size_t>(w); i < n; i += static_cast<std::size_t>(workers))
                body(i);
        });
    for (auto& t : pool) t.join();
}

}  // namespace detail

// Fraction of events whose prediction changes when every identified element
// is removed.
inline double fidelity(const BiGcnModel& model, const std::vector<PropagationEvent>& events,
                       const std::vector<Explanation>& explanations, double threshold,
                       int jobs = 1) {
    if (events.empty()) throw ConfigError("fidelity: empty event list");
    if (events.size() != explanations.size())
        throw ConfigError("fidelity: one explanation per event required");
    std::vector<int> changed(events.size(), 0);
    detail::parallel_for(events.size(), jobs, [&](std::size_t i) {
        auto elems = detail::identified_elements(explanations[i], threshold);
        if (elems.empty()) return;
        auto drops = detail::drops_for(explanations[i], events[i], elems, elems.size());
        Vector y = perturbed_forward(model, events[i], drops);
        const int pred = static_cast<int>(std::max_element(y.begin(), y.end()) - y.begin());
        changed[i] = pred != explanations[i].predicted ? 1 : 0;
    });
    return static_cast<double>(std::accumulate(changed.begin(), changed.end(), 0)) /
           static_cast<double>(events.size());
}

// 1 - identified/total; tokens for token-level methods, nodes otherwise.
inline double sparsity(const Explanation& ex, const PropagationEvent& ev, double threshold = 0.01) {
    const std::size_t identified = detail::identified_elements(ex, threshold).size();
    const std::size_t total = ex.token_level() ? ev.total_tokens() : ev.num_nodes();
    return 1.0 - static_cast<double>(identified) / static_cast<double>(total);
}

struct SparsityRunResult {
    double fidelity = 0.0;
    double achieved_sparsity = 0.0;  // mean over events of 1 - removed/total
};

// Removes identified elements in decreasing importance, capped so at most
// ceil((1-level)*total) elements go, then measures prediction change.
inline SparsityRunResult fidelity_at_sparsity(const BiGcnModel& model,
                                              const std::vector<PropagationEvent>& events,
                                              const std::vector<Explanation>& explanations,
                                              double level, double threshold, int jobs = 1) {
    if (level < 0.0 || level >= 1.0) throw ConfigError("sparsity level must lie in [0,1)");
    if (events.empty()) throw ConfigError("fidelity_at_sparsity: empty event list");
    std::vector<int> changed(events.size(), 0);
    std::vector<double> achieved(events.size(), 0.0);
    detail::parallel_for(events.size(), jobs, [&](std::size_t i) {
        const Explanation& ex = explanations[i];
        auto elems = detail::identified_elements(ex, threshold);
        detail::sort_by_importance(elems);
        const std::size_t total = ex.token_level() ? events[i].total_tokens() : events[i].num_nodes();
        const std::size_t cap =
            static_cast<std::size_t>(std::ceil((1.0 - level) * static_cast<double>(total)));
        const std::size_t take = std::min(cap, elems.size());
        achieved[i] = 1.0 - static_cast<double>(take) / static_cast<double>(total);
        if (take == 0) return;
        auto drops = detail::drops_for(ex, events[i], elems, take);
        Vector y = perturbed_forward(model, events[i], drops);
        const int pred = static_cast<int>(std::max_element(y.begin(), y.end()) - y.begin());
        changed[i] = pred != ex.predicted ? 1 : 0;
    });
    SparsityRunResult r;
    r.fidelity = static_cast<double>(std::accumulate(changed.begin(), changed.end(), 0)) /
                 static_cast<double>(events.size());
    r.achieved_sparsity = std::accumulate(achieved.begin(), achieved.end(), 0.0) /
                          static_cast<double>(events.size());
    return r;
}

struct EvalRow {
    std::string method;
    double sparsity_level = 0.0;
    double fidelity_mean = 0.0;
    double fidelity_std = 0.0;
    double sparsity_achieved = 0.0;
    double fidelity_sparsity = 0.0;  // fidelity_mean * sparsity_achieved, exactly
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double runtime_seconds = 0.0;
};

// Full grid x method sweep with seeded k-fold aggregation. Explanations are
// computed once per method over the whole dataset and reused across folds.
inline EvalReport sweep(const BiGcnModel& model, const std::vector<PropagationEvent>& events,
                        const std::vector<std::string>& methods, const EvalConfig& cfg,
                        int jobs = 1,
                        const Epsilon& eps = Epsilon(1e-6),
                        PoolBackwardMode mode = PoolBackwardMode::Conserving) {
    cfg.validate();
    if (events.empty()) throw ConfigError("sweep: empty event list");
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(events.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);
    const int folds = std::min<int>(cfg.folds, static_cast<int>(events.size()));
    std::vector<std::vector<std::size_t>> fold_idx(static_cast<std::size_t>(folds));
    for (std::size_t i = 0; i < order.size(); ++i)
        fold_idx[i % static_cast<std::size_t>(folds)].push_back(order[i]);

    EvalReport report;
    for (const std::string& method : methods) {
        std::vector<Explanation> explanations(events.size());
        detail::parallel_for(events.size(), jobs, [&](std::size_t i) {
            explanations[i] = explain_with_method(model, events[i], method, eps, mode);
        });

        for (double level : cfg.sparsity_grid) {
            std::vector<double> fold_fid;
            double achieved_sum = 0.0;
            std::size_t achieved_events = 0;
            for (const auto& idx : fold_idx) {
                std::vector<PropagationEvent> fe;
                std::vector<Explanation> fx;
                for (std::size_t i : idx) {
                    fe.push_back(events[i]);
                    fx.push_back(explanations[i]);
                }
                SparsityRunResult r = fidelity_at_sparsity(model, fe, fx, level, cfg.threshold, jobs);
                fold_fid.push_back(r.fidelity);
                achieved_sum += r.achieved_sparsity * static_cast<double>(fe.size());
                achieved_events += fe.size();
            }
            EvalRow row;
            row.method = method;
            row.sparsity_level = level;
            row.fidelity_mean = std::accumulate(fold_fid.begin(), fold_fid.end(), 0.0) /
                                static_cast<double>(fold_fid.size());
            double var = 0.0;
            for (double f : fold_fid) var += (f - row.fidelity_mean) * (f - row.fidelity_mean);
            row.fidelity_std = std::sqrt(var / static_cast<double>(fold_fid.size()));
            row.sparsity_achieved = achieved_sum / static_cast<double>(achieved_events);
            row.fidelity_sparsity = row.fidelity_mean * row.sparsity_achieved;
            report.rows.push_back(row);
        }
    }
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

inline std::string report_to_csv(const EvalReport& report, const std::string& dataset_name) {
    std::ostringstream out;
    out << "method,dataset,sparsity,fidelity_mean,fidelity_std,fid_sparsity\n";
    out.precision(17);
    for (const auto& r : report.rows)
        out << r.method << ',' << dataset_name << ',' << r.sparsity_level << ','
            << r.fidelity_mean << ',' << r.fidelity_std << ',' << r.fidelity_sparsity << '\n';
    return out.str();
}

inline nlohmann::json report_to_json(const EvalReport& report, const std::string& dataset_name) {
    nlohmann::json curves = nlohmann::json::object();
    for (const auto& r : report.rows) {
        auto& c = curves[r.method];
        c["sparsity"].push_back(r.sparsity_level);
        c["fidelity_mean"].push_back(r.fidelity_mean);
        c["fidelity_std"].push_back(r.fidelity_std);
        c["sparsity_achieved"].push_back(r.sparsity_achieved);
        c["fidelity_sparsity"].push_back(r.fidelity_sparsity);
    }
    return nlohmann::json{{"dataset", dataset_name},
                          {"runtime_seconds", report.runtime_seconds},
                          {"curves", std::move(curves)}};
}

}  // namespace ctlrp
