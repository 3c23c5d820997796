#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "ctlrp/common.hpp"
#include "ctlrp/model.hpp"
#include "ctlrp/tape.hpp"
#include "ctlrp/textembed.hpp"

namespace ctlrp {

// Per-class node x feature relevance map R^(c).
struct NodeRelevance {
    int cls = 0;
    Matrix values;  // |V| x |D|
};

struct TokenRecord {
    std::size_t node = 0;
    std::size_t position = 0;
    int token = 0;
    std::vector<double> z;  // attribution per class
    bool kept = false;
};

struct Explanation {
    std::string method;
    std::string event_id;
    int predicted = 0;
    int explained_class = 0;
    Vector logits;
    std::vector<TokenRecord> tokens;  // token-level methods
    Vector node_scores;               // node-level methods
    bool low_confidence = false;

    bool token_level() const { return node_scores.empty(); }
};

struct CtLrpStats {
    int gnn_backward_passes = 0;
    int perturbed_forwards = 0;
};

// Relevance of the class-c logit distributed over node features. The seed is
// the logit itself with all other outputs masked; the graph structure is
// treated as static, so both branches' shares sum at the feature matrix.
inline NodeRelevance lrp_gnn(const BiGcnModel& model, const ForwardResult& fwd, int cls,
                             const Epsilon& eps = Epsilon(1e-6)) {
    if (cls < 0 || cls >= model.num_classes)
        throw InputError("class index " + std::to_string(cls) + " out of range");
    Matrix seed(1, static_cast<std::size_t>(model.num_classes));
    seed(0, static_cast<std::size_t>(cls)) = fwd.logits[static_cast<std::size_t>(cls)];
    std::vector<Matrix> rel = lrp_backward(fwd.tape, model.params, fwd.logits_id, seed, eps);
    NodeRelevance r;
    r.cls = cls;
    r.values = rel[static_cast<std::size_t>(fwd.x_id)];
    r.values.check_finite("node relevance");
    return r;
}

// score_v = sum over feature dims of R^(c).
inline Vector node_scores_from_relevance(const NodeRelevance& r) {
    Vector scores(r.values.rows(), 0.0);
    for (std::size_t v = 0; v < r.values.rows(); ++v)
        for (std::size_t d = 0; d < r.values.cols(); ++d) scores[v] += r.values(v, d);
    return scores;
}

namespace detail {

inline bool degenerate_logits(const Vector& logits) {
    double lo = logits[0], hi = logits[0];
    for (double v : logits) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    return hi - lo < 1e-9;
}

// Token attributions z^(c) for every class, one GNN backward pass per class.
inline std::vector<std::vector<Vector>> all_class_attributions(
    const BiGcnModel& model, const ForwardResult& fwd, const Epsilon& eps, PoolBackwardMode mode,
    CtLrpStats* stats) {
    std::vector<std::vector<Vector>> z_by_class;
    for (int c = 0; c < model.num_classes; ++c) {
        NodeRelevance r = lrp_gnn(model, fwd, c, eps);
        if (stats) ++stats->gnn_backward_passes;
        std::vector<Matrix> token_rel = lrp_pool_backward(fwd.embed, r.values, eps, mode, model.pool_w());
        z_by_class.push_back(token_attribution(token_rel));
    }
    return z_by_class;
}

inline std::vector<TokenRecord> flatten_tokens(const PropagationEvent& ev,
                                               const std::vector<std::vector<Vector>>& z_by_class) {
    std::vector<TokenRecord> out;
    for (std::size_t v = 0; v < ev.posts.size(); ++v) {
        for (std::size_t t = 0; t < ev.posts[v].tokens.size(); ++t) {
            TokenRecord rec;
            rec.node = v;
            rec.position = t;
            rec.token = ev.posts[v].tokens[t];
            for (const auto& zc : z_by_class) rec.z.push_back(zc[v][t]);
            out.push_back(std::move(rec));
        }
    }
    return out;
}

}  // namespace detail

// Non-contrastive token-level LRP: Z^(cls) with mask = (z > 0).
inline Explanation lrp_token(const BiGcnModel& model, const PropagationEvent& event, int cls,
                             const Epsilon& eps = Epsilon(1e-6),
                             PoolBackwardMode mode = PoolBackwardMode::Conserving) {
    ForwardResult fwd = forward(model, event);
    auto z_by_class = detail::all_class_attributions(model, fwd, eps, mode, nullptr);

    Explanation ex;
    ex.method = "token-lrp";
    ex.event_id = event.event_id;
    ex.predicted = fwd.predicted;
    ex.explained_class = cls;
    ex.logits = fwd.logits;
    ex.low_confidence = detail::degenerate_logits(fwd.logits);
    ex.tokens = detail::flatten_tokens(event, z_by_class);
    for (auto& rec : ex.tokens) rec.kept = rec.z[static_cast<std::size_t>(cls)] > 0.0;
    return ex;
}

// Contrastive token-level LRP: z^(yhat)-positive tokens contested by another
// class are perturbed once and kept only if their logit drop favours the
// predicted class against every contesting class (strict inequality).
inline Explanation ct_lrp(const BiGcnModel& model, const PropagationEvent& event,
                          const Epsilon& eps = Epsilon(1e-6),
                          PoolBackwardMode mode = PoolBackwardMode::Conserving,
                          CtLrpStats* stats = nullptr) {
    if (model.num_classes < 2) throw ConfigError("ct_lrp requires at least two classes");
    ForwardResult fwd = forward(model, event);
    CtLrpStats local;
    CtLrpStats* st = stats ? stats : &local;
    auto z_by_class = detail::all_class_attributions(model, fwd, eps, mode, st);

    Explanation ex;
    ex.method = "ct-lrp";
    ex.event_id = event.event_id;
    ex.predicted = fwd.predicted;
    ex.explained_class = fwd.predicted;
    ex.logits = fwd.logits;
    ex.low_confidence = detail::degenerate_logits(fwd.logits);
    ex.tokens = detail::flatten_tokens(event, z_by_class);

    const std::size_t yhat = static_cast<std::size_t>(fwd.predicted);
    for (auto& rec : ex.tokens) {
        if (rec.z[yhat] <= 0.0) {
            rec.kept = false;
            continue;
        }
        std::vector<std::size_t> contested;
        for (std::size_t c = 0; c < rec.z.size(); ++c)
            if (c != yhat && rec.z[c] > 0.0) contested.push_back(c);
        if (contested.empty()) {
            rec.kept = true;
            continue;
        }
        // y' depends only on (node, position); one perturbation covers all
        // contesting classes.
        Vector yp = perturbed_forward(model, event, rec.node, rec.position, &fwd.views);
        ++st->perturbed_forwards;
        const double own_drop = fwd.logits[yhat] - yp[yhat];
        rec.kept = true;
        for (std::size_t c : contested) {
            if (!(own_drop > fwd.logits[c] - yp[c])) {
                rec.kept = false;
                break;
            }
        }
    }
    return ex;
}

// Node-level LRP baseline: per-node sums of R^(cls).
inline Explanation lrp_node(const BiGcnModel& model, const PropagationEvent& event, int cls,
                            const Epsilon& eps = Epsilon(1e-6)) {
    ForwardResult fwd = forward(model, event);
    NodeRelevance r = lrp_gnn(model, fwd, cls, eps);
    Explanation ex;
    ex.method = "node-lrp";
    ex.event_id = event.event_id;
    ex.predicted = fwd.predicted;
    ex.explained_class = cls;
    ex.logits = fwd.logits;
    ex.low_confidence = detail::degenerate_logits(fwd.logits);
    ex.node_scores = node_scores_from_relevance(r);
    return ex;
}

// Grad-CAM over the final conv layer of each branch: feature dims weighted by
// their node-mean gradient, ReLU-ed per node, branches summed.
inline Explanation grad_cam(const BiGcnModel& model, const PropagationEvent& event, int cls) {
    if (cls < 0 || cls >= model.num_classes) throw InputError("class index out of range");
    ForwardResult fwd = forward(model, event);
    Matrix seed(1, static_cast<std::size_t>(model.num_classes));
    seed(0, static_cast<std::size_t>(cls)) = 1.0;
    Gradients g = grad_backward(fwd.tape, model.params, fwd.logits_id, seed);

    Vector scores(event.posts.size(), 0.0);
    for (int h_id : {fwd.td_h2, fwd.bu_h2}) {
        const Matrix& h = fwd.tape.value(h_id);
        const Matrix& dh = g.value_grad(h_id);
        Vector alpha(h.cols(), 0.0);
        for (std::size_t v = 0; v < h.rows(); ++v)
            for (std::size_t d = 0; d < h.cols(); ++d) alpha[d] += dh(v, d);
        for (double& a : alpha) a /= static_cast<double>(h.rows());
        for (std::size_t v = 0; v < h.rows(); ++v) {
            double s = 0.0;
            for (std::size_t d = 0; d < h.cols(); ++d) s += alpha[d] * h(v, d);
            scores[v] += s > 0.0 ? s : 0.0;
        }
    }

    Explanation ex;
    ex.method = "grad-cam";
    ex.event_id = event.event_id;
    ex.predicted = fwd.predicted;
    ex.explained_class = cls;
    ex.logits = fwd.logits;
    ex.low_confidence = detail::degenerate_logits(fwd.logits);
    ex.node_scores = std::move(scores);
    return ex;
}

namespace detail {

// Excitation backprop: probability mass routed through positive weights and
// positive activations only; mass dies where no excitatory path exists.
inline std::vector<Matrix> eb_backward(const Tape& tape, const ParamSet& params,
                                       int seed_value, const Matrix& seed) {
    std::vector<Matrix> rel(tape.values.size());
    rel[static_cast<std::size_t>(seed_value)] = seed;
    auto pos = [](double v) { return v > 0.0 ? v : 0.0; };

    for (auto it = tape.traces.rbegin(); it != tape.traces.rend(); ++it) {
        const LayerTrace& t = *it;
        const Matrix& rout = rel[static_cast<std::size_t>(t.output)];
        if (rout.empty()) continue;
        const Matrix& x = tape.value(t.input);
        switch (t.kind) {
            case LayerKind::Linear: {
                const Matrix& w = params.at(t.weight_param);
                Matrix& rin = grad_slot(rel, t.input, x);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    for (std::size_t k = 0; k < rout.cols(); ++k) {
                        if (rout(i, k) == 0.0) continue;
                        double denom = 0.0;
                        for (std::size_t j = 0; j < x.cols(); ++j)
                            denom += pos(x(i, j)) * pos(w(j, k));
                        if (denom == 0.0) continue;
                        for (std::size_t j = 0; j < x.cols(); ++j)
                            rin(i, j) += pos(x(i, j)) * pos(w(j, k)) / denom * rout(i, k);
                    }
                }
                break;
            }
            case LayerKind::Relu: {
                Matrix& rin = grad_slot(rel, t.input, x);
                add_inplace(rin, rout);
                break;
            }
            case LayerKind::GraphAggregate: {
                Matrix& rin = grad_slot(rel, t.input, x);
                for (std::size_t v = 0; v < rout.rows(); ++v) {
                    for (std::size_t d = 0; d < rout.cols(); ++d) {
                        if (rout(v, d) == 0.0) continue;
                        double denom = 0.0;
                        for (std::size_t u = 0; u < x.rows(); ++u)
                            denom += t.aggregate(v, u) * pos(x(u, d));
                        if (denom == 0.0) continue;
                        for (std::size_t u = 0; u < x.rows(); ++u)
                            rin(u, d) += t.aggregate(v, u) * pos(x(u, d)) / denom * rout(v, d);
                    }
                }
                break;
            }
            case LayerKind::MeanReadout: {
                Matrix& rin = grad_slot(rel, t.input, x);
                for (std::size_t d = 0; d < rout.cols(); ++d) {
                    if (rout(0, d) == 0.0) continue;
                    double denom = 0.0;
                    for (std::size_t v = 0; v < x.rows(); ++v) denom += pos(x(v, d));
                    if (denom == 0.0) continue;
                    for (std::size_t v = 0; v < x.rows(); ++v)
                        rin(v, d) += pos(x(v, d)) / denom * rout(0, d);
                }
                break;
            }
            case LayerKind::Concat: {
                const Matrix& xb = tape.value(t.input2);
                Matrix& ra = grad_slot(rel, t.input, x);
                Matrix& rb = grad_slot(rel, t.input2, xb);
                for (std::size_t i = 0; i < x.rows(); ++i) {
                    for (std::size_t j = 0; j < x.cols(); ++j) ra(i, j) += rout(i, j);
                    for (std::size_t j = 0; j < xb.cols(); ++j) rb(i, j) += rout(i, x.cols() + j);
                }
                break;
            }
        }
    }
    return rel;
}

}  // namespace detail

// Contrastive excitation backprop: target-class propagation minus a uniform
// mixture over the other classes, negatives clipped at the node scores.
inline Explanation c_eb(const BiGcnModel& model, const PropagationEvent& event, int cls) {
    if (cls < 0 || cls >= model.num_classes) throw InputError("class index out of range");
    ForwardResult fwd = forward(model, event);
    const std::size_t nc = static_cast<std::size_t>(model.num_classes);

    Matrix target_seed(1, nc);
    target_seed(0, static_cast<std::size_t>(cls)) = 1.0;
    Matrix other_seed(1, nc);
    for (std::size_t c = 0; c < nc; ++c)
        if (static_cast<int>(c) != cls) other_seed(0, c) = 1.0 / static_cast<double>(nc - 1);

    std::vector<Matrix> p_target = detail::eb_backward(fwd.tape, model.params, fwd.logits_id, target_seed);
    std::vector<Matrix> p_other = detail::eb_backward(fwd.tape, model.params, fwd.logits_id, other_seed);
    const Matrix& rt = p_target[static_cast<std::size_t>(fwd.x_id)];
    const Matrix& ro = p_other[static_cast<std::size_t>(fwd.x_id)];

    Vector scores(event.posts.size(), 0.0);
    for (std::size_t v = 0; v < scores.size(); ++v) {
        double s = 0.0;
        for (std::size_t d = 0; d < fwd.embed.node_features.cols(); ++d) {
            const double a = rt.empty() ? 0.0 : rt(v, d);
            const double b = ro.empty() ? 0.0 : ro(v, d);
            s += a - b;
        }
        scores[v] = s > 0.0 ? s : 0.0;
    }

    Explanation ex;
    ex.method = "c-eb";
    ex.event_id = event.event_id;
    ex.predicted = fwd.predicted;
    ex.explained_class = cls;
    ex.logits = fwd.logits;
    ex.low_confidence = detail::degenerate_logits(fwd.logits);
    ex.node_scores = std::move(scores);
    return ex;
}

// ---- Explanation JSON ----

inline nlohmann::json explanation_to_json(const Explanation& ex) {
    nlohmann::json j{{"method", ex.method},
                     {"event_id", ex.event_id},
                     {"predicted", ex.predicted},
                     {"explained_class", ex.explained_class},
                     {"logits", ex.logits},
                     {"low_confidence", ex.low_confidence}};
    if (ex.token_level()) {
        nlohmann::json toks = nlohmann::json::array();
        for (const auto& rec : ex.tokens)
            toks.push_back({{"node", rec.node},
                            {"position", rec.position},
                            {"token", rec.token},
                            {"z", rec.z},
                            {"kept", rec.kept}});
        j["tokens"] = std::move(toks);
    } else {
        j["node_scores"] = ex.node_scores;
    }
    return j;
}

}  // namespace ctlrp
