#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "ctlrp/model.hpp"

namespace ctlrp {

struct TrainConfig {
    int epochs = 200;
    int patience = 10;
    double learning_rate = 1e-3;
    int batch_size = 16;
    double val_fraction = 0.2;
    std::uint64_t seed = 0;

    void validate() const {
        if (epochs <= 0 || patience < 0 || learning_rate <= 0.0 || batch_size <= 0 ||
            val_fraction <= 0.0 || val_fraction >= 1.0)
            throw ConfigError("train config: values out of range");
    }
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

struct TrainLog {
    std::vector<EpochStats> epochs;
    int stopped_epoch = 0;
    double best_val_loss = 0.0;
};

namespace detail {

inline double softmax_cross_entropy(const Vector& logits, int label, Vector& dlogits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    double denom = 0.0;
    for (double v : logits) denom += std::exp(v - mx);
    dlogits.resize(logits.size());
    for (std::size_t c = 0; c < logits.size(); ++c)
        dlogits[c] = std::exp(logits[c] - mx) / denom;
    const double loss = -(logits[static_cast<std::size_t>(label)] - mx - std::log(denom));
    dlogits[static_cast<std::size_t>(label)] -= 1.0;
    return loss;
}

struct AdamState {
    std::vector<Matrix> m, v;
    long step = 0;

    explicit AdamState(const ParamSet& params) {
        for (std::size_t i = 0; i < params.count(); ++i) {
            m.emplace_back(params.at(static_cast<int>(i)).rows(), params.at(static_cast<int>(i)).cols());
            v.emplace_back(params.at(static_cast<int>(i)).rows(), params.at(static_cast<int>(i)).cols());
        }
    }

    void apply(ParamSet& params, const std::vector<Matrix>& grads, double lr) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++step;
        const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step));
        const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step));
        for (std::size_t i = 0; i < grads.size(); ++i) {
            auto& mi = m[i].data();
            auto& vi = v[i].data();
            auto& pi = params.at(static_cast<int>(i)).data();
            const auto& gi = grads[i].data();
            for (std::size_t k = 0; k < gi.size(); ++k) {
                mi[k] = b1 * mi[k] + (1.0 - b1) * gi[k];
                vi[k] = b2 * vi[k] + (1.0 - b2) * gi[k] * gi[k];
                pi[k] -= lr * (mi[k] / corr1) / (std::sqrt(vi[k] / corr2) + eps);
            }
        }
    }
};

// Loss and gradients for one event, accumulated into grads with weight scale.
inline double event_backward(const BiGcnModel& model, const PropagationEvent& ev,
                             std::vector<Matrix>& grads, double scale, bool& correct) {
    ForwardResult fr = forward(model, ev);
    Vector dlogits;
    const double loss = softmax_cross_entropy(fr.logits, ev.label, dlogits);
    correct = fr.predicted == ev.label;

    Matrix seed(1, dlogits.size());
    for (std::size_t c = 0; c < dlogits.size(); ++c) seed(0, c) = dlogits[c] * scale;
    Gradients g = grad_backward(fr.tape, model.params, fr.logits_id, seed);
    for (std::size_t i = 0; i < grads.size(); ++i) add_inplace(grads[i], g.param_grads[i]);

    const Matrix& dX = g.value_grad(fr.x_id);
    const int embed_id = model.params.id("embed");
    Matrix* pw_grad = nullptr;
    Matrix* pb_grad = nullptr;
    if (model.pooling == PoolingKind::Mlp) {
        pw_grad = &grads[static_cast<std::size_t>(model.params.id("pool_w"))];
        pb_grad = &grads[static_cast<std::size_t>(model.params.id("pool_b"))];
    }
    embed_backward(fr.embed, dX, grads[static_cast<std::size_t>(embed_id)], pw_grad, pb_grad, model.pool_w());
    return loss;
}

inline std::vector<Matrix> zero_like(const ParamSet& params) {
    std::vector<Matrix> g;
    for (std::size_t i = 0; i < params.count(); ++i)
        g.emplace_back(params.at(static_cast<int>(i)).rows(), params.at(static_cast<int>(i)).cols());
    return g;
}

}  // namespace detail

inline double evaluate_loss(const BiGcnModel& model, const std::vector<PropagationEvent>& events,
                            const std::vector<std::size_t>& idx, double& accuracy) {
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i : idx) {
        ForwardResult fr = forward(model, events[i]);
        Vector dl;
        loss += detail::softmax_cross_entropy(fr.logits, events[i].label, dl);
        if (fr.predicted == events[i].label) ++correct;
    }
    accuracy = idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
    return idx.empty() ? 0.0 : loss / static_cast<double>(idx.size());
}

// Deterministic minibatch Adam over cross-entropy with early stopping on the
// validation loss plateau.
inline TrainLog train(BiGcnModel& model, const std::vector<PropagationEvent>& events,
                      const TrainConfig& cfg) {
    cfg.validate();
    if (events.empty()) throw ConfigError("train: empty dataset");

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(events.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    std::size_t val_count = static_cast<std::size_t>(std::llround(cfg.val_fraction * static_cast<double>(events.size())));
    val_count = std::clamp<std::size_t>(val_count, 1, events.size() - 1);
    std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(val_count));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(val_count), order.end());

    std::set<int> train_labels;
    for (std::size_t i : train_idx) train_labels.insert(events[i].label);
    if (train_labels.size() < 2)
        throw ConfigError("train: training split contains a single class");

    detail::AdamState adam(model.params);
    TrainLog log;
    double best_val = std::numeric_limits<double>::infinity();
    int stall = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double train_loss = 0.0;
        std::size_t train_correct = 0;

        for (std::size_t start = 0; start < train_idx.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(train_idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<Matrix> grads = detail::zero_like(model.params);
            const double scale = 1.0 / static_cast<double>(end - start);
            for (std::size_t k = start; k < end; ++k) {
                bool correct = false;
                train_loss += detail::event_backward(model, events[train_idx[k]], grads, scale, correct);
                if (correct) ++train_correct;
            }
            adam.apply(model.params, grads, cfg.learning_rate);
        }

        EpochStats st;
        st.epoch = epoch;
        st.train_loss = train_loss / static_cast<double>(train_idx.size());
        st.train_accuracy = static_cast<double>(train_correct) / static_cast<double>(train_idx.size());
        st.val_loss = evaluate_loss(model, events, val_idx, st.val_accuracy);
        log.epochs.push_back(st);
        log.stopped_epoch = epoch;

        if (st.val_loss < best_val - 1e-12) {
            best_val = st.val_loss;
            stall = 0;
        } else if (++stall > cfg.patience) {
            break;
        }
    }
    log.best_val_loss = best_val;
    return log;
}

}  // namespace ctlrp
