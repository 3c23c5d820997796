#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctlrp/common.hpp"
#include "ctlrp/graphdata.hpp"
#include "ctlrp/matrix.hpp"
#include "ctlrp/tape.hpp"
#include "ctlrp/textembed.hpp"

namespace ctlrp {

// Two-branch graph convolutional classifier: shared token embedding, a
// two-layer conv stack over the top-down view and another over the bottom-up
// view, mean readout per branch, concatenation, linear classifier.
struct BiGcnModel {
    PoolingKind pooling = PoolingKind::Mean;
    int vocab_size = 0;
    int embed_dim = 32;
    int hidden_dim = 64;
    int num_classes = 0;
    std::uint64_t training_seed = 0;
    ParamSet params;

    static BiGcnModel init(int vocab_size, int num_classes, std::uint64_t seed,
                           PoolingKind pooling = PoolingKind::Mean,
                           int embed_dim = 32, int hidden_dim = 64) {
        if (vocab_size <= 0 || num_classes < 2 || embed_dim <= 0 || hidden_dim <= 0)
            throw ConfigError("model dims must be positive, num_classes >= 2");
        BiGcnModel m;
        m.pooling = pooling;
        m.vocab_size = vocab_size;
        m.num_classes = num_classes;
        m.embed_dim = embed_dim;
        m.hidden_dim = hidden_dim;
        m.training_seed = seed;

        std::mt19937_64 rng(seed);
        auto uniform = [&rng](std::size_t rows, std::size_t cols, double half_range) {
            std::uniform_real_distribution<double> dist(-half_range, half_range);
            Matrix w(rows, cols);
            for (double& v : w.data()) v = dist(rng);
            return w;
        };
        const std::size_t vs = static_cast<std::size_t>(vocab_size);
        const std::size_t ed = static_cast<std::size_t>(embed_dim);
        const std::size_t hd = static_cast<std::size_t>(hidden_dim);
        const std::size_t nc = static_cast<std::size_t>(num_classes);

        m.params.add("embed", uniform(vs, ed, 0.5 / std::sqrt(static_cast<double>(embed_dim))));
        if (pooling == PoolingKind::Mlp) {
            m.params.add("pool_w", uniform(ed, ed, 1.0 / std::sqrt(static_cast<double>(embed_dim))));
            m.params.add("pool_b", Matrix(1, ed));
        }
        for (const std::string& branch : {"td", "bu"}) {
            m.params.add(branch + "_w1", uniform(ed, hd, 1.0 / std::sqrt(static_cast<double>(embed_dim))));
            m.params.add(branch + "_b1", Matrix(1, hd));
            m.params.add(branch + "_w2", uniform(hd, hd, 1.0 / std::sqrt(static_cast<double>(hidden_dim))));
            m.params.add(branch + "_b2", Matrix(1, hd));
        }
        m.params.add("cls_w", uniform(2 * hd, nc, 1.0 / std::sqrt(2.0 * static_cast<double>(hidden_dim))));
        m.params.add("cls_b", Matrix(1, nc));
        return m;
    }

    const Matrix* pool_w() const { return pooling == PoolingKind::Mlp ? &params.at("pool_w") : nullptr; }
    const Matrix* pool_b() const { return pooling == PoolingKind::Mlp ? &params.at("pool_b") : nullptr; }

    void zero_biases() {
        for (const std::string& n : {"td_b1", "td_b2", "bu_b1", "bu_b2", "cls_b"})
            params.at(n) = Matrix(params.at(n).rows(), params.at(n).cols());
    }
};

struct ForwardResult {
    AdjacencyViews views;
    EmbedTrace embed;
    Tape tape;
    int x_id = -1;       // node feature matrix on the tape
    int td_h2 = -1;      // final conv relu output, top-down branch
    int bu_h2 = -1;      // final conv relu output, bottom-up branch
    int logits_id = -1;
    Vector logits;
    int predicted = 0;
};

namespace detail {
inline int conv_branch(Tape& tape, const ParamSet& params, int x_id, const Matrix& adj,
                       const std::string& branch) {
    int h = tape.aggregate(x_id, adj);
    h = tape.linear(h, params, params.id(branch + "_w1"), params.id(branch + "_b1"));
    h = tape.relu(h);
    h = tape.aggregate(h, adj);
    h = tape.linear(h, params, params.id(branch + "_w2"), params.id(branch + "_b2"));
    return tape.relu(h);
}
}  // namespace detail

inline ForwardResult forward_from_embedding(const BiGcnModel& model, AdjacencyViews views, EmbedTrace embed) {
    ForwardResult r;
    r.views = std::move(views);
    r.embed = std::move(embed);
    if (r.embed.node_features.cols() != static_cast<std::size_t>(model.embed_dim))
        throw ConfigError("model error: embedding dim mismatch");

    r.x_id = r.tape.push_value(r.embed.node_features);
    r.td_h2 = detail::conv_branch(r.tape, model.params, r.x_id, r.views.top_down, "td");
    r.bu_h2 = detail::conv_branch(r.tape, model.params, r.x_id, r.views.bottom_up, "bu");
    int td_read = r.tape.mean_readout(r.td_h2);
    int bu_read = r.tape.mean_readout(r.bu_h2);
    int cat = r.tape.concat(td_read, bu_read);
    r.logits_id = r.tape.linear(cat, model.params, model.params.id("cls_w"), model.params.id("cls_b"));

    const Matrix& y = r.tape.value(r.logits_id);
    r.logits.assign(y.data().begin(), y.data().end());
    r.predicted = 0;
    for (std::size_t c = 1; c < r.logits.size(); ++c)
        if (r.logits[c] > r.logits[static_cast<std::size_t>(r.predicted)]) r.predicted = static_cast<int>(c);
    return r;
}

inline ForwardResult forward(const BiGcnModel& model, const PropagationEvent& event) {
    return forward_from_embedding(
        model, build_adjacency(event),
        embed_event(event, model.params.at("embed"), model.pooling, model.pool_w(), model.pool_b()));
}

// Forward with the given token vectors removed before pooling. A node whose
// tokens are all dropped keeps a zero feature vector; |V| stays fixed.
inline Vector perturbed_forward(const BiGcnModel& model, const PropagationEvent& event,
                                const std::vector<TokenDrop>& drops,
                                const AdjacencyViews* views = nullptr) {
    EmbedTrace embed = embed_event(event, model.params.at("embed"), model.pooling,
                                   model.pool_w(), model.pool_b(), &drops);
    ForwardResult r = forward_from_embedding(model, views ? *views : build_adjacency(event), std::move(embed));
    return r.logits;
}

inline Vector perturbed_forward(const BiGcnModel& model, const PropagationEvent& event,
                                std::size_t node, std::size_t token_pos,
                                const AdjacencyViews* views = nullptr) {
    std::vector<TokenDrop> drops{{node, token_pos}};
    return perturbed_forward(model, event, drops, views);
}

// ---- Checkpoint format (versioned JSON, exact double round-trip) ----

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_to_json(const BiGcnModel& m) {
    nlohmann::json tensors = nlohmann::json::object();
    for (std::size_t i = 0; i < m.params.count(); ++i) {
        const Matrix& t = m.params.at(static_cast<int>(i));
        tensors[m.params.name(static_cast<int>(i))] = {
            {"rows", t.rows()}, {"cols", t.cols()}, {"data", t.data()}};
    }
    return nlohmann::json{{"format", "ctlrp-checkpoint"},
                          {"version", kCheckpointVersion},
                          {"pooling", to_string(m.pooling)},
                          {"vocab_size", m.vocab_size},
                          {"embed_dim", m.embed_dim},
                          {"hidden_dim", m.hidden_dim},
                          {"num_classes", m.num_classes},
                          {"training_seed", m.training_seed},
                          {"params", std::move(tensors)}};
}

inline BiGcnModel checkpoint_from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "ctlrp-checkpoint")
        throw IngestError("not a ctlrp checkpoint", 0);
    if (j.at("version").get<int>() != kCheckpointVersion)
        throw IngestError("unsupported checkpoint version", 0);
    BiGcnModel m;
    m.pooling = pooling_from_string(j.at("pooling").get<std::string>());
    m.vocab_size = j.at("vocab_size").get<int>();
    m.embed_dim = j.at("embed_dim").get<int>();
    m.hidden_dim = j.at("hidden_dim").get<int>();
    m.num_classes = j.at("num_classes").get<int>();
    m.training_seed = j.at("training_seed").get<std::uint64_t>();
    // Parameter insertion order is fixed so gradient slots line up after load.
    BiGcnModel shaped = BiGcnModel::init(m.vocab_size, m.num_classes, m.training_seed,
                                         m.pooling, m.embed_dim, m.hidden_dim);
    const auto& tensors = j.at("params");
    for (std::size_t i = 0; i < shaped.params.count(); ++i) {
        const std::string& name = shaped.params.name(static_cast<int>(i));
        const auto& jt = tensors.at(name);
        Matrix t(jt.at("rows").get<std::size_t>(), jt.at("cols").get<std::size_t>(),
                 jt.at("data").get<std::vector<double>>());
        if (t.rows() != shaped.params.at(static_cast<int>(i)).rows() ||
            t.cols() != shaped.params.at(static_cast<int>(i)).cols())
            throw IngestError("checkpoint tensor '" + name + "' has wrong shape", 0);
        shaped.params.at(static_cast<int>(i)) = std::move(t);
    }
    return shaped;
}

}  // namespace ctlrp
