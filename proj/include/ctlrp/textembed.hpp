#pragma once

#include <string>
#include <vector>

#include "ctlrp/common.hpp"
#include "ctlrp/graphdata.hpp"
#include "ctlrp/matrix.hpp"

namespace ctlrp {

enum class PoolingKind { Mean, Max, Mlp };

inline std::string to_string(PoolingKind k) {
    switch (k) {
        case PoolingKind::Mean: return "mean";
        case PoolingKind::Max: return "max";
        case PoolingKind::Mlp: return "mlp";
    }
    return "?";
}

inline PoolingKind pooling_from_string(const std::string& s) {
    if (s == "mean") return PoolingKind::Mean;
    if (s == "max") return PoolingKind::Max;
    if (s == "mlp") return PoolingKind::Mlp;
    throw ConfigError("unknown pooling kind: " + s);
}

// How relevance is split from a node vector back onto its tokens. Conserving
// keeps per-dimension sums intact; PaperLiteral applies the printed mean/max
// formulas, which over-count the mean case by a factor of |T_v|.
enum class PoolBackwardMode { Conserving, PaperLiteral };

inline PoolBackwardMode pool_mode_from_string(const std::string& s) {
    if (s == "conserving") return PoolBackwardMode::Conserving;
    if (s == "paper-literal") return PoolBackwardMode::PaperLiteral;
    throw ConfigError("unknown pool backward mode: " + s);
}

// Per-node forward record of f_text: raw token vectors, the mlp stages when
// present, and the max-pool winners. Enough to rerun pooling backward.
struct NodeEmbedTrace {
    std::vector<int> tokens;
    std::vector<bool> dropped;        // perturbation mask; dropped tokens skip pooling
    Matrix token_vecs;                // |T_v| x D raw embeddings
    Matrix mlp_pre;                   // mlp only: |T_v| x D pre-activation
    Matrix mlp_hidden;                // mlp only: |T_v| x D relu output
    std::vector<long> winners;        // max only: winning token per dim, -1 if all dropped
    std::size_t live = 0;             // tokens participating in the pool
};

struct EmbedTrace {
    PoolingKind pooling = PoolingKind::Mean;
    std::vector<NodeEmbedTrace> nodes;
    Matrix node_features;             // |V| x D
};

namespace detail {

inline NodeEmbedTrace embed_node(const std::vector<int>& tokens, const std::vector<bool>* drop,
                                 const Matrix& table, PoolingKind pooling,
                                 const Matrix* pool_w, const Matrix* pool_b, Vector& feature_out) {
    const std::size_t dim = table.cols();
    NodeEmbedTrace nt;
    nt.tokens = tokens;
    nt.dropped.assign(tokens.size(), false);
    if (drop) nt.dropped = *drop;
    nt.token_vecs = Matrix(tokens.size(), dim);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= table.rows())
            throw InputError("token index " + std::to_string(tokens[t]) + " out of vocabulary");
        for (std::size_t d = 0; d < dim; ++d)
            nt.token_vecs(t, d) = table(static_cast<std::size_t>(tokens[t]), d);
        if (!nt.dropped[t]) ++nt.live;
    }

    // Source vectors the pool runs over: raw embeddings, or mlp hidden states.
    const Matrix* pooled = &nt.token_vecs;
    if (pooling == PoolingKind::Mlp) {
        if (!pool_w || !pool_b) throw ConfigError("mlp pooling requires pool parameters");
        nt.mlp_pre = matmul(nt.token_vecs, *pool_w);
        for (std::size_t t = 0; t < tokens.size(); ++t)
            for (std::size_t d = 0; d < nt.mlp_pre.cols(); ++d) nt.mlp_pre(t, d) += (*pool_b)(0, d);
        nt.mlp_hidden = nt.mlp_pre;
        for (double& v : nt.mlp_hidden.data()) v = v > 0.0 ? v : 0.0;
        pooled = &nt.mlp_hidden;
    }

    feature_out.assign(pooled->cols(), 0.0);
    if (nt.live == 0) return nt;  // fully perturbed node keeps a zero vector

    switch (pooling) {
        case PoolingKind::Mean:
        case PoolingKind::Mlp: {
            for (std::size_t t = 0; t < tokens.size(); ++t) {
                if (nt.dropped[t]) continue;
                for (std::size_t d = 0; d < pooled->cols(); ++d) feature_out[d] += (*pooled)(t, d);
            }
            for (double& v : feature_out) v /= static_cast<double>(nt.live);
            break;
        }
        case PoolingKind::Max: {
            nt.winners.assign(pooled->cols(), -1);
            for (std::size_t d = 0; d < pooled->cols(); ++d) {
                for (std::size_t t = 0; t < tokens.size(); ++t) {
                    if (nt.dropped[t]) continue;
                    // ties go to the lowest token position
                    if (nt.winners[d] < 0 || (*pooled)(t, d) > feature_out[d]) {
                        nt.winners[d] = static_cast<long>(t);
                        feature_out[d] = (*pooled)(t, d);
                    }
                }
            }
            break;
        }
    }
    return nt;
}

}  // namespace detail

// Token drops requested for a perturbed forward, as (node, token position).
using TokenDrop = std::pair<std::size_t, std::size_t>;

inline EmbedTrace embed_event(const PropagationEvent& event, const Matrix& table, PoolingKind pooling,
                              const Matrix* pool_w = nullptr, const Matrix* pool_b = nullptr,
                              const std::vector<TokenDrop>* drops = nullptr) {
    EmbedTrace tr;
    tr.pooling = pooling;
    const std::size_t n = event.posts.size();
    const std::size_t dim = table.cols();
    tr.node_features = Matrix(n, dim);

    std::vector<std::vector<bool>> drop_masks;
    if (drops && !drops->empty()) {
        drop_masks.resize(n);
        for (std::size_t v = 0; v < n; ++v) drop_masks[v].assign(event.posts[v].tokens.size(), false);
        for (const auto& [v, t] : *drops) {
            if (v >= n || t >= event.posts[v].tokens.size())
                throw InputError("token drop (" + std::to_string(v) + "," + std::to_string(t) + ") out of range");
            drop_masks[v][t] = true;
        }
    }

    for (std::size_t v = 0; v < n; ++v) {
        Vector feat;
        const std::vector<bool>* mask = drop_masks.empty() ? nullptr : &drop_masks[v];
        tr.nodes.push_back(detail::embed_node(event.posts[v].tokens, mask, table, pooling, pool_w, pool_b, feat));
        for (std::size_t d = 0; d < dim; ++d) tr.node_features(v, d) = feat[d];
    }
    tr.node_features.check_finite("node features");
    return tr;
}

// Relevance split from node features onto tokens: per node a |T_v| x D map.
inline std::vector<Matrix> lrp_pool_backward(const EmbedTrace& tr, const Matrix& node_rel,
                                             const Epsilon& eps, PoolBackwardMode mode,
                                             const Matrix* pool_w = nullptr) {
    if (node_rel.rows() != tr.nodes.size() || node_rel.cols() != tr.node_features.cols())
        throw DimensionError("lrp_pool_backward: node relevance shape mismatch");

    std::vector<Matrix> out;
    out.reserve(tr.nodes.size());
    for (std::size_t v = 0; v < tr.nodes.size(); ++v) {
        const NodeEmbedTrace& nt = tr.nodes[v];
        const std::size_t nt_count = nt.tokens.size();
        const std::size_t dim = tr.node_features.cols();
        Matrix rel(nt_count, dim);
        if (nt.live == 0) {
            out.push_back(std::move(rel));
            continue;
        }

        switch (tr.pooling) {
            case PoolingKind::Mean: {
                for (std::size_t d = 0; d < dim; ++d) {
                    const double rv = node_rel(v, d);
                    if (rv == 0.0) continue;
                    const double denom = eps.stabilize(tr.node_features(v, d));
                    for (std::size_t t = 0; t < nt_count; ++t) {
                        if (nt.dropped[t]) continue;
                        double share = nt.token_vecs(t, d) / denom * rv;
                        if (mode == PoolBackwardMode::Conserving)
                            share /= static_cast<double>(nt.live);
                        rel(t, d) = share;
                    }
                }
                break;
            }
            case PoolingKind::Max: {
                for (std::size_t d = 0; d < dim; ++d) {
                    const long w = nt.winners[d];
                    if (w < 0) continue;
                    const double rv = node_rel(v, d);
                    rel(static_cast<std::size_t>(w), d) =
                        mode == PoolBackwardMode::Conserving
                            ? rv
                            : nt.token_vecs(static_cast<std::size_t>(w), d) * rv;
                }
                break;
            }
            case PoolingKind::Mlp: {
                if (!pool_w) throw ConfigError("mlp pool backward requires pool weights");
                // mean rule down to each token's hidden state, relu pass-through,
                // then the epsilon rule through the per-token linear layer.
                Matrix hidden_rel(nt_count, dim);
                for (std::size_t d = 0; d < dim; ++d) {
                    const double rv = node_rel(v, d);
                    if (rv == 0.0) continue;
                    const double denom = eps.stabilize(tr.node_features(v, d));
                    for (std::size_t t = 0; t < nt_count; ++t) {
                        if (nt.dropped[t]) continue;
                        double share = nt.mlp_hidden(t, d) / denom * rv;
                        if (mode == PoolBackwardMode::Conserving)
                            share /= static_cast<double>(nt.live);
                        hidden_rel(t, d) = share;
                    }
                }
                for (std::size_t t = 0; t < nt_count; ++t) {
                    if (nt.dropped[t]) continue;
                    for (std::size_t k = 0; k < dim; ++k) {
                        const double rk = hidden_rel(t, k);
                        if (rk == 0.0) continue;
                        const double factor = rk / eps.stabilize(nt.mlp_pre(t, k));
                        for (std::size_t j = 0; j < dim; ++j)
                            rel(t, j) += nt.token_vecs(t, j) * (*pool_w)(j, k) * factor;
                    }
                }
                break;
            }
        }
        out.push_back(std::move(rel));
    }
    return out;
}

// z_t = sum over embedding dimensions of the token's relevance.
inline std::vector<Vector> token_attribution(const std::vector<Matrix>& token_rel) {
    std::vector<Vector> z;
    z.reserve(token_rel.size());
    for (const Matrix& m : token_rel) {
        Vector row(m.rows(), 0.0);
        for (std::size_t t = 0; t < m.rows(); ++t)
            for (std::size_t d = 0; d < m.cols(); ++d) row[t] += m(t, d);
        z.push_back(std::move(row));
    }
    return z;
}

// Accumulates d(loss)/d(node features) into the embedding table (and the mlp
// pool parameters when present).
inline void embed_backward(const EmbedTrace& tr, const Matrix& dX,
                           Matrix& table_grad, Matrix* pool_w_grad = nullptr,
                           Matrix* pool_b_grad = nullptr, const Matrix* pool_w = nullptr) {
    for (std::size_t v = 0; v < tr.nodes.size(); ++v) {
        const NodeEmbedTrace& nt = tr.nodes[v];
        if (nt.live == 0) continue;
        const std::size_t dim = dX.cols();
        switch (tr.pooling) {
            case PoolingKind::Mean: {
                const double inv = 1.0 / static_cast<double>(nt.live);
                for (std::size_t t = 0; t < nt.tokens.size(); ++t) {
                    if (nt.dropped[t]) continue;
                    const std::size_t row = static_cast<std::size_t>(nt.tokens[t]);
                    for (std::size_t d = 0; d < dim; ++d) table_grad(row, d) += dX(v, d) * inv;
                }
                break;
            }
            case PoolingKind::Max: {
                for (std::size_t d = 0; d < dim; ++d) {
                    const long w = nt.winners[d];
                    if (w < 0) continue;
                    const std::size_t row = static_cast<std::size_t>(nt.tokens[static_cast<std::size_t>(w)]);
                    table_grad(row, d) += dX(v, d);
                }
                break;
            }
            case PoolingKind::Mlp: {
                if (!pool_w_grad || !pool_b_grad || !pool_w)
                    throw ConfigError("mlp embed backward requires pool gradients");
                const double inv = 1.0 / static_cast<double>(nt.live);
                for (std::size_t t = 0; t < nt.tokens.size(); ++t) {
                    if (nt.dropped[t]) continue;
                    const std::size_t row = static_cast<std::size_t>(nt.tokens[t]);
                    for (std::size_t k = 0; k < dim; ++k) {
                        if (nt.mlp_pre(t, k) <= 0.0) continue;
                        const double dpre = dX(v, k) * inv;
                        (*pool_b_grad)(0, k) += dpre;
                        for (std::size_t j = 0; j < dim; ++j) {
                            (*pool_w_grad)(j, k) += nt.token_vecs(t, j) * dpre;
                            table_grad(row, j) += (*pool_w)(j, k) * dpre;
                        }
                    }
                }
                break;
            }
        }
    }
}

}  // namespace ctlrp
