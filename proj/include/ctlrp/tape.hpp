#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctlrp/common.hpp"
#include "ctlrp/matrix.hpp"

namespace ctlrp {

// Named parameter tensors shared between forward traces, the optimizer and
// the checkpoint format. Bias vectors are stored as 1xN matrices.
class ParamSet {
public:
    int add(const std::string& name, Matrix value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter: " + name);
        index_[name] = static_cast<int>(tensors_.size());
        names_.push_back(name);
        tensors_.push_back(std::move(value));
        return static_cast<int>(tensors_.size()) - 1;
    }

    int id(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    std::size_t count() const { return tensors_.size(); }
    const std::string& name(int i) const { return names_[static_cast<std::size_t>(i)]; }
    const Matrix& at(int i) const { return tensors_[static_cast<std::size_t>(i)]; }
    Matrix& at(int i) { return tensors_[static_cast<std::size_t>(i)]; }
    const Matrix& at(const std::string& name) const { return tensors_[static_cast<std::size_t>(id(name))]; }
    Matrix& at(const std::string& name) { return tensors_[static_cast<std::size_t>(id(name))]; }

private:
    std::vector<std::string> names_;
    std::vector<Matrix> tensors_;
    std::unordered_map<std::string, int> index_;
};

enum class LayerKind { Linear, Relu, GraphAggregate, MeanReadout, Concat };

// One recorded layer application. Value ids index into Tape::values; the
// recorded output is exactly forward(input, params), so the sequence replays
// to the same logits bit-for-bit.
struct LayerTrace {
    LayerKind kind;
    int input = -1;
    int input2 = -1;   // Concat only
    int output = -1;
    int weight_param = -1;  // Linear only
    int bias_param = -1;    // Linear only; -1 for bias-free layers
    Matrix aggregate;       // GraphAggregate only: fixed propagation matrix
};

// Append-only record of a forward computation over a fixed op vocabulary.
// Gradients and LRP relevance both walk it in reverse.
class Tape {
public:
    std::vector<Matrix> values;
    std::vector<LayerTrace> traces;

    int push_value(Matrix v) {
        values.push_back(std::move(v));
        return static_cast<int>(values.size()) - 1;
    }

    const Matrix& value(int id) const { return values[static_cast<std::size_t>(id)]; }

    int linear(int in, const ParamSet& params, int weight_id, int bias_id = -1) {
        const Matrix& x = value(in);
        const Matrix& w = params.at(weight_id);
        Matrix out = matmul(x, w);
        if (bias_id >= 0) {
            const Matrix& b = params.at(bias_id);
            if (b.rows() != 1 || b.cols() != out.cols())
                throw DimensionError("linear: bias shape mismatch");
            for (std::size_t i = 0; i < out.rows(); ++i)
                for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += b(0, j);
        }
        out.check_finite("linear output");
        int out_id = push_value(std::move(out));
        traces.push_back({LayerKind::Linear, in, -1, out_id, weight_id, bias_id, {}});
        return out_id;
    }

    int relu(int in) {
        Matrix out = value(in);
        for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
        int out_id = push_value(std::move(out));
        traces.push_back({LayerKind::Relu, in, -1, out_id, -1, -1, {}});
        return out_id;
    }

    int aggregate(int in, Matrix propagation) {
        Matrix out = matmul(propagation, value(in));
        out.check_finite("aggregate output");
        int out_id = push_value(std::move(out));
        traces.push_back({LayerKind::GraphAggregate, in, -1, out_id, -1, -1, std::move(propagation)});
        return out_id;
    }

    int mean_readout(int in) {
        const Matrix& x = value(in);
        Matrix out(1, x.cols());
        for (std::size_t i = 0; i < x.rows(); ++i)
            for (std::size_t j = 0; j < x.cols(); ++j) out(0, j) += x(i, j);
        scale_inplace(out, 1.0 / static_cast<double>(x.rows()));
        int out_id = push_value(std::move(out));
        traces.push_back({LayerKind::MeanReadout, in, -1, out_id, -1, -1, {}});
        return out_id;
    }

    int concat(int a, int b) {
        const Matrix& xa = value(a);
        const Matrix& xb = value(b);
        if (xa.rows() != xb.rows()) throw DimensionError("concat: row mismatch");
        Matrix out(xa.rows(), xa.cols() + xb.cols());
        for (std::size_t i = 0; i < xa.rows(); ++i) {
            for (std::size_t j = 0; j < xa.cols(); ++j) out(i, j) = xa(i, j);
            for (std::size_t j = 0; j < xb.cols(); ++j) out(i, xa.cols() + j) = xb(i, j);
        }
        int out_id = push_value(std::move(out));
        traces.push_back({LayerKind::Concat, a, b, out_id, -1, -1, {}});
        return out_id;
    }
};

struct Gradients {
    std::vector<Matrix> value_grads;  // indexed by value id; empty matrix = untouched
    std::vector<Matrix> param_grads;  // indexed by param id, always shaped

    const Matrix& value_grad(int id) const { return value_grads[static_cast<std::size_t>(id)]; }
};

namespace detail {
inline Matrix& grad_slot(std::vector<Matrix>& grads, int id, const Matrix& like) {
    Matrix& g = grads[static_cast<std::size_t>(id)];
    if (g.empty() && !like.empty()) g = Matrix(like.rows(), like.cols());
    return g;
}
}  // namespace detail

// Exact reverse-mode gradients of a recorded computation. seed is
// d(objective)/d(final value), same shape as that value.
inline Gradients grad_backward(const Tape& tape, const ParamSet& params, int seed_value, const Matrix& seed) {
    if (tape.traces.empty()) throw ConfigError("grad_backward: empty trace");
    const Matrix& final_val = tape.value(seed_value);
    if (seed.rows() != final_val.rows() || seed.cols() != final_val.cols())
        throw DimensionError("grad_backward: seed shape mismatch");

    Gradients g;
    g.value_grads.resize(tape.values.size());
    g.param_grads.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i)
        g.param_grads.emplace_back(params.at(static_cast<int>(i)).rows(), params.at(static_cast<int>(i)).cols());
    g.value_grads[static_cast<std::size_t>(seed_value)] = seed;

    for (auto it = tape.traces.rbegin(); it != tape.traces.rend(); ++it) {
        const LayerTrace& t = *it;
        const Matrix& dout = g.value_grads[static_cast<std::size_t>(t.output)];
        if (dout.empty()) continue;
        switch (t.kind) {
            case LayerKind::Linear: {
                const Matrix& x = tape.value(t.input);
                const Matrix& w = params.at(t.weight_param);
                Matrix& din = detail::grad_slot(g.value_grads, t.input, x);
                add_inplace(din, matmul(dout, w.transposed()));
                add_inplace(g.param_grads[static_cast<std::size_t>(t.weight_param)],
                            matmul(x.transposed(), dout));
                if (t.bias_param >= 0) {
                    Matrix& db = g.param_grads[static_cast<std::size_t>(t.bias_param)];
                    for (std::size_t i = 0; i < dout.rows(); ++i)
                        for (std::size_t j = 0; j < dout.cols(); ++j) db(0, j) += dout(i, j);
                }
                break;
            }
            case LayerKind::Relu: {
                const Matrix& out = tape.value(t.output);
                Matrix& din = detail::grad_slot(g.value_grads, t.input, out);
                for (std::size_t i = 0; i < out.size(); ++i)
                    if (out.data()[i] > 0.0) din.data()[i] += dout.data()[i];
                break;
            }
            case LayerKind::GraphAggregate: {
                const Matrix& x = tape.value(t.input);
                Matrix& din = detail::grad_slot(g.value_grads, t.input, x);
                add_inplace(din, matmul(t.aggregate.transposed(), dout));
                break;
            }
            case LayerKind::MeanReadout: {
                const Matrix& x = tape.value(t.input);
                Matrix& din = detail::grad_slot(g.value_grads, t.input, x);
                const double inv = 1.0 / static_cast<double>(x.rows());
                for (std::size_t i = 0; i < x.rows(); ++i)
                    for (std::size_t j = 0; j < x.cols(); ++j) din(i, j) += dout(0, j) * inv;
                break;
            }
            case LayerKind::Concat: {
                const Matrix& xa = tape.value(t.input);
                const Matrix& xb = tape.value(t.input2);
                Matrix& da = detail::grad_slot(g.value_grads, t.input, xa);
                Matrix& db = detail::grad_slot(g.value_grads, t.input2, xb);
                for (std::size_t i = 0; i < xa.rows(); ++i) {
                    for (std::size_t j = 0; j < xa.cols(); ++j) da(i, j) += dout(i, j);
                    for (std::size_t j = 0; j < xb.cols(); ++j) db(i, j) += dout(i, xa.cols() + j);
                }
                break;
            }
        }
    }
    return g;
}

// Epsilon-LRP for one recorded linear layer. The denominator is the recorded
// output, so any bias contribution sits in the denominator and receives no
// outgoing relevance.
inline Matrix lrp_linear_backward(const Tape& tape, const ParamSet& params, const LayerTrace& t,
                                  const Matrix& upstream, const Epsilon& eps) {
    if (t.kind != LayerKind::Linear) throw ConfigError("lrp_linear_backward: not a linear trace");
    const Matrix& x = tape.value(t.input);
    const Matrix& out = tape.value(t.output);
    const Matrix& w = params.at(t.weight_param);
    if (upstream.rows() != out.rows() || upstream.cols() != out.cols())
        throw DimensionError("lrp_linear_backward: upstream shape mismatch");

    Matrix rel(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t k = 0; k < out.cols(); ++k) {
            const double factor = upstream(i, k) / eps.stabilize(out(i, k));
            if (factor == 0.0) continue;
            for (std::size_t j = 0; j < x.cols(); ++j)
                rel(i, j) += x(i, j) * w(j, k) * factor;
        }
    }
    return rel;
}

// ReLU passes relevance to its pre-activation unchanged.
inline Matrix lrp_relu_backward(const Matrix& upstream) { return upstream; }

// Epsilon-LRP through a fixed aggregation out = P*in, treating nodes as the
// neurons of a per-dimension linear layer with weights P.
inline Matrix lrp_aggregate_backward(const Tape& tape, const LayerTrace& t,
                                     const Matrix& upstream, const Epsilon& eps) {
    const Matrix& x = tape.value(t.input);
    const Matrix& out = tape.value(t.output);
    Matrix rel(x.rows(), x.cols());
    for (std::size_t v = 0; v < out.rows(); ++v) {
        for (std::size_t d = 0; d < out.cols(); ++d) {
            const double factor = upstream(v, d) / eps.stabilize(out(v, d));
            if (factor == 0.0) continue;
            for (std::size_t u = 0; u < x.rows(); ++u) {
                const double a = t.aggregate(v, u);
                if (a != 0.0) rel(u, d) += a * x(u, d) * factor;
            }
        }
    }
    return rel;
}

// Relevance backward over a whole tape. Relevance from multiple consumers of
// a value accumulates. Returns relevance per value id (empty = untouched).
inline std::vector<Matrix> lrp_backward(const Tape& tape, const ParamSet& params,
                                        int seed_value, const Matrix& seed, const Epsilon& eps) {
    std::vector<Matrix> rel(tape.values.size());
    rel[static_cast<std::size_t>(seed_value)] = seed;
    for (auto it = tape.traces.rbegin(); it != tape.traces.rend(); ++it) {
        const LayerTrace& t = *it;
        const Matrix& rout = rel[static_cast<std::size_t>(t.output)];
        if (rout.empty()) continue;
        switch (t.kind) {
            case LayerKind::Linear: {
                Matrix& rin = detail::grad_slot(rel, t.input, tape.value(t.input));
                add_inplace(rin, lrp_linear_backward(tape, params, t, rout, eps));
                break;
            }
            case LayerKind::Relu: {
                Matrix& rin = detail::grad_slot(rel, t.input, tape.value(t.input));
                add_inplace(rin, lrp_relu_backward(rout));
                break;
            }
            case LayerKind::GraphAggregate: {
                Matrix& rin = detail::grad_slot(rel, t.input, tape.value(t.input));
                add_inplace(rin, lrp_aggregate_backward(tape, t, rout, eps));
                break;
            }
            case LayerKind::MeanReadout: {
                // Uniform 1/|V| redistribution of the mean; conserves exactly.
                const Matrix& x = tape.value(t.input);
                Matrix& rin = detail::grad_slot(rel, t.input, x);
                const double inv = 1.0 / static_cast<double>(x.rows());
                for (std::size_t v = 0; v < x.rows(); ++v)
                    for (std::size_t d = 0; d < x.cols(); ++d) rin(v, d) += rout(0, d) * inv;
                break;
            }
            case LayerKind::Concat: {
                const Matrix& xa = tape.value(t.input);
                const Matrix& xb = tape.value(t.input2);
                Matrix& ra = detail::grad_slot(rel, t.input, xa);
                Matrix& rb = detail::grad_slot(rel, t.input2, xb);
                for (std::size_t i = 0; i < xa.rows(); ++i) {
                    for (std::size_t j = 0; j < xa.cols(); ++j) ra(i, j) += rout(i, j);
                    for (std::size_t j = 0; j < xb.cols(); ++j) rb(i, j) += rout(i, xa.cols() + j);
                }
                break;
            }
        }
    }
    return rel;
}

}  // namespace ctlrp
