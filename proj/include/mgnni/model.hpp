#pragma once

// Full multiscale model: MLP encoder -> bank of implicit scale modules ->
// per-node attention over scales -> linear decoder (optionally after sum pooling).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mgnni/equilibrium.hpp"
#include "mgnni/error.hpp"
#include "mgnni/graph.hpp"
#include "mgnni/numerics.hpp"
#include "mgnni/random.hpp"

namespace mgnni {

enum class Task { node_classification, graph_classification };

inline const char* to_string(Task t) {
    return t == Task::node_classification ? "node" : "graph";
}

struct Linear {
    DenseMatrix weight; // out x in
    DenseMatrix bias;   // out x 1, or 0 x 0 for a bias-free layer

    bool has_bias() const noexcept { return bias.rows() > 0; }
};

/// y = W x + b applied to every column of x.
inline DenseMatrix linear_forward(const Linear& layer, const DenseMatrix& x) {
    DenseMatrix y = matmul(layer.weight, x);
    if (!layer.has_bias()) return y;
    for (std::size_t i = 0; i < y.rows(); ++i) {
        const double b = layer.bias(i, 0);
        for (double& v : y.row(i)) v += b;
    }
    return y;
}

inline DenseMatrix row_sums(const DenseMatrix& m) {
    DenseMatrix out(m.rows(), 1);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double acc = 0.0;
        for (double v : m.row(i)) acc += v;
        out(i, 0) = acc;
    }
    return out;
}

/// Linear layers with ReLU after each one (including the last). Dropout is
/// applied to the input of every layer in training mode.
struct MlpEncoder {
    std::vector<Linear> layers;
    double dropout_rate = 0.5;

    static MlpEncoder init(const std::vector<std::size_t>& dims, double dropout_rate, Rng& rng,
                           bool with_bias = true) {
        if (dims.size() < 2) throw ShapeError("MlpEncoder: need at least input and output dims");
        if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw DomainError("MlpEncoder: dropout in [0,1)");
        MlpEncoder e;
        e.dropout_rate = dropout_rate;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l)
            e.layers.push_back({glorot_uniform(dims[l + 1], dims[l], rng),
                                with_bias ? DenseMatrix(dims[l + 1], 1) : DenseMatrix()});
        return e;
    }

    std::size_t input_dim() const { return layers.front().weight.cols(); }
    std::size_t output_dim() const { return layers.back().weight.rows(); }

    void validate() const {
        if (layers.empty()) throw ShapeError("MlpEncoder: no layers");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            if (layers[l].has_bias() &&
                (layers[l].bias.rows() != layers[l].weight.rows() || layers[l].bias.cols() != 1))
                throw ShapeError("MlpEncoder: bias shape mismatch in layer " + std::to_string(l));
            if (l > 0 && layers[l].weight.cols() != layers[l - 1].weight.rows())
                throw ShapeError("MlpEncoder: layer " + std::to_string(l) + " does not chain");
        }
    }
};

struct EncoderTrace {
    std::vector<DenseMatrix> inputs;   // layer inputs after dropout
    std::vector<DenseMatrix> masks;    // inverted-dropout multipliers (empty when inactive)
    std::vector<DenseMatrix> preact;   // W x + b per layer
    DenseMatrix output;
};

inline EncoderTrace encoder_forward(const MlpEncoder& enc, const DenseMatrix& x, bool train_mode, Rng* rng) {
    if (x.rows() != enc.input_dim())
        throw ShapeError("encoder: feature dim " + std::to_string(x.rows()) + " != encoder input " +
                         std::to_string(enc.input_dim()));
    const bool drop = train_mode && enc.dropout_rate > 0.0;
    if (drop && rng == nullptr) throw DomainError("encoder: dropout in training mode needs an rng");
    EncoderTrace t;
    DenseMatrix cur = x;
    for (const Linear& layer : enc.layers) {
        if (drop) {
            std::bernoulli_distribution keep(1.0 - enc.dropout_rate);
            DenseMatrix mask(cur.rows(), cur.cols());
            const double s = 1.0 / (1.0 - enc.dropout_rate);
            for (double& v : mask.data()) v = keep(*rng) ? s : 0.0;
            cur = hadamard(cur, mask);
            t.masks.push_back(std::move(mask));
        }
        t.inputs.push_back(cur);
        DenseMatrix pre = linear_forward(layer, cur);
        cur = relu_map(pre);
        t.preact.push_back(std::move(pre));
    }
    t.output = std::move(cur);
    return t;
}

/// Returns per-layer gradients given dL/d(output).
inline std::vector<Linear> encoder_backward(const MlpEncoder& enc, const EncoderTrace& t,
                                            const DenseMatrix& grad_out) {
    std::vector<Linear> grads(enc.layers.size());
    DenseMatrix g = grad_out;
    for (std::size_t l = enc.layers.size(); l-- > 0;) {
        const DenseMatrix& pre = t.preact[l];
        for (std::size_t k = 0; k < g.size(); ++k)
            if (!(pre.data()[k] > 0.0)) g.data()[k] = 0.0;
        grads[l].weight = matmul_nt(g, t.inputs[l]);
        if (enc.layers[l].has_bias()) grads[l].bias = row_sums(g);
        if (l == 0) break;
        g = matmul_tn(enc.layers[l].weight, g);
        if (!t.masks.empty()) g = hadamard(g, t.masks[l]);
    }
    return grads;
}

/// beta = q^T tanh(W_a z + b_a) per node and scale.
struct AttentionParams {
    DenseMatrix w_a; // h' x h
    DenseMatrix b_a; // h' x 1
    DenseMatrix q;   // h' x 1
};

struct ModelConfig {
    std::size_t feature_dim = 0;
    std::vector<std::size_t> encoder_hidden{64}; // hidden widths between input and h
    bool encoder_bias = true;
    std::size_t hidden = 32;                     // h
    std::size_t attention_hidden = 0;            // h'; 0 means "same as h"
    std::size_t num_classes = 2;
    std::vector<unsigned> scales{1};
    double gamma = 0.8;
    double eps_f = 1e-5;
    double dropout = 0.5;
    Task task = Task::node_classification;
    bool multi_label = false;
    SolverConfig solver;
};

inline void check_distinct_scales(const std::vector<unsigned>& scales) {
    if (scales.empty()) throw DomainError("model: at least one scale is required");
    std::set<unsigned> seen;
    for (unsigned m : scales) {
        if (m < 1) throw DomainError("model: scales must be >= 1");
        if (!seen.insert(m).second)
            throw DomainError("model: duplicate scale " + std::to_string(m) + " (scales must be distinct)");
    }
}

struct MgnniModel {
    MlpEncoder encoder;
    std::vector<ScaleModule> scales;
    AttentionParams attention;
    DenseMatrix decoder_weight; // classes x h
    Task task = Task::node_classification;
    bool multi_label = false;
    SolverConfig solver_cfg;

    std::size_t hidden() const { return scales.front().hidden(); }
    std::size_t num_classes() const { return decoder_weight.rows(); }

    std::vector<unsigned> scale_set() const {
        std::vector<unsigned> out;
        for (const auto& s : scales) out.push_back(s.scale_m());
        return out;
    }

    /// Shape checks plus the distinct-scale rule.
    void validate(bool allow_duplicate_scales = false) const {
        encoder.validate();
        if (scales.empty()) throw DomainError("model: no scale modules");
        if (!allow_duplicate_scales) check_distinct_scales(scale_set());
        const std::size_t h = hidden();
        if (encoder.output_dim() != h) throw ShapeError("model: encoder output != hidden dim");
        for (const auto& s : scales)
            if (s.hidden() != h) throw ShapeError("model: scale modules must share hidden dim");
        const std::size_t ha = attention.w_a.rows();
        if (attention.w_a.cols() != h || attention.b_a.rows() != ha || attention.b_a.cols() != 1 ||
            attention.q.rows() != ha || attention.q.cols() != 1)
            throw ShapeError("model: attention parameter shapes do not chain");
        if (decoder_weight.cols() != h) throw ShapeError("model: decoder input != hidden dim");
        solver_cfg.validate();
    }

    static MgnniModel init(const ModelConfig& cfg, Rng& rng) {
        check_distinct_scales(cfg.scales);
        if (cfg.feature_dim == 0 || cfg.hidden == 0 || cfg.num_classes == 0)
            throw ShapeError("model: feature_dim, hidden and num_classes must be positive");
        MgnniModel m;
        std::vector<std::size_t> dims{cfg.feature_dim};
        dims.insert(dims.end(), cfg.encoder_hidden.begin(), cfg.encoder_hidden.end());
        dims.push_back(cfg.hidden);
        m.encoder = MlpEncoder::init(dims, cfg.dropout, rng, cfg.encoder_bias);
        for (unsigned s : cfg.scales)
            m.scales.emplace_back(glorot_uniform(cfg.hidden, cfg.hidden, rng, 0.5), cfg.gamma, s, cfg.eps_f);
        const std::size_t ha = cfg.attention_hidden == 0 ? cfg.hidden : cfg.attention_hidden;
        m.attention.w_a = glorot_uniform(ha, cfg.hidden, rng);
        m.attention.b_a = DenseMatrix(ha, 1);
        m.attention.q = glorot_uniform(ha, 1, rng);
        m.decoder_weight = glorot_uniform(cfg.num_classes, cfg.hidden, rng);
        m.task = cfg.task;
        m.multi_label = cfg.multi_label;
        m.solver_cfg = cfg.solver;
        m.validate();
        return m;
    }
};

struct ForwardTrace {
    EncoderTrace encoder;
    std::vector<EquilibriumResult> equilibria; // one per scale, in model order
    std::vector<DenseMatrix> att_hidden;       // tanh(W_a Z_t + b_a), h' x n
    DenseMatrix beta;                          // n x k
    DenseMatrix alpha;                         // n x k, rows sum to 1
    DenseMatrix fused;                         // Z', h x n
    DenseMatrix pooled;                        // h x G, graph task only
    DenseMatrix logits;                        // classes x n (node) or classes x G (graph)
    CsrMatrix s_transposed;
    std::vector<std::size_t> graph_of_node;    // graph task only
    std::size_t num_graphs = 0;

    const DenseMatrix& injected() const { return encoder.output; }
};

struct Gradients {
    std::vector<Linear> encoder;
    std::vector<DenseMatrix> f;
    AttentionParams attention;
    DenseMatrix decoder;
};

/// Column g of the result is the sum of z's columns i with graph_of_node[i] == g.
inline DenseMatrix sum_pool(const DenseMatrix& z, const std::vector<std::size_t>& graph_of_node,
                            std::size_t num_graphs) {
    if (z.cols() != graph_of_node.size())
        throw ShapeError("sum_pool: " + std::to_string(z.cols()) + " columns for " +
                         std::to_string(graph_of_node.size()) + " nodes");
    DenseMatrix out(z.rows(), num_graphs);
    for (std::size_t i = 0; i < z.rows(); ++i)
        for (std::size_t j = 0; j < z.cols(); ++j) out(i, graph_of_node[j]) += z(i, j);
    return out;
}

inline DenseMatrix sum_pool(const DenseMatrix& z, const GraphBatch& batch) {
    return sum_pool(z, batch.graph_of_node, batch.num_graphs);
}

namespace detail {

inline ForwardTrace forward_impl(const MgnniModel& model, const Graph& graph,
                                 const std::vector<std::size_t>* graph_of_node, std::size_t num_graphs,
                                 bool train_mode, Rng* rng) {
    ForwardTrace t;
    t.encoder = encoder_forward(model.encoder, graph.features, train_mode, rng);
    const DenseMatrix& h = t.encoder.output;
    const std::size_t n = graph.n, k = model.scales.size();

    t.equilibria.reserve(k);
    for (const ScaleModule& sm : model.scales) {
        EquilibriumResult r = forward_solve(sm, h, graph.s, model.solver_cfg);
        t.equilibria.push_back(std::move(r));
    }

    const AttentionParams& a = model.attention;
    t.beta = DenseMatrix(n, k);
    for (std::size_t s = 0; s < k; ++s) {
        DenseMatrix u = tanh_map(linear_forward({a.w_a, a.b_a}, t.equilibria[s].z_star));
        DenseMatrix b = matmul_tn(a.q, u); // 1 x n
        for (std::size_t i = 0; i < n; ++i) t.beta(i, s) = b(0, i);
        t.att_hidden.push_back(std::move(u));
    }
    t.alpha = softmax_rows(t.beta);

    t.fused = DenseMatrix(model.hidden(), n);
    for (std::size_t s = 0; s < k; ++s) {
        const DenseMatrix& z = t.equilibria[s].z_star;
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t i = 0; i < n; ++i) t.fused(r, i) += t.alpha(i, s) * z(r, i);
    }

    if (model.task == Task::graph_classification) {
        if (graph_of_node) {
            t.graph_of_node = *graph_of_node;
            t.num_graphs = num_graphs;
        } else {
            t.graph_of_node.assign(n, 0);
            t.num_graphs = 1;
        }
        t.pooled = sum_pool(t.fused, t.graph_of_node, t.num_graphs);
        t.logits = matmul(model.decoder_weight, t.pooled);
    } else {
        t.logits = matmul(model.decoder_weight, t.fused);
    }
    t.s_transposed = transpose(graph.s);
    return t;
}

} // namespace detail

/// Forward pass on a single graph. For graph classification the whole graph
/// is pooled into one column.
inline ForwardTrace forward(const MgnniModel& model, const Graph& graph, bool train_mode = false,
                            Rng* rng = nullptr) {
    if (graph.feature_dim() != model.encoder.input_dim())
        throw ShapeError("forward: graph feature dim " + std::to_string(graph.feature_dim()) +
                         " != model input dim " + std::to_string(model.encoder.input_dim()));
    return detail::forward_impl(model, graph, nullptr, 1, train_mode, rng);
}

/// Forward pass on a batch; graph-level logits have one column per graph.
inline ForwardTrace forward(const MgnniModel& model, const GraphBatch& batch, bool train_mode = false,
                            Rng* rng = nullptr) {
    if (batch.merged.feature_dim() != model.encoder.input_dim())
        throw ShapeError("forward: batch feature dim " + std::to_string(batch.merged.feature_dim()) +
                         " != model input dim " + std::to_string(model.encoder.input_dim()));
    return detail::forward_impl(model, batch.merged, &batch.graph_of_node, batch.num_graphs, train_mode, rng);
}

struct BackwardOptions {
    bool detach_attention = false; // treat alpha as constants (ablation)
};

/// Gradients of a loss with dL/dlogits = grad_logits through the whole model,
/// using implicit differentiation at every equilibrium.
inline Gradients backward(const MgnniModel& model, const Graph& graph, const ForwardTrace& t,
                          const DenseMatrix& grad_logits, BackwardOptions opts = {}) {
    if (!grad_logits.same_shape(t.logits))
        throw ShapeError("backward: grad_logits " + shape_str(grad_logits) + " vs logits " + shape_str(t.logits));
    const std::size_t n = graph.n, k = model.scales.size();
    Gradients g;

    DenseMatrix d_fused;
    if (model.task == Task::graph_classification) {
        g.decoder = matmul_nt(grad_logits, t.pooled);
        const DenseMatrix d_pooled = matmul_tn(model.decoder_weight, grad_logits);
        d_fused = DenseMatrix(d_pooled.rows(), n);
        for (std::size_t r = 0; r < d_pooled.rows(); ++r)
            for (std::size_t i = 0; i < n; ++i) d_fused(r, i) = d_pooled(r, t.graph_of_node[i]);
    } else {
        g.decoder = matmul_nt(grad_logits, t.fused);
        d_fused = matmul_tn(model.decoder_weight, grad_logits);
    }

    // Value path and softmax path of z'_i = sum_t alpha_it z_it.
    std::vector<DenseMatrix> d_z(k, DenseMatrix(model.hidden(), n));
    DenseMatrix d_alpha(n, k);
    for (std::size_t s = 0; s < k; ++s) {
        const DenseMatrix& z = t.equilibria[s].z_star;
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t i = 0; i < n; ++i) {
                d_z[s](r, i) = t.alpha(i, s) * d_fused(r, i);
                d_alpha(i, s) += d_fused(r, i) * z(r, i);
            }
    }

    const AttentionParams& a = model.attention;
    g.attention.w_a = DenseMatrix(a.w_a.rows(), a.w_a.cols());
    g.attention.b_a = DenseMatrix(a.b_a.rows(), 1);
    g.attention.q = DenseMatrix(a.q.rows(), 1);
    if (!opts.detach_attention) {
        DenseMatrix d_beta(n, k);
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t s = 0; s < k; ++s) dot += t.alpha(i, s) * d_alpha(i, s);
            for (std::size_t s = 0; s < k; ++s) d_beta(i, s) = t.alpha(i, s) * (d_alpha(i, s) - dot);
        }
        for (std::size_t s = 0; s < k; ++s) {
            const DenseMatrix& u = t.att_hidden[s];
            DenseMatrix d_pre(u.rows(), n);
            for (std::size_t r = 0; r < u.rows(); ++r)
                for (std::size_t i = 0; i < n; ++i) {
                    const double db = d_beta(i, s);
                    g.attention.q(r, 0) += db * u(r, i);
                    d_pre(r, i) = db * a.q(r, 0) * (1.0 - u(r, i) * u(r, i));
                }
            axpy(g.attention.w_a, 1.0, matmul_nt(d_pre, t.equilibria[s].z_star));
            axpy(g.attention.b_a, 1.0, row_sums(d_pre));
            axpy(d_z[s], 1.0, matmul_tn(a.w_a, d_pre));
        }
    }

    // Implicit differentiation per scale, accumulated in scale-list order.
    DenseMatrix d_injected(model.hidden(), n);
    for (std::size_t s = 0; s < k; ++s) {
        const ScaleModule& sm = model.scales[s];
        const DenseMatrix u = adjoint_solve_transposed(sm, t.s_transposed, d_z[s], model.solver_cfg).z_star;
        g.f.push_back(grad_f(sm, u, t.equilibria[s].z_star, graph.s));
        axpy(d_injected, 1.0, grad_injected(u));
    }
    g.encoder = encoder_backward(model.encoder, t.encoder, d_injected);
    return g;
}

inline Gradients backward(const MgnniModel& model, const GraphBatch& batch, const ForwardTrace& t,
                          const DenseMatrix& grad_logits, BackwardOptions opts = {}) {
    return backward(model, batch.merged, t, grad_logits, opts);
}

/// A parameter tensor paired with whether weight decay applies to it.
struct ParamRef {
    DenseMatrix* value;
    bool decay;
};

/// Every trainable tensor in a fixed order shared with gradient_refs().
inline std::vector<ParamRef> parameter_refs(MgnniModel& m) {
    std::vector<ParamRef> out;
    for (Linear& l : m.encoder.layers) {
        out.push_back({&l.weight, true});
        if (l.has_bias()) out.push_back({&l.bias, false});
    }
    for (ScaleModule& s : m.scales) out.push_back({&s.f_weight(), true});
    out.push_back({&m.attention.w_a, true});
    out.push_back({&m.attention.b_a, false});
    out.push_back({&m.attention.q, true});
    out.push_back({&m.decoder_weight, true});
    return out;
}

inline std::vector<const DenseMatrix*> gradient_refs(const Gradients& g) {
    std::vector<const DenseMatrix*> out;
    for (const Linear& l : g.encoder) {
        out.push_back(&l.weight);
        if (l.has_bias()) out.push_back(&l.bias);
    }
    for (const DenseMatrix& f : g.f) out.push_back(&f);
    out.push_back(&g.attention.w_a);
    out.push_back(&g.attention.b_a);
    out.push_back(&g.attention.q);
    out.push_back(&g.decoder);
    return out;
}

/// Argmax per column, ties toward the lower class index.
inline std::vector<int> argmax_columns(const DenseMatrix& logits) {
    std::vector<int> out(logits.cols(), 0);
    for (std::size_t j = 0; j < logits.cols(); ++j) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.rows(); ++c)
            if (logits(c, j) > logits(best, j)) best = c;
        out[j] = static_cast<int>(best);
    }
    return out;
}

/// sigmoid(logit) > 0.5, i.e. logit > 0.
inline DenseMatrix threshold_logits(const DenseMatrix& logits) {
    DenseMatrix out(logits.rows(), logits.cols());
    for (std::size_t k = 0; k < logits.size(); ++k) out.data()[k] = logits.data()[k] > 0.0 ? 1.0 : 0.0;
    return out;
}

struct Prediction {
    std::vector<int> classes; // single-label
    DenseMatrix multi_hot;    // multi-label
};

inline Prediction predict_from_logits(const MgnniModel& model, const DenseMatrix& logits) {
    Prediction p;
    if (model.multi_label)
        p.multi_hot = threshold_logits(logits);
    else
        p.classes = argmax_columns(logits);
    return p;
}

inline Prediction predict(const MgnniModel& model, const Graph& graph) {
    return predict_from_logits(model, forward(model, graph).logits);
}

inline Prediction predict(const MgnniModel& model, const GraphBatch& batch) {
    return predict_from_logits(model, forward(model, batch).logits);
}

} // namespace mgnni
