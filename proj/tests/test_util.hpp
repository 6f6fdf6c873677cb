#pragma once

// Shared fixtures for the unit tests: random graphs and matrices, and
// comparison helpers.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mgnni/mgnni.hpp"

namespace mgnni::testing {

inline DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    return uniform_matrix(rows, cols, lo, hi, rng);
}

/// Erdos-Renyi style edge set; undirected edges are listed once.
inline std::vector<Edge> random_edges(std::size_t n, double p, Rng& rng, bool directed) {
    std::bernoulli_distribution coin(p);
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = directed ? 0 : i + 1; j < n; ++j)
            if (i != j && coin(rng)) edges.emplace_back(i, j);
    return edges;
}

inline Graph random_graph(std::size_t n, double p, std::uint64_t seed, std::size_t feature_dim = 3,
                          bool directed = false, std::size_t num_classes = 2) {
    Rng rng(seed);
    auto edges = random_edges(n, p, rng, directed);
    Labels labels;
    std::uniform_int_distribution<int> cls(0, static_cast<int>(num_classes) - 1);
    for (std::size_t i = 0; i < n; ++i) labels.classes.push_back(cls(rng));
    return make_graph(n, edges, random_matrix(feature_dim, n, rng), std::move(labels), directed);
}

/// Random CSR matrix with the given density and values in [-1, 1].
inline CsrMatrix random_csr(std::size_t rows, std::size_t cols, double density, Rng& rng) {
    std::bernoulli_distribution coin(density);
    std::uniform_real_distribution<double> val(-1.0, 1.0);
    std::vector<std::tuple<std::size_t, std::size_t, double>> t;
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            if (coin(rng)) t.emplace_back(i, j, val(rng));
    return CsrMatrix::from_triplets(rows, cols, std::move(t));
}

/// Naive triple loop, independent of the library kernels.
inline DenseMatrix naive_matmul(const DenseMatrix& a, const DenseMatrix& b) {
    DenseMatrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            long double acc = 0.0L;
            for (std::size_t k = 0; k < a.cols(); ++k) acc += static_cast<long double>(a(i, k)) * b(k, j);
            c(i, j) = static_cast<double>(acc);
        }
    return c;
}

inline double naive_frobenius(const DenseMatrix& m) {
    long double acc = 0.0L;
    for (double v : m.data()) acc += static_cast<long double>(v) * v;
    return static_cast<double>(std::sqrt(acc));
}

/// ||a - b||_F / max(||b||_F, tiny).
inline double rel_diff(const DenseMatrix& a, const DenseMatrix& b) {
    return naive_frobenius(sub(a, b)) / std::max(naive_frobenius(b), 1e-300);
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) { return max_abs(sub(a, b)); }

/// Random directed out-tree rooted at 0: every node i > 0 has one parent in [0, i).
inline std::vector<Edge> random_out_tree(std::size_t n, Rng& rng) {
    std::vector<Edge> edges;
    for (std::size_t i = 1; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> parent(0, i - 1);
        edges.emplace_back(parent(rng), i);
    }
    return edges;
}

/// Parameter-group names in parameter_refs() order.
inline std::vector<std::string> parameter_names(const MgnniModel& m) {
    std::vector<std::string> out;
    for (std::size_t l = 0; l < m.encoder.layers.size(); ++l) {
        out.push_back("encoder" + std::to_string(l) + ".weight");
        if (m.encoder.layers[l].has_bias()) out.push_back("encoder" + std::to_string(l) + ".bias");
    }
    for (const ScaleModule& s : m.scales) out.push_back("F[m=" + std::to_string(s.scale_m()) + "]");
    out.insert(out.end(), {"W_a", "b_a", "q", "decoder"});
    return out;
}

struct GroupCheck {
    std::string name;
    std::size_t entries = 0;
    std::size_t failures = 0;
    double worst_abs = 0.0; // largest |analytic - numeric|
};

/// Central finite differences of L = <w, logits(theta)> against backward(), for
/// every parameter entry. An entry passes when |a - n| <= atol + rtol |n|.
template <class Input>
std::vector<GroupCheck> gradient_check(const MgnniModel& model, const Input& input, const DenseMatrix& w,
                                       double step = 1e-5, double rtol = 1e-3, double atol = 1e-6) {
    const ForwardTrace t = forward(model, input);
    const Gradients g = backward(model, input, t, w);
    const auto grads = gradient_refs(g);
    const auto names = parameter_names(model);
    MgnniModel probe = model;
    auto params = parameter_refs(probe);
    std::vector<GroupCheck> out;
    for (std::size_t p = 0; p < params.size(); ++p) {
        GroupCheck c;
        c.name = names[p];
        DenseMatrix& v = *params[p].value;
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double orig = v.data()[k];
            v.data()[k] = orig + step;
            const double lp = inner_product(w, forward(probe, input).logits);
            v.data()[k] = orig - step;
            const double lm = inner_product(w, forward(probe, input).logits);
            v.data()[k] = orig;
            const double numeric = (lp - lm) / (2 * step);
            const double analytic = grads[p]->data()[k];
            const double err = std::abs(analytic - numeric);
            c.worst_abs = std::max(c.worst_abs, err);
            ++c.entries;
            if (err > atol + rtol * std::abs(numeric)) ++c.failures;
        }
        out.push_back(c);
    }
    return out;
}

/// Small model for gradient checks: tight solver, no dropout.
inline MgnniModel small_model(std::size_t feature_dim, std::size_t hidden, std::vector<unsigned> scales,
                              std::size_t classes, std::uint64_t seed, Task task = Task::node_classification) {
    ModelConfig cfg;
    cfg.feature_dim = feature_dim;
    cfg.encoder_hidden = {5};
    cfg.hidden = hidden;
    cfg.num_classes = classes;
    cfg.scales = std::move(scales);
    cfg.dropout = 0.0;
    cfg.task = task;
    cfg.solver.tol = 1e-13;
    cfg.solver.max_iters = 5000;
    Rng rng(seed);
    MgnniModel m = MgnniModel::init(cfg, rng);
    // Nonzero biases so their gradients are exercised away from the initial zeros.
    for (Linear& l : m.encoder.layers) l.bias = uniform_matrix(l.bias.rows(), 1, -0.1, 0.1, rng);
    m.attention.b_a = uniform_matrix(m.attention.b_a.rows(), 1, -0.1, 0.1, rng);
    return m;
}

} // namespace mgnni::testing
