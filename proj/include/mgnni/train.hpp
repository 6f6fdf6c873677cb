#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mgnni/csv.hpp"
#include "mgnni/error.hpp"
#include "mgnni/graph.hpp"
#include "mgnni/model.hpp"
#include "mgnni/numerics.hpp"
#include "mgnni/random.hpp"

namespace mgnni {

struct LossResult {
    double loss = 0.0;
    DenseMatrix grad; // same shape as the logits
};

/// Mean softmax cross-entropy over the masked columns of logits (classes x n).
inline LossResult cross_entropy(const DenseMatrix& logits, std::span<const int> labels,
                                std::span<const std::size_t> mask) {
    if (mask.empty()) throw EmptySelectionError("cross_entropy: empty mask");
    if (labels.size() != logits.cols()) throw ShapeError("cross_entropy: label count != logit columns");
    LossResult r{0.0, DenseMatrix(logits.rows(), logits.cols())};
    const double w = 1.0 / static_cast<double>(mask.size());
    for (std::size_t j : mask) {
        if (j >= logits.cols()) throw IndexError("cross_entropy: mask index out of range");
        const int y = labels[j];
        if (y < 0 || static_cast<std::size_t>(y) >= logits.rows())
            throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range");
        double mx = logits(0, j);
        for (std::size_t c = 1; c < logits.rows(); ++c) mx = std::max(mx, logits(c, j));
        double sum = 0.0;
        for (std::size_t c = 0; c < logits.rows(); ++c) sum += std::exp(logits(c, j) - mx);
        const double lse = mx + std::log(sum);
        r.loss += w * (lse - logits(static_cast<std::size_t>(y), j));
        for (std::size_t c = 0; c < logits.rows(); ++c) {
            const double p = std::exp(logits(c, j) - lse);
            r.grad(c, j) += w * (p - (static_cast<std::size_t>(y) == c ? 1.0 : 0.0));
        }
    }
    return r;
}

/// Mean per-entry sigmoid cross-entropy over the masked columns.
inline LossResult bce_with_logits(const DenseMatrix& logits, const DenseMatrix& targets,
                                  std::span<const std::size_t> mask) {
    if (mask.empty()) throw EmptySelectionError("bce_with_logits: empty mask");
    if (!logits.same_shape(targets)) throw ShapeError("bce_with_logits: target shape mismatch");
    LossResult r{0.0, DenseMatrix(logits.rows(), logits.cols())};
    const double w = 1.0 / static_cast<double>(mask.size() * logits.rows());
    for (std::size_t j : mask) {
        if (j >= logits.cols()) throw IndexError("bce_with_logits: mask index out of range");
        for (std::size_t c = 0; c < logits.rows(); ++c) {
            const double x = logits(c, j), y = targets(c, j);
            // log(1 + e^x) - y x, evaluated stably.
            r.loss += w * (std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x))));
            const double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            r.grad(c, j) = w * (sig - y);
        }
    }
    return r;
}

inline double accuracy(std::span<const int> preds, std::span<const int> labels, std::span<const std::size_t> mask) {
    if (mask.empty()) throw EmptySelectionError("accuracy: empty mask");
    std::size_t hit = 0;
    for (std::size_t j : mask) hit += preds[j] == labels[j] ? 1 : 0;
    return static_cast<double>(hit) / static_cast<double>(mask.size());
}

/// 2TP / (2TP + FP + FN) over every (node, class) pair in the mask.
inline double micro_f1(const DenseMatrix& preds, const DenseMatrix& labels, std::span<const std::size_t> mask) {
    if (mask.empty()) throw EmptySelectionError("micro_f1: empty mask");
    if (!preds.same_shape(labels)) throw ShapeError("micro_f1: shape mismatch");
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t j : mask)
        for (std::size_t c = 0; c < preds.rows(); ++c) {
            const bool p = preds(c, j) > 0.5, y = labels(c, j) > 0.5;
            tp += (p && y) ? 1 : 0;
            fp += (p && !y) ? 1 : 0;
            fn += (!p && y) ? 1 : 0;
        }
    const double denom = 2 * tp + fp + fn;
    return denom == 0.0 ? 1.0 : 2 * tp / denom;
}

struct AdamState {
    std::vector<DenseMatrix> m;
    std::vector<DenseMatrix> v;
    std::uint64_t step = 0;
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Bias-corrected Adam; weight decay is added to the gradient (grad += wd * param)
/// of decayed tensors before the moment updates.
inline void adam_step(AdamState& st, const std::vector<ParamRef>& params,
                      const std::vector<const DenseMatrix*>& grads) {
    if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient count mismatch");
    if (st.m.empty()) {
        for (const ParamRef& p : params) {
            st.m.emplace_back(p.value->rows(), p.value->cols());
            st.v.emplace_back(p.value->rows(), p.value->cols());
        }
    }
    if (st.m.size() != params.size()) throw ShapeError("adam_step: state does not match parameters");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t t = 0; t < params.size(); ++t) {
        DenseMatrix& p = *params[t].value;
        const DenseMatrix& g = *grads[t];
        if (!p.same_shape(g) || !p.same_shape(st.m[t]))
            throw ShapeError("adam_step: shape mismatch for tensor " + std::to_string(t));
        const double wd = params[t].decay ? st.weight_decay : 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            const double gk = g.data()[k] + wd * p.data()[k];
            double& mk = st.m[t].data()[k];
            double& vk = st.v[t].data()[k];
            mk = st.beta1 * mk + (1.0 - st.beta1) * gk;
            vk = st.beta2 * vk + (1.0 - st.beta2) * gk * gk;
            p.data()[k] -= st.lr * (mk / bc1) / (std::sqrt(vk / bc2) + st.eps);
        }
    }
}

struct TrainConfig {
    std::size_t epochs = 200;
    double lr = 0.01;
    double weight_decay = 5e-4;
    std::uint64_t seed = 0;
    std::size_t patience = 100;  // epochs without validation improvement
    bool record_time = true;     // false writes 0 in the seconds column
    std::size_t batch_size = 32; // graph classification only

    void validate() const {
        if (!(lr > 0.0)) throw DomainError("TrainConfig: lr must be > 0");
        if (weight_decay < 0.0) throw DomainError("TrainConfig: weight_decay must be >= 0");
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double val_acc = 0.0;
    std::vector<std::size_t> iters_per_scale;
    double seconds = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val = -1.0;
};

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,train_acc,val_acc,iters_per_scale,seconds\n";
    for (const EpochRecord& r : history) {
        os << r.epoch << ',' << format_double(r.train_loss) << ',' << format_double(r.train_acc) << ','
           << format_double(r.val_acc) << ',';
        for (std::size_t k = 0; k < r.iters_per_scale.size(); ++k) os << (k ? ";" : "") << r.iters_per_scale[k];
        os << ',' << format_double(r.seconds) << '\n';
    }
    return os.str();
}

/// Accuracy for single-label models, micro-F1 for multi-label ones.
inline double node_metric(const MgnniModel& model, const DenseMatrix& logits, const Labels& labels,
                          std::span<const std::size_t> mask) {
    if (model.multi_label) return micro_f1(threshold_logits(logits), labels.multi_hot, mask);
    return accuracy(argmax_columns(logits), labels.classes, mask);
}

inline LossResult node_loss(const MgnniModel& model, const DenseMatrix& logits, const Labels& labels,
                            std::span<const std::size_t> mask) {
    if (model.multi_label) return bce_with_logits(logits, labels.multi_hot, mask);
    return cross_entropy(logits, labels.classes, mask);
}

inline double evaluate(const MgnniModel& model, const Graph& graph, std::span<const std::size_t> mask) {
    return node_metric(model, forward(model, graph).logits, graph.labels, mask);
}

/// Full-batch node-classification training with early stopping on the
/// validation metric. On return `model` holds the best-validation parameters.
inline TrainResult train_loop(MgnniModel& model, const Graph& graph, const NodeSplit& split,
                              const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (graph.labels.empty()) throw ValidationError("train_loop: graph has no labels");
    TrainResult res;
    if (cfg.epochs == 0) return res;
    if (split.train.empty()) throw EmptySelectionError("train_loop: empty training mask");

    Rng rng(cfg.seed);
    AdamState adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    MgnniModel best = model;
    std::size_t since_best = 0;
    const auto& val_mask = split.val.empty() ? split.train : split.val;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        try {
            ForwardTrace tr = forward(model, graph, true, &rng);
            LossResult loss = node_loss(model, tr.logits, graph.labels, split.train);
            Gradients g = backward(model, graph, tr, loss.grad);
            adam_step(adam, parameter_refs(model), gradient_refs(g));
            rec.train_loss = loss.loss;
            for (const auto& eq : tr.equilibria) rec.iters_per_scale.push_back(eq.iterations);

            const DenseMatrix logits = forward(model, graph).logits;
            rec.train_acc = node_metric(model, logits, graph.labels, split.train);
            rec.val_acc = node_metric(model, logits, graph.labels, val_mask);
        } catch (const DivergenceError& e) {
            throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (cfg.record_time)
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.push_back(rec);

        if (rec.val_acc > res.best_val) {
            res.best_val = rec.val_acc;
            res.best_epoch = epoch;
            best = model;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    model = std::move(best);
    return res;
}

/// Graph-level training data: each graph carries one class label.
struct GraphDataset {
    std::vector<Graph> graphs;
    std::vector<int> labels;
};

inline double evaluate_graphs(const MgnniModel& model, const GraphDataset& data,
                              std::span<const std::size_t> idx, std::size_t batch_size = 32) {
    if (idx.empty()) throw EmptySelectionError("evaluate_graphs: empty selection");
    std::size_t hit = 0;
    for (std::size_t b = 0; b < idx.size(); b += batch_size) {
        std::vector<Graph> chunk;
        std::vector<int> y;
        for (std::size_t k = b; k < std::min(idx.size(), b + batch_size); ++k) {
            chunk.push_back(data.graphs[idx[k]]);
            y.push_back(data.labels[idx[k]]);
        }
        const auto pred = argmax_columns(forward(model, batch(chunk)).logits);
        for (std::size_t k = 0; k < y.size(); ++k) hit += pred[k] == y[k] ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(idx.size());
}

/// Mini-batch graph-classification training (sum pooling readout).
inline TrainResult train_graph_loop(MgnniModel& model, const GraphDataset& data, const NodeSplit& split,
                                    const TrainConfig& cfg) {
    cfg.validate();
    model.validate();
    if (model.task != Task::graph_classification)
        throw DomainError("train_graph_loop: model is not a graph-classification model");
    TrainResult res;
    if (cfg.epochs == 0) return res;
    if (split.train.empty()) throw EmptySelectionError("train_graph_loop: empty training selection");

    Rng rng(cfg.seed);
    AdamState adam;
    adam.lr = cfg.lr;
    adam.weight_decay = cfg.weight_decay;
    MgnniModel best = model;
    std::size_t since_best = 0;
    std::vector<std::size_t> order = split.train;
    const auto& val_idx = split.val.empty() ? split.train : split.val;
    const std::size_t bs = std::max<std::size_t>(1, cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        rec.epoch = epoch;
        rec.iters_per_scale.assign(model.scales.size(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        try {
            for (std::size_t b = 0; b < order.size(); b += bs) {
                std::vector<Graph> chunk;
                std::vector<int> y;
                for (std::size_t k = b; k < std::min(order.size(), b + bs); ++k) {
                    chunk.push_back(data.graphs[order[k]]);
                    y.push_back(data.labels[order[k]]);
                }
                const GraphBatch gb = batch(chunk);
                std::vector<std::size_t> all(y.size());
                std::iota(all.begin(), all.end(), std::size_t{0});
                ForwardTrace tr = forward(model, gb, true, &rng);
                LossResult loss = cross_entropy(tr.logits, y, all);
                Gradients g = backward(model, gb, tr, loss.grad);
                adam_step(adam, parameter_refs(model), gradient_refs(g));
                loss_sum += loss.loss * static_cast<double>(y.size());
                for (std::size_t s = 0; s < tr.equilibria.size(); ++s)
                    rec.iters_per_scale[s] = std::max(rec.iters_per_scale[s], tr.equilibria[s].iterations);
            }
            rec.train_loss = loss_sum / static_cast<double>(order.size());
            rec.train_acc = evaluate_graphs(model, data, split.train, bs);
            rec.val_acc = evaluate_graphs(model, data, val_idx, bs);
        } catch (const DivergenceError& e) {
            throw DivergenceError("epoch " + std::to_string(epoch) + ": " + e.what());
        }
        if (cfg.record_time)
            rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.history.push_back(rec);
        if (rec.val_acc > res.best_val) {
            res.best_val = rec.val_acc;
            res.best_epoch = epoch;
            best = model;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }
    model = std::move(best);
    return res;
}

} // namespace mgnni
