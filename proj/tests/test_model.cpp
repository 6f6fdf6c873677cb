#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "mgnni/model.hpp"
#include "test_util.hpp"

using namespace mgnni;
using namespace mgnni::testing;

namespace {

MgnniModel permute_scales(const MgnniModel& m, const std::vector<std::size_t>& order) {
    MgnniModel out = m;
    out.scales.clear();
    for (std::size_t i : order) out.scales.push_back(m.scales[i]);
    return out;
}

/// Logits with the attention weights frozen at `alpha` (test oracle for the detached ablation).
DenseMatrix logits_with_fixed_alpha(const MgnniModel& m, const Graph& g, const DenseMatrix& alpha) {
    const DenseMatrix h = encoder_forward(m.encoder, g.features, false, nullptr).output;
    DenseMatrix fused(m.hidden(), g.n);
    for (std::size_t s = 0; s < m.scales.size(); ++s) {
        const DenseMatrix z = forward_solve(m.scales[s], h, g.s, m.solver_cfg).z_star;
        for (std::size_t r = 0; r < z.rows(); ++r)
            for (std::size_t i = 0; i < g.n; ++i) fused(r, i) += alpha(i, s) * z(r, i);
    }
    return naive_matmul(m.decoder_weight, fused);
}

} // namespace

TEST(ModelInit, ShapesAndDefaults) {
    ModelConfig cfg;
    cfg.feature_dim = 7;
    cfg.encoder_hidden = {6};
    cfg.hidden = 4;
    cfg.num_classes = 3;
    cfg.scales = {1, 3};
    Rng rng(1);
    const MgnniModel m = MgnniModel::init(cfg, rng);
    EXPECT_EQ(m.encoder.layers.size(), 2u);
    EXPECT_EQ(m.encoder.input_dim(), 7u);
    EXPECT_EQ(m.encoder.output_dim(), 4u);
    for (const Linear& l : m.encoder.layers) EXPECT_EQ(max_abs(l.bias), 0.0);
    EXPECT_EQ(m.scales.size(), 2u);
    EXPECT_EQ(m.scale_set(), (std::vector<unsigned>{1, 3}));
    EXPECT_DOUBLE_EQ(m.scales[0].gamma(), 0.8);
    EXPECT_EQ(m.attention.w_a.rows(), 4u); // h' defaults to h
    EXPECT_EQ(m.attention.q.rows(), 4u);
    EXPECT_EQ(m.decoder_weight.rows(), 3u);
    EXPECT_DOUBLE_EQ(m.encoder.dropout_rate, 0.5);
    // F is Glorot scaled by 0.5: limit sqrt(6 / 8) / 2.
    EXPECT_LE(max_abs(m.scales[0].f_weight()), 0.5 * std::sqrt(6.0 / 8.0));
    cfg.attention_hidden = 9;
    Rng rng2(1);
    EXPECT_EQ(MgnniModel::init(cfg, rng2).attention.w_a.rows(), 9u);
}

TEST(ModelInit, RejectsInvalidConfigs) {
    ModelConfig cfg;
    cfg.feature_dim = 3;
    Rng rng(2);
    cfg.scales = {1, 1};
    EXPECT_THROW(MgnniModel::init(cfg, rng), DomainError);
    cfg.scales = {};
    EXPECT_THROW(MgnniModel::init(cfg, rng), DomainError);
    cfg.scales = {0};
    EXPECT_THROW(MgnniModel::init(cfg, rng), DomainError);
    cfg.scales = {1};
    cfg.feature_dim = 0;
    EXPECT_THROW(MgnniModel::init(cfg, rng), ShapeError);
    cfg.feature_dim = 3;
    cfg.dropout = 1.0;
    EXPECT_THROW(MgnniModel::init(cfg, rng), DomainError);
}

TEST(ModelValidate, CatchesShapeMismatches) {
    MgnniModel m = small_model(3, 4, {1, 2}, 2, 3);
    EXPECT_NO_THROW(m.validate());
    MgnniModel bad = m;
    bad.decoder_weight = DenseMatrix(2, 5);
    EXPECT_THROW(bad.validate(), ShapeError);
    bad = m;
    bad.attention.q = DenseMatrix(3, 1);
    EXPECT_THROW(bad.validate(), ShapeError);
    bad = m;
    bad.scales.emplace_back(DenseMatrix::identity(5), 0.5, 4);
    EXPECT_THROW(bad.validate(), ShapeError);
    bad = m;
    bad.scales[1] = m.scales[0];
    EXPECT_THROW(bad.validate(), DomainError);
    EXPECT_NO_THROW(bad.validate(true));
}

TEST(Encoder, DropoutOnlyInTrainingMode) {
    Rng rng(4);
    const MlpEncoder enc = MlpEncoder::init({3, 8, 4}, 0.5, rng);
    const DenseMatrix x = random_matrix(3, 10, rng);
    const DenseMatrix a = encoder_forward(enc, x, false, nullptr).output;
    EXPECT_EQ(a, encoder_forward(enc, x, false, nullptr).output);
    EXPECT_THROW(encoder_forward(enc, x, true, nullptr), DomainError);
    Rng r1(9), r2(9);
    const EncoderTrace t1 = encoder_forward(enc, x, true, &r1);
    EXPECT_EQ(t1.output, encoder_forward(enc, x, true, &r2).output);
    ASSERT_EQ(t1.masks.size(), 2u);
    for (double v : t1.masks[0].data()) EXPECT_TRUE(v == 0.0 || v == 2.0);
    EXPECT_THROW(encoder_forward(enc, random_matrix(4, 2, rng), false, nullptr), ShapeError);
}

TEST(Encoder, ReluAfterEveryLayerAndBiasFreeOption) {
    Rng rng(5);
    const MlpEncoder enc = MlpEncoder::init({2, 3}, 0.0, rng, false);
    EXPECT_FALSE(enc.layers[0].has_bias());
    const DenseMatrix x = random_matrix(2, 6, rng);
    const DenseMatrix out = encoder_forward(enc, x, false, nullptr).output;
    EXPECT_LE(max_abs_diff(out, relu_map(naive_matmul(enc.layers[0].weight, x))), 1e-15);
    // Zero input columns stay exactly zero without biases.
    EXPECT_EQ(encoder_forward(enc, DenseMatrix(2, 3), false, nullptr).output, DenseMatrix(3, 3));
}

TEST(Forward, SingleScaleHasUnitAttention) {
    const MgnniModel m = small_model(3, 4, {2}, 2, 6);
    const Graph g = random_graph(7, 0.4, 6);
    const ForwardTrace t = forward(m, g);
    for (double a : t.alpha.data()) EXPECT_EQ(a, 1.0);
    EXPECT_EQ(t.fused, t.equilibria[0].z_star);
}

TEST(Forward, IdenticalScalesSplitAttentionEvenly) {
    MgnniModel m = small_model(3, 4, {1, 2}, 2, 7);
    m.scales[1] = m.scales[0];
    const Graph g = random_graph(6, 0.5, 7);
    const ForwardTrace t = forward(m, g);
    EXPECT_EQ(t.equilibria[0].z_star, t.equilibria[1].z_star);
    for (double a : t.alpha.data()) EXPECT_EQ(a, 0.5);
    EXPECT_LE(max_abs_diff(t.fused, t.equilibria[0].z_star), 1e-15);
}

TEST(Forward, ZeroGammaReducesToEncoder) {
    ModelConfig cfg;
    cfg.feature_dim = 3;
    cfg.hidden = 4;
    cfg.encoder_hidden = {5};
    cfg.scales = {1, 3};
    cfg.gamma = 0.0;
    Rng rng(8);
    const MgnniModel m = MgnniModel::init(cfg, rng);
    const Graph g = random_graph(6, 0.5, 8);
    const ForwardTrace t = forward(m, g);
    const DenseMatrix h = encoder_forward(m.encoder, g.features, false, nullptr).output;
    EXPECT_LE(max_abs_diff(t.fused, h), 1e-15);
    // The graph structure plays no role: an edgeless copy gives the same output.
    const Graph bare = make_graph(g.n, {}, g.features, g.labels, false);
    EXPECT_LE(max_abs_diff(forward(m, bare).logits, t.logits), 1e-15);
}

TEST(Forward, AttentionInvariants) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MgnniModel m = small_model(3, 4, {1, 2, 4}, 3, seed);
        const Graph g = random_graph(10, 0.3, seed);
        const ForwardTrace t = forward(m, g);
        ASSERT_EQ(t.alpha.rows(), 10u);
        ASSERT_EQ(t.alpha.cols(), 3u);
        for (std::size_t i = 0; i < t.alpha.rows(); ++i) {
            double sum = 0.0;
            for (double a : t.alpha.row(i)) {
                EXPECT_GT(a, 0.0);
                EXPECT_LT(a, 1.0);
                sum += a;
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
        // Independent recomputation of beta for one node and scale.
        const auto& z = t.equilibria[1].z_star;
        double beta = 0.0;
        for (std::size_t r = 0; r < m.attention.w_a.rows(); ++r) {
            double pre = m.attention.b_a(r, 0);
            for (std::size_t c = 0; c < z.rows(); ++c) pre += m.attention.w_a(r, c) * z(c, 3);
            beta += m.attention.q(r, 0) * std::tanh(pre);
        }
        EXPECT_NEAR(t.beta(3, 1), beta, 1e-14);
    }
}

TEST(Forward, ScaleOrderPermutationLeavesOutputUnchanged) {
    const MgnniModel m = small_model(3, 4, {1, 2, 3}, 2, 10);
    const Graph g = random_graph(9, 0.35, 10);
    const ForwardTrace t = forward(m, g);
    const std::vector<std::size_t> order{2, 0, 1};
    const ForwardTrace p = forward(permute_scales(m, order), g);
    EXPECT_LE(max_abs_diff(p.fused, t.fused), 1e-10);
    EXPECT_LE(max_abs_diff(p.logits, t.logits), 1e-10);
    for (std::size_t i = 0; i < g.n; ++i)
        for (std::size_t s = 0; s < order.size(); ++s) EXPECT_NEAR(p.alpha(i, s), t.alpha(i, order[s]), 1e-12);
}

TEST(Forward, NodePermutationEquivariance) {
    const MgnniModel m = small_model(2, 3, {1, 2}, 2, 11);
    Rng rng(11);
    const std::size_t n = 8;
    const auto edges = random_edges(n, 0.4, rng, false);
    const DenseMatrix x = random_matrix(2, n, rng);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Edge> pe;
    for (auto [u, v] : edges) pe.emplace_back(perm[u], perm[v]);
    DenseMatrix px(2, n);
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = 0; j < n; ++j) px(i, perm[j]) = x(i, j);
    const ForwardTrace a = forward(m, make_graph(n, edges, x, {}, false));
    const ForwardTrace b = forward(m, make_graph(n, pe, px, {}, false));
    for (std::size_t r = 0; r < a.logits.rows(); ++r)
        for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(b.logits(r, perm[j]), a.logits(r, j), 1e-10);
}

TEST(Forward, FeatureDimMismatchThrows) {
    const MgnniModel m = small_model(3, 4, {1}, 2, 12);
    EXPECT_THROW(forward(m, random_graph(5, 0.5, 1, 4)), ShapeError);
}

TEST(SumPool, Examples) {
    const DenseMatrix z{{1, 2, 3}, {4, 5, 6}};
    EXPECT_EQ(sum_pool(z, {0, 0, 0}, 1), (DenseMatrix{{6}, {15}}));
    EXPECT_EQ(sum_pool(DenseMatrix(2, 3), {0, 1, 1}, 2), DenseMatrix(2, 2));
    EXPECT_EQ(sum_pool(z, {0, 1, 1}, 2), (DenseMatrix{{1, 5}, {4, 11}}));
    EXPECT_THROW(sum_pool(z, {0, 1}, 2), ShapeError);
}

TEST(Batch, GraphTaskForwardMatchesPerGraphForward) {
    const MgnniModel m = small_model(3, 4, {1, 2}, 3, 13, Task::graph_classification);
    std::vector<Graph> gs;
    for (std::uint64_t s = 0; s < 4; ++s) gs.push_back(random_graph(3 + 2 * s, 0.4, 100 + s));
    const GraphBatch b = batch(gs);
    const ForwardTrace bt = forward(m, b);
    ASSERT_EQ(bt.logits.cols(), gs.size());
    for (std::size_t gi = 0; gi < gs.size(); ++gi) {
        const ForwardTrace t = forward(m, gs[gi]);
        ASSERT_EQ(t.logits.cols(), 1u);
        for (std::size_t r = 0; r < t.logits.rows(); ++r) EXPECT_NEAR(bt.logits(r, gi), t.logits(r, 0), 1e-9);
        const DenseMatrix slice = column_slice(bt.fused, b.offsets[gi], b.offsets[gi + 1]);
        EXPECT_LE(max_abs_diff(slice, t.fused), 1e-9);
    }
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
    const MgnniModel m = small_model(3, 4, {1, 2}, 2, 14);
    const Graph g = random_graph(6, 0.5, 14);
    const ForwardTrace t = forward(m, g);
    const Gradients gr = backward(m, g, t, DenseMatrix(t.logits.rows(), t.logits.cols()));
    for (const DenseMatrix* p : gradient_refs(gr)) EXPECT_EQ(max_abs(*p), 0.0);
    EXPECT_THROW(backward(m, g, t, DenseMatrix(1, 1)), ShapeError);
}

TEST(Backward, FiniteDifferenceCheckNodeTask) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const MgnniModel m = small_model(3, 4, {1, 2}, 3, seed);
        const Graph g = random_graph(6, 0.5, seed + 20);
        Rng rng(seed + 30);
        const DenseMatrix w = random_matrix(3, 6, rng);
        for (const GroupCheck& c : gradient_check(m, g, w))
            EXPECT_EQ(c.failures, 0u) << "seed " << seed << " group " << c.name << " worst " << c.worst_abs;
    }
}

TEST(Backward, FiniteDifferenceCheckGraphTaskOnBatch) {
    const MgnniModel m = small_model(3, 4, {1, 3}, 2, 40, Task::graph_classification);
    const GraphBatch b = batch({random_graph(4, 0.6, 41), random_graph(5, 0.5, 42)});
    Rng rng(43);
    const DenseMatrix w = random_matrix(2, 2, rng);
    for (const GroupCheck& c : gradient_check(m, b, w))
        EXPECT_EQ(c.failures, 0u) << "group " << c.name << " worst " << c.worst_abs;
}

TEST(Backward, DetachedAttentionDropsExactlyTheBetaPath) {
    const MgnniModel m = small_model(3, 4, {1, 2}, 2, 50);
    const Graph g = random_graph(6, 0.5, 50);
    Rng rng(51);
    const DenseMatrix w = random_matrix(2, 6, rng);
    const ForwardTrace t = forward(m, g);
    const Gradients full = backward(m, g, t, w);
    const Gradients det = backward(m, g, t, w, {.detach_attention = true});

    EXPECT_EQ(max_abs(det.attention.q), 0.0);
    EXPECT_EQ(max_abs(det.attention.w_a), 0.0);
    EXPECT_EQ(max_abs(det.attention.b_a), 0.0);
    EXPECT_GT(max_abs(sub(full.f[0], det.f[0])), 1e-8); // beta path is nonzero in general

    // The detached gradient is the exact gradient of the loss with alpha frozen.
    MgnniModel probe = m;
    const double step = 1e-5;
    auto check = [&](DenseMatrix& v, const DenseMatrix& analytic) {
        for (std::size_t k = 0; k < v.size(); ++k) {
            const double orig = v.data()[k];
            v.data()[k] = orig + step;
            const double lp = inner_product(w, logits_with_fixed_alpha(probe, g, t.alpha));
            v.data()[k] = orig - step;
            const double lm = inner_product(w, logits_with_fixed_alpha(probe, g, t.alpha));
            v.data()[k] = orig;
            const double fd = (lp - lm) / (2 * step);
            EXPECT_NEAR(analytic.data()[k], fd, 1e-6 + 1e-4 * std::abs(fd));
        }
    };
    check(probe.scales[0].f_weight(), det.f[0]);
    check(probe.scales[1].f_weight(), det.f[1]);
    check(probe.encoder.layers[0].weight, det.encoder[0].weight);
    check(probe.decoder_weight, det.decoder);
}

TEST(Predict, ArgmaxAndThreshold) {
    EXPECT_EQ(argmax_columns(DenseMatrix{{1, 0, 2}, {0, 3, 2}}), (std::vector<int>{0, 1, 0})); // tie -> lower
    EXPECT_EQ(argmax_columns(DenseMatrix{{5, 5}, {5, 5}, {5, 6}}), (std::vector<int>{0, 2}));
    EXPECT_EQ(threshold_logits(DenseMatrix{{-1, 0, 0.1}}), (DenseMatrix{{0, 0, 1}}));
    MgnniModel m = small_model(3, 4, {1}, 2, 60);
    const Graph g = random_graph(5, 0.5, 60);
    const Prediction p = predict(m, g);
    EXPECT_EQ(p.classes, argmax_columns(forward(m, g).logits));
    m.multi_label = true;
    const Prediction q = predict(m, g);
    EXPECT_TRUE(q.classes.empty());
    EXPECT_EQ(q.multi_hot, threshold_logits(forward(m, g).logits));
}

TEST(ParameterRefs, AlignWithGradients) {
    MgnniModel m = small_model(3, 4, {1, 2}, 2, 70);
    const Graph g = random_graph(5, 0.5, 70);
    const Gradients gr = backward(m, g, forward(m, g), DenseMatrix(2, 5, 1.0));
    const auto params = parameter_refs(m);
    const auto grads = gradient_refs(gr);
    ASSERT_EQ(params.size(), grads.size());
    for (std::size_t i = 0; i < params.size(); ++i) EXPECT_TRUE(params[i].value->same_shape(*grads[i]));
    // Biases are exempt from weight decay.
    EXPECT_FALSE(params[1].decay);
    EXPECT_TRUE(params[0].decay);
}
