#pragma once

// Effective-range experiments: how far a feature perturbation at node p
// travels through an implicit propagation module, measured against the
// decay bound  ||dZ*_q|| <= gamma^(h/m) / (1 - gamma) * ||g^ceil(h/m)(F) dX_p S^h_pq||.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "mgnni/csv.hpp"
#include "mgnni/equilibrium.hpp"
#include "mgnni/error.hpp"
#include "mgnni/graph.hpp"
#include "mgnni/model.hpp"
#include "mgnni/numerics.hpp"

namespace mgnni {

inline constexpr double kClampBelow = 1e-300;

struct DecayCurve {
    std::vector<std::size_t> hops;
    std::vector<double> measured;
    std::vector<double> bound;
    std::vector<bool> clamped; // measured value was below 1e-300 and set to 0
    double gamma = 0.0;
    unsigned m = 1;
    double theta = 0.0;
};

/// (gamma^(h/m) / (1 - gamma)) * norm_term.
inline double theoretical_bound(double gamma, unsigned m, std::size_t h, double norm_term) {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw DomainError("theoretical_bound: gamma must lie in [0,1)");
    if (m < 1) throw DomainError("theoretical_bound: m must be >= 1");
    const double e = static_cast<double>(h) / static_cast<double>(m);
    const double p = (h == 0) ? 1.0 : std::pow(gamma, e);
    return p / (1.0 - gamma) * norm_term;
}

namespace detail {

inline void check_range_domain(double gamma, double theta, unsigned m) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("range_bound: gamma must lie in (0,1)");
    if (!(theta > 0.0 && theta < 1.0)) throw DomainError("range_bound: theta must lie in (0,1)");
    if (m < 1) throw DomainError("range_bound: m must be >= 1");
    if (!(theta * (1.0 - gamma) < 1.0)) throw DomainError("range_bound: theta*(1-gamma) must be < 1");
}

} // namespace detail

/// m * ln(theta (1 - gamma)) / ln(gamma), before flooring.
inline double range_bound_real(double gamma, double theta, unsigned m) {
    detail::check_range_domain(gamma, theta, m);
    return static_cast<double>(m) * (std::log(theta * (1.0 - gamma)) / std::log(gamma));
}

/// Upper bound on the theta-effective range of an m-scale module.
inline long long range_bound(double gamma, double theta, unsigned m) {
    return static_cast<long long>(std::floor(range_bound_real(gamma, theta, m)));
}

/// Largest hop whose measured change exceeds theta; 0 if none does.
inline std::size_t empirical_range(const DecayCurve& curve, double theta) {
    if (!(theta > 0.0)) throw DomainError("empirical_range: theta must be > 0");
    std::size_t best = 0;
    for (std::size_t k = 0; k < curve.hops.size(); ++k)
        if (curve.measured[k] > theta) best = std::max(best, curve.hops[k]);
    return best;
}

/// Measures the decay of the equilibrium change caused by replacing the
/// injected term with `perturbed_injected`. Only column p may differ.
/// The map is affine in the injected term, so the change is obtained by
/// solving directly for the difference instead of subtracting two solves.
inline DecayCurve measure_decay(const ScaleModule& module, const Graph& graph, const DenseMatrix& injected,
                                const DenseMatrix& perturbed_injected, std::size_t p, const SolverConfig& cfg) {
    if (p >= graph.n) throw IndexError("measure_decay: node " + std::to_string(p) + " out of range");
    const DenseMatrix delta = sub(injected, perturbed_injected);
    for (std::size_t j = 0; j < delta.cols(); ++j)
        if (j != p && column_norm(delta, j) != 0.0)
            throw DomainError("measure_decay: perturbation touches node " + std::to_string(j) + ", not only p");

    const DenseMatrix dz = forward_solve(module, delta, graph.s, cfg).z_star;
    const std::vector<std::size_t> dist = hop_distance(graph, p);
    std::size_t max_hop = 0;
    for (std::size_t d : dist)
        if (d != kUnreachable) max_hop = std::max(max_hop, d);

    DecayCurve c;
    c.gamma = module.gamma();
    c.m = module.scale_m();
    c.hops.resize(max_hop + 1);
    for (std::size_t h = 0; h <= max_hop; ++h) c.hops[h] = h;
    c.measured.assign(max_hop + 1, 0.0);
    c.bound.assign(max_hop + 1, 0.0);
    c.clamped.assign(max_hop + 1, false);

    // g^k(F) dX_p for k = 0, 1, ... and row p of S^h for h = 0, 1, ...
    const DenseMatrix g = g_of_f(module);
    std::vector<double> g_pow_norm;
    {
        DenseMatrix v = column_select(delta, std::vector<std::size_t>{p});
        const std::size_t kmax = (max_hop + module.scale_m() - 1) / module.scale_m();
        for (std::size_t k = 0; k <= kmax; ++k) {
            g_pow_norm.push_back(frobenius_norm(v));
            v = matmul(g, v);
        }
    }
    DenseMatrix srow(1, graph.n);
    srow(0, p) = 1.0;
    for (std::size_t h = 0; h <= max_hop; ++h) {
        if (h > 0) srow = spmm_right(srow, graph.s);
        const std::size_t k = (h + module.scale_m() - 1) / module.scale_m();
        for (std::size_t q = 0; q < graph.n; ++q) {
            if (dist[q] != h) continue;
            c.measured[h] = std::max(c.measured[h], column_norm(dz, q));
            const double term = g_pow_norm[k] * std::abs(srow(0, q));
            c.bound[h] = std::max(c.bound[h], theoretical_bound(module.gamma(), module.scale_m(), h, term));
        }
    }
    for (std::size_t h = 0; h <= max_hop; ++h) {
        if (c.measured[h] != 0.0 && c.measured[h] < kClampBelow) {
            c.measured[h] = 0.0;
            c.clamped[h] = true;
        }
        if (c.bound[h] < kClampBelow) c.bound[h] = 0.0;
    }
    return c;
}

/// Perturbation by zeroing node p's raw features and re-encoding them.
inline DecayCurve measure_decay(const ScaleModule& module, const Graph& graph, const MlpEncoder& encoder,
                                std::size_t p, const SolverConfig& cfg) {
    if (p >= graph.n) throw IndexError("measure_decay: node " + std::to_string(p) + " out of range");
    DenseMatrix masked = graph.features;
    for (std::size_t i = 0; i < masked.rows(); ++i) masked(i, p) = 0.0;
    const DenseMatrix h = encoder_forward(encoder, graph.features, false, nullptr).output;
    const DenseMatrix h_masked = encoder_forward(encoder, masked, false, nullptr).output;
    return measure_decay(module, graph, h, h_masked, p, cfg);
}

/// hop,measured,bound,gamma,m with round-trip precision.
inline std::string decay_curve_csv(const DecayCurve& c) {
    std::ostringstream os;
    os << "hop,measured,bound,gamma,m\n";
    for (std::size_t k = 0; k < c.hops.size(); ++k)
        os << c.hops[k] << ',' << format_double(c.measured[k]) << ',' << format_double(c.bound[k]) << ','
           << format_double(c.gamma) << ',' << c.m << '\n';
    return os.str();
}

/// A single directed chain 0 -> 1 -> ... -> length-1 whose first node carries
/// a one-hot feature; the standard probe graph.
inline Graph probe_chain(std::size_t length, std::size_t feature_dim = 2) {
    if (length < 1) throw DomainError("probe_chain: length must be >= 1");
    std::vector<Edge> edges;
    for (std::size_t i = 0; i + 1 < length; ++i) edges.emplace_back(i, i + 1);
    DenseMatrix x(feature_dim, length);
    x(0, 0) = 1.0;
    return make_graph(length, edges, std::move(x), Labels{}, true, false);
}

} // namespace mgnni
