#pragma once

// The implicit propagation layer Z = gamma * g(F) * Z * S^m + H, its adjoint,
// the parameter VJPs, and a dense Kronecker-form solver used as a test oracle.

#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "mgnni/error.hpp"
#include "mgnni/numerics.hpp"

namespace mgnni {

struct SolverConfig {
    double tol = 1e-6;          // relative Frobenius residual
    std::size_t max_iters = 300;

    void validate() const {
        if (!(tol > 0.0)) throw DomainError("SolverConfig: tol must be > 0");
        if (max_iters < 1) throw DomainError("SolverConfig: max_iters must be >= 1");
    }
};

/// One m-scale propagation module: trainable F plus fixed gamma, m and eps_F.
class ScaleModule {
public:
    ScaleModule(DenseMatrix f_weight, double gamma, unsigned scale_m, double eps_f = 1e-5)
        : f_(std::move(f_weight)), gamma_(gamma), m_(scale_m), eps_f_(eps_f) {
        if (f_.rows() != f_.cols()) throw ShapeError("ScaleModule: F must be square, got " + shape_str(f_));
        if (!(gamma_ >= 0.0 && gamma_ < 1.0))
            throw DomainError("ScaleModule: gamma must lie in [0,1), got " + std::to_string(gamma_));
        if (m_ < 1) throw DomainError("ScaleModule: scale m must be >= 1");
        if (!(eps_f_ > 0.0)) throw DomainError("ScaleModule: eps_F must be > 0");
    }

    const DenseMatrix& f_weight() const noexcept { return f_; }
    DenseMatrix& f_weight() noexcept { return f_; }
    double gamma() const noexcept { return gamma_; }
    unsigned scale_m() const noexcept { return m_; }
    double eps_f() const noexcept { return eps_f_; }
    std::size_t hidden() const noexcept { return f_.rows(); }

private:
    DenseMatrix f_;
    double gamma_;
    unsigned m_;
    double eps_f_;
};

struct EquilibriumResult {
    DenseMatrix z_star;
    std::size_t iterations = 0;
    double residual = 0.0;
    bool converged = false;
    std::vector<double> residuals;  // relative residual per iteration
    std::vector<double> step_norms; // ||Z(k+1) - Z(k)||_F per iteration
};

/// g(F) = F^T F / (||F^T F||_F + eps_F).
inline DenseMatrix g_of_f(const DenseMatrix& f_weight, double eps_f) {
    if (f_weight.rows() != f_weight.cols()) throw ShapeError("g_of_f: F must be square");
    DenseMatrix gram = matmul_tn(f_weight, f_weight);
    return scale(gram, 1.0 / (frobenius_norm(gram) + eps_f));
}

inline DenseMatrix g_of_f(const ScaleModule& module) { return g_of_f(module.f_weight(), module.eps_f()); }

namespace detail {

// Picard iteration of Z <- gamma * left * Z * R^m + rhs, where right-multiplication
// by R is done sparsely. Shared by the forward and adjoint solves.
inline EquilibriumResult picard(const DenseMatrix& left, double gamma, unsigned m, const CsrMatrix& right,
                                const DenseMatrix& rhs, const SolverConfig& cfg, DenseMatrix z,
                                const char* what) {
    cfg.validate();
    EquilibriumResult res;
    if (gamma == 0.0 || max_abs(left) == 0.0) {
        // Constant map: the fixed point is reached in a single step.
        res.z_star = rhs;
        res.iterations = 1;
        res.residual = 0.0;
        res.converged = true;
        res.residuals.push_back(0.0);
        res.step_norms.push_back(frobenius_norm(sub(rhs, z)));
        return res;
    }
    for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
        DenseMatrix next = matmul(left, spmm_right_pow(z, right, m));
        for (std::size_t i = 0; i < next.size(); ++i) next.data()[i] = gamma * next.data()[i] + rhs.data()[i];
        if (!all_finite(next))
            throw DivergenceError(std::string(what) + ": non-finite iterate at step " + std::to_string(k) +
                                  " (is S normalized?)");
        const double step = frobenius_norm(sub(next, z));
        const double r = step / (frobenius_norm(z) + 1e-12);
        res.residuals.push_back(r);
        res.step_norms.push_back(step);
        z = std::move(next);
        res.iterations = k;
        res.residual = r;
        if (r <= cfg.tol) {
            res.converged = true;
            break;
        }
    }
    res.z_star = std::move(z);
    return res;
}

inline void check_propagation_shapes(const ScaleModule& module, const DenseMatrix& m, const CsrMatrix& s,
                                     const char* what) {
    if (s.rows() != s.cols()) throw ShapeError(std::string(what) + ": S must be square");
    if (m.rows() != module.hidden() || m.cols() != s.rows())
        throw ShapeError(std::string(what) + ": expected " + std::to_string(module.hidden()) + "x" +
                         std::to_string(s.rows()) + ", got " + shape_str(m));
}

} // namespace detail

/// Iterates Z <- gamma g(F) Z S^m + injected from z0 (zero by default).
inline EquilibriumResult forward_solve(const ScaleModule& module, const DenseMatrix& injected, const CsrMatrix& s,
                                       const SolverConfig& cfg = {},
                                       std::optional<DenseMatrix> z0 = std::nullopt) {
    detail::check_propagation_shapes(module, injected, s, "forward_solve");
    DenseMatrix start = z0 ? std::move(*z0) : DenseMatrix(injected.rows(), injected.cols());
    if (!start.same_shape(injected)) throw ShapeError("forward_solve: z0 shape " + shape_str(start));
    return detail::picard(g_of_f(module), module.gamma(), module.scale_m(), s, injected, cfg, std::move(start),
                          "forward_solve");
}

/// Adjoint solve with a precomputed S^T.
inline EquilibriumResult adjoint_solve_transposed(const ScaleModule& module, const CsrMatrix& s_transposed,
                                                  const DenseMatrix& grad_z, const SolverConfig& cfg = {}) {
    detail::check_propagation_shapes(module, grad_z, s_transposed, "adjoint_solve");
    // g(F) is symmetric, so g^T == g.
    return detail::picard(g_of_f(module), module.gamma(), module.scale_m(), s_transposed, grad_z, cfg,
                          DenseMatrix(grad_z.rows(), grad_z.cols()), "adjoint_solve");
}

/// Solves U = gamma g(F)^T U (S^m)^T + grad_z, i.e. U = grad_z (I - J)^-1.
inline DenseMatrix adjoint_solve(const ScaleModule& module, const CsrMatrix& s, const DenseMatrix& grad_z,
                                 const SolverConfig& cfg = {}) {
    return adjoint_solve_transposed(module, transpose(s), grad_z, cfg).z_star;
}

/// dL/dF given the adjoint U and equilibrium Z*, chained through g(F).
inline DenseMatrix grad_f(const ScaleModule& module, const DenseMatrix& u, const DenseMatrix& z_star,
                          const CsrMatrix& s) {
    detail::check_propagation_shapes(module, u, s, "grad_f");
    detail::check_propagation_shapes(module, z_star, s, "grad_f");
    const DenseMatrix& f = module.f_weight();
    // Upstream gradient at g(F).
    DenseMatrix m = scale(matmul_nt(u, spmm_right_pow(z_star, s, module.scale_m())), module.gamma());

    const DenseMatrix gram = matmul_tn(f, f);
    const double gnorm = frobenius_norm(gram);
    const double s_norm = gnorm + module.eps_f();
    DenseMatrix dgram = scale(m, 1.0 / s_norm);
    if (gnorm >= 1e-30) axpy(dgram, -inner_product(m, gram) / (gnorm * s_norm * s_norm), gram);
    return matmul(f, add(dgram, transpose(dgram)));
}

/// The injected term enters the map with identity Jacobian.
inline const DenseMatrix& grad_injected(const DenseMatrix& u) noexcept { return u; }

namespace detail {

// Dense S^m, deliberately not routed through spmm_right so the oracle stays independent.
inline DenseMatrix dense_power(const CsrMatrix& s, unsigned m) {
    const DenseMatrix d = s.densify();
    DenseMatrix p = DenseMatrix::identity(s.rows());
    for (unsigned k = 0; k < m; ++k) p = matmul(p, d);
    return p;
}

inline void oracle_guard(std::size_t h, std::size_t n) {
    if (h * n > 4096)
        throw CapacityError("oracle_solve: h*n = " + std::to_string(h * n) + " exceeds 4096");
}

// Column-major vec(), matching the Kronecker identity vec(A X B) = (B^T kron A) vec(X).
inline std::vector<double> vec(const DenseMatrix& z) {
    std::vector<double> v(z.size());
    for (std::size_t j = 0; j < z.cols(); ++j)
        for (std::size_t i = 0; i < z.rows(); ++i) v[j * z.rows() + i] = z(i, j);
    return v;
}

inline DenseMatrix unvec(const DenseMatrix& v, std::size_t rows, std::size_t cols) {
    DenseMatrix z(rows, cols);
    for (std::size_t j = 0; j < cols; ++j)
        for (std::size_t i = 0; i < rows; ++i) z(i, j) = v(j * rows + i, 0);
    return z;
}

// I - gamma * (A kron B) for square A (n x n) and B (h x h).
inline DenseMatrix identity_minus_kron(double gamma, const DenseMatrix& a, const DenseMatrix& b) {
    const std::size_t n = a.rows(), h = b.rows();
    DenseMatrix k = DenseMatrix::identity(n * h);
    for (std::size_t ai = 0; ai < n; ++ai)
        for (std::size_t aj = 0; aj < n; ++aj) {
            const double av = a(ai, aj);
            if (av == 0.0) continue;
            for (std::size_t bi = 0; bi < h; ++bi)
                for (std::size_t bj = 0; bj < h; ++bj) k(ai * h + bi, aj * h + bj) -= gamma * av * b(bi, bj);
        }
    return k;
}

} // namespace detail

/// Dense closed form: (I - gamma (S^m)^T kron g(F)) vec(Z) = vec(injected).
inline DenseMatrix oracle_solve(const ScaleModule& module, const DenseMatrix& injected, const CsrMatrix& s) {
    detail::check_propagation_shapes(module, injected, s, "oracle_solve");
    const std::size_t h = injected.rows(), n = injected.cols();
    detail::oracle_guard(h, n);
    const DenseMatrix k = detail::identity_minus_kron(
        module.gamma(), transpose(detail::dense_power(s, module.scale_m())), g_of_f(module));
    return detail::unvec(lu_solve(k, DenseMatrix(h * n, 1, detail::vec(injected))), h, n);
}

/// Dense closed form of the adjoint: (I - gamma S^m kron g(F)^T) vec(U) = vec(grad_z).
inline DenseMatrix oracle_adjoint_solve(const ScaleModule& module, const CsrMatrix& s, const DenseMatrix& grad_z) {
    detail::check_propagation_shapes(module, grad_z, s, "oracle_adjoint_solve");
    const std::size_t h = grad_z.rows(), n = grad_z.cols();
    detail::oracle_guard(h, n);
    const DenseMatrix k = detail::identity_minus_kron(module.gamma(), detail::dense_power(s, module.scale_m()),
                                                      transpose(g_of_f(module)));
    return detail::unvec(lu_solve(k, DenseMatrix(h * n, 1, detail::vec(grad_z))), h, n);
}

} // namespace mgnni
