#pragma once

// Dense and CSR kernels used by every other module. Everything is 64-bit
// floating point; dense storage is row-major.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "mgnni/error.hpp"

namespace mgnni {

class DenseMatrix {
public:
    DenseMatrix() = default;

    DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                             " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }

    DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
        rows_ = rows.size();
        cols_ = rows_ == 0 ? 0 : rows.begin()->size();
        data_.reserve(rows_ * cols_);
        for (const auto& r : rows) {
            if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
            data_.insert(data_.end(), r.begin(), r.end());
        }
    }

    static DenseMatrix zeros(std::size_t rows, std::size_t cols) { return {rows, cols}; }

    static DenseMatrix identity(std::size_t n) {
        DenseMatrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }
    double& operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }

    std::span<const double> row(std::size_t i) const noexcept {
        return {data_.data() + i * cols_, cols_};
    }
    std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }

    const std::vector<double>& data() const noexcept { return data_; }
    std::vector<double>& data() noexcept { return data_; }

    bool same_shape(const DenseMatrix& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }

    bool operator==(const DenseMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline std::string shape_str(const DenseMatrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Compressed sparse row matrix. Column indices are strictly increasing per row.
class CsrMatrix {
public:
    CsrMatrix() : row_ptr_(1, 0) {}

    CsrMatrix(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_ptr,
              std::vector<std::size_t> col_idx, std::vector<double> values)
        : rows_(rows), cols_(cols), row_ptr_(std::move(row_ptr)), col_idx_(std::move(col_idx)),
          values_(std::move(values)) {
        validate();
    }

    /// Builds from (row, col, value) triplets; duplicate coordinates are summed.
    static CsrMatrix from_triplets(std::size_t rows, std::size_t cols,
                                   std::vector<std::tuple<std::size_t, std::size_t, double>> t) {
        std::sort(t.begin(), t.end(), [](const auto& a, const auto& b) {
            return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b));
        });
        std::vector<std::size_t> row_ptr(rows + 1, 0);
        std::vector<std::size_t> col_idx;
        std::vector<double> values;
        col_idx.reserve(t.size());
        values.reserve(t.size());
        std::size_t last_r = rows, last_c = cols;
        for (const auto& [r, c, v] : t) {
            if (r >= rows || c >= cols)
                throw IndexError("CsrMatrix: triplet (" + std::to_string(r) + "," + std::to_string(c) +
                                 ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
            if (r == last_r && c == last_c) {
                values.back() += v;
                continue;
            }
            col_idx.push_back(c);
            values.push_back(v);
            ++row_ptr[r + 1];
            last_r = r;
            last_c = c;
        }
        std::partial_sum(row_ptr.begin(), row_ptr.end(), row_ptr.begin());
        return {rows, cols, std::move(row_ptr), std::move(col_idx), std::move(values)};
    }

    static CsrMatrix identity(std::size_t n) {
        std::vector<std::size_t> rp(n + 1), ci(n);
        std::iota(rp.begin(), rp.end(), std::size_t{0});
        std::iota(ci.begin(), ci.end(), std::size_t{0});
        return {n, n, std::move(rp), std::move(ci), std::vector<double>(n, 1.0)};
    }

    static CsrMatrix from_dense(const DenseMatrix& d) {
        std::vector<std::tuple<std::size_t, std::size_t, double>> t;
        for (std::size_t i = 0; i < d.rows(); ++i)
            for (std::size_t j = 0; j < d.cols(); ++j)
                if (d(i, j) != 0.0) t.emplace_back(i, j, d(i, j));
        return from_triplets(d.rows(), d.cols(), std::move(t));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t nnz() const noexcept { return values_.size(); }

    const std::vector<std::size_t>& row_ptr() const noexcept { return row_ptr_; }
    const std::vector<std::size_t>& col_idx() const noexcept { return col_idx_; }
    const std::vector<double>& values() const noexcept { return values_; }

    /// Entry lookup by binary search within the row.
    double at(std::size_t i, std::size_t j) const {
        if (i >= rows_ || j >= cols_) throw IndexError("CsrMatrix::at out of range");
        auto b = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i]);
        auto e = col_idx_.begin() + static_cast<std::ptrdiff_t>(row_ptr_[i + 1]);
        auto it = std::lower_bound(b, e, j);
        if (it == e || *it != j) return 0.0;
        return values_[static_cast<std::size_t>(it - col_idx_.begin())];
    }

    DenseMatrix densify() const {
        DenseMatrix d(rows_, cols_);
        for (std::size_t i = 0; i < rows_; ++i)
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) d(i, col_idx_[k]) = values_[k];
        return d;
    }

    bool operator==(const CsrMatrix&) const = default;

private:
    void validate() const {
        if (row_ptr_.size() != rows_ + 1 || row_ptr_.front() != 0 || row_ptr_.back() != col_idx_.size() ||
            col_idx_.size() != values_.size())
            throw ShapeError("CsrMatrix: inconsistent row_ptr/col_idx/values lengths");
        for (std::size_t i = 0; i < rows_; ++i) {
            if (row_ptr_[i] > row_ptr_[i + 1]) throw ShapeError("CsrMatrix: row_ptr decreasing");
            for (std::size_t k = row_ptr_[i]; k < row_ptr_[i + 1]; ++k) {
                if (col_idx_[k] >= cols_) throw IndexError("CsrMatrix: column index out of range");
                if (k > row_ptr_[i] && col_idx_[k] <= col_idx_[k - 1])
                    throw ShapeError("CsrMatrix: column indices not strictly increasing in row " +
                                     std::to_string(i));
            }
        }
    }

    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<std::size_t> row_ptr_;
    std::vector<std::size_t> col_idx_;
    std::vector<double> values_;
};

inline CsrMatrix transpose(const CsrMatrix& s) {
    std::vector<std::tuple<std::size_t, std::size_t, double>> t;
    t.reserve(s.nnz());
    for (std::size_t i = 0; i < s.rows(); ++i)
        for (std::size_t k = s.row_ptr()[i]; k < s.row_ptr()[i + 1]; ++k)
            t.emplace_back(s.col_idx()[k], i, s.values()[k]);
    return CsrMatrix::from_triplets(s.cols(), s.rows(), std::move(t));
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.rows())
        throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
    DenseMatrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto orow = out.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double aip = a(i, p);
            if (aip == 0.0) continue;
            auto brow = b.row(p);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aip * brow[j];
        }
    }
    return out;
}

/// a^T * b without forming the transpose.
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.rows() != b.rows())
        throw ShapeError("matmul_tn: " + shape_str(a) + "^T x " + shape_str(b));
    DenseMatrix out(a.cols(), b.cols());
    for (std::size_t p = 0; p < a.rows(); ++p) {
        auto arow = a.row(p);
        auto brow = b.row(p);
        for (std::size_t i = 0; i < a.cols(); ++i) {
            const double v = arow[i];
            if (v == 0.0) continue;
            auto orow = out.row(i);
            for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += v * brow[j];
        }
    }
    return out;
}

/// a * b^T without forming the transpose.
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.cols() != b.cols())
        throw ShapeError("matmul_nt: " + shape_str(a) + " x " + shape_str(b) + "^T");
    DenseMatrix out(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto arow = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            auto brow = b.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) acc += arow[p] * brow[p];
            out(i, j) = acc;
        }
    }
    return out;
}

/// Z * S for dense Z and sparse S.
inline DenseMatrix spmm_right(const DenseMatrix& z, const CsrMatrix& s) {
    if (z.cols() != s.rows())
        throw ShapeError("spmm_right: " + shape_str(z) + " x CSR " + std::to_string(s.rows()) + "x" +
                         std::to_string(s.cols()));
    DenseMatrix out(z.rows(), s.cols());
    const auto& rp = s.row_ptr();
    const auto& ci = s.col_idx();
    const auto& v = s.values();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        auto zrow = z.row(i);
        auto orow = out.row(i);
        for (std::size_t p = 0; p < s.rows(); ++p) {
            const double zp = zrow[p];
            if (zp == 0.0) continue;
            for (std::size_t k = rp[p]; k < rp[p + 1]; ++k) orow[ci[k]] += zp * v[k];
        }
    }
    return out;
}

/// Z * S^power as repeated sparse products; S^power is never materialized.
inline DenseMatrix spmm_right_pow(DenseMatrix z, const CsrMatrix& s, unsigned power) {
    for (unsigned k = 0; k < power; ++k) z = spmm_right(z, s);
    return z;
}

inline DenseMatrix transpose(const DenseMatrix& m) {
    DenseMatrix t(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = 0; j < m.cols(); ++j) t(j, i) = m(i, j);
    return t;
}

namespace detail {

template <typename Op>
DenseMatrix zip(const DenseMatrix& a, const DenseMatrix& b, const char* name, Op op) {
    if (!a.same_shape(b)) throw ShapeError(std::string(name) + ": " + shape_str(a) + " vs " + shape_str(b));
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = op(a.data()[k], b.data()[k]);
    return out;
}

template <typename Op>
DenseMatrix map(const DenseMatrix& a, Op op) {
    DenseMatrix out(a.rows(), a.cols());
    for (std::size_t k = 0; k < a.size(); ++k) out.data()[k] = op(a.data()[k]);
    return out;
}

} // namespace detail

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
    return detail::zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
    return detail::zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
    return detail::zip(a, b, "hadamard", [](double x, double y) { return x * y; });
}
inline DenseMatrix scale(const DenseMatrix& a, double c) {
    return detail::map(a, [c](double x) { return c * x; });
}
inline DenseMatrix tanh_map(const DenseMatrix& a) {
    return detail::map(a, [](double x) { return std::tanh(x); });
}
inline DenseMatrix relu_map(const DenseMatrix& a) {
    return detail::map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}

/// In-place a += c * b.
inline void axpy(DenseMatrix& a, double c, const DenseMatrix& b) {
    if (!a.same_shape(b)) throw ShapeError("axpy: " + shape_str(a) + " vs " + shape_str(b));
    for (std::size_t k = 0; k < a.size(); ++k) a.data()[k] += c * b.data()[k];
}

inline double inner_product(const DenseMatrix& a, const DenseMatrix& b) {
    if (!a.same_shape(b))
        throw ShapeError("inner_product: " + shape_str(a) + " vs " + shape_str(b));
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) acc += a.data()[k] * b.data()[k];
    return acc;
}

inline double frobenius_norm(const DenseMatrix& m) {
    // Scaled accumulation keeps tiny and huge entries from under/overflowing.
    double scale_ = 0.0, ssq = 1.0;
    for (double x : m.data()) {
        if (x == 0.0) continue;
        const double ax = std::abs(x);
        if (scale_ < ax) {
            ssq = 1.0 + ssq * (scale_ / ax) * (scale_ / ax);
            scale_ = ax;
        } else {
            ssq += (ax / scale_) * (ax / scale_);
        }
    }
    return scale_ * std::sqrt(ssq);
}

inline double column_norm(const DenseMatrix& m, std::size_t j) {
    double scale_ = 0.0, ssq = 1.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double ax = std::abs(m(i, j));
        if (ax == 0.0) continue;
        if (scale_ < ax) {
            ssq = 1.0 + ssq * (scale_ / ax) * (scale_ / ax);
            scale_ = ax;
        } else {
            ssq += (ax / scale_) * (ax / scale_);
        }
    }
    return scale_ * std::sqrt(ssq);
}

inline double max_abs(const DenseMatrix& m) {
    double r = 0.0;
    for (double x : m.data()) r = std::max(r, std::abs(x));
    return r;
}

inline bool all_finite(const DenseMatrix& m) {
    return std::all_of(m.data().begin(), m.data().end(), [](double x) { return std::isfinite(x); });
}

/// Row-wise softmax with max subtraction.
inline DenseMatrix softmax_rows(const DenseMatrix& m) {
    DenseMatrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        auto in = m.row(i);
        auto o = out.row(i);
        if (in.empty()) continue;
        const double mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (auto& x : o) x /= sum;
    }
    return out;
}

/// Columns [begin, end) of m.
inline DenseMatrix column_slice(const DenseMatrix& m, std::size_t begin, std::size_t end) {
    if (begin > end || end > m.cols()) throw IndexError("column_slice: bad range");
    DenseMatrix out(m.rows(), end - begin);
    for (std::size_t i = 0; i < m.rows(); ++i)
        for (std::size_t j = begin; j < end; ++j) out(i, j - begin) = m(i, j);
    return out;
}

/// Gathers the listed columns of m, in order.
inline DenseMatrix column_select(const DenseMatrix& m, std::span<const std::size_t> cols) {
    DenseMatrix out(m.rows(), cols.size());
    for (std::size_t k = 0; k < cols.size(); ++k) {
        if (cols[k] >= m.cols()) throw IndexError("column_select: column out of range");
        for (std::size_t i = 0; i < m.rows(); ++i) out(i, k) = m(i, cols[k]);
    }
    return out;
}

/// Horizontal concatenation [a | b].
inline DenseMatrix hconcat(const DenseMatrix& a, const DenseMatrix& b) {
    if (a.empty() && a.cols() == 0) return b;
    if (a.rows() != b.rows()) throw ShapeError("hconcat: " + shape_str(a) + " | " + shape_str(b));
    DenseMatrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::copy(a.row(i).begin(), a.row(i).end(), out.row(i).begin());
        std::copy(b.row(i).begin(), b.row(i).end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(a.cols()));
    }
    return out;
}

inline double norm_inf(const DenseMatrix& m) {
    double r = 0.0;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double s = 0.0;
        for (double x : m.row(i)) s += std::abs(x);
        r = std::max(r, s);
    }
    return r;
}

/// Solves A X = B by LU with partial pivoting. A must be square.
inline DenseMatrix lu_solve(DenseMatrix a, DenseMatrix b) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeError("lu_solve: non-square " + shape_str(a));
    if (b.rows() != n) throw ShapeError("lu_solve: rhs " + shape_str(b) + " for " + shape_str(a));
    const std::size_t nrhs = b.cols();
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t piv = k;
        for (std::size_t i = k + 1; i < n; ++i)
            if (std::abs(a(i, k)) > std::abs(a(piv, k))) piv = i;
        if (a(piv, k) == 0.0) throw DomainError("lu_solve: singular matrix");
        if (piv != k) {
            std::swap_ranges(a.row(k).begin(), a.row(k).end(), a.row(piv).begin());
            std::swap_ranges(b.row(k).begin(), b.row(k).end(), b.row(piv).begin());
        }
        const double inv = 1.0 / a(k, k);
        for (std::size_t i = k + 1; i < n; ++i) {
            const double f = a(i, k) * inv;
            if (f == 0.0) continue;
            a(i, k) = 0.0;
            for (std::size_t j = k + 1; j < n; ++j) a(i, j) -= f * a(k, j);
            for (std::size_t j = 0; j < nrhs; ++j) b(i, j) -= f * b(k, j);
        }
    }
    for (std::size_t kk = n; kk-- > 0;) {
        for (std::size_t j = 0; j < nrhs; ++j) {
            double acc = b(kk, j);
            for (std::size_t p = kk + 1; p < n; ++p) acc -= a(kk, p) * b(p, j);
            b(kk, j) = acc / a(kk, kk);
        }
    }
    return b;
}

} // namespace mgnni
