#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "mgnni/numerics.hpp"

namespace mgnni {

using Rng = std::mt19937_64;

inline DenseMatrix uniform_matrix(std::size_t rows, std::size_t cols, double lo, double hi, Rng& rng) {
    std::uniform_real_distribution<double> dist(lo, hi);
    DenseMatrix m(rows, cols);
    for (auto& x : m.data()) x = dist(rng);
    return m;
}

/// Uniform in +-sqrt(6 / (fan_in + fan_out)), scaled by `gain`.
inline DenseMatrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng, double gain = 1.0) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(rows + cols));
    return uniform_matrix(rows, cols, -limit, limit, rng);
}

} // namespace mgnni
