#pragma once

#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mixspec2d/model.hpp"

namespace mixspec2d::testing {

inline Field2D random_field(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    Field2D f(rows, cols);
    for (auto& v : f.values()) v = d(gen);
    return f;
}

/// Quarter-plane MA used by the default experiment.
inline MaCoefficients default_ma(double sigma2 = 1.0) {
    return MaCoefficients(SupportKind::QuarterPlane, 1, 1,
                          {{Lag{0, 0}, 1.0}, {Lag{0, 1}, 0.5}, {Lag{1, 0}, 0.4}, {Lag{1, 1}, 0.2}}, sigma2);
}

inline double relative_error(double got, double want) {
    return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

inline constexpr double pi = std::numbers::pi;

} // namespace mixspec2d::testing
