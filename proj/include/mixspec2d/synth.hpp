#pragma once

// Seed-reproducible synthesis of innovation fields, MA noise fields and
// observations y = sum of cosines + w.
//
// Innovations are site-addressed: the value at absolute lattice index (n, m)
// is a pure function of (master_seed, n, m), so growing or shifting the
// requested window never changes overlapping values.

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <string>

#include "mixspec2d/model.hpp"

namespace mixspec2d {

namespace detail {

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

constexpr std::uint64_t site_key(std::uint64_t seed, long n, long m) {
    std::uint64_t h = mix64(seed);
    h = mix64(h ^ static_cast<std::uint64_t>(n));
    h = mix64(h ^ (static_cast<std::uint64_t>(m) * 0xd6e8feb86659fd93ULL));
    return h;
}

// Uniform on the open interval (0, 1) from 53 random bits.
constexpr double open_unit(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

} // namespace detail

/// Derives an independent 64-bit seed from a master seed and a list of indices.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> indices) {
    std::uint64_t h = detail::mix64(master ^ 0x6a09e667f3bcc909ULL);
    for (auto i : indices) h = detail::mix64(h ^ detail::mix64(i));
    return h;
}

/// One innovation sample at absolute site (n, m).
inline double innovation_at(const InnovationSpec& spec, long n, long m) {
    const std::uint64_t key = detail::site_key(spec.master_seed, n, m);
    const double sigma = std::sqrt(spec.sigma2);
    const double u1 = detail::open_unit(detail::mix64(key));
    switch (spec.distribution) {
    case Distribution::Gaussian: {
        const double u2 = detail::open_unit(detail::mix64(key + 0x9e3779b97f4a7c15ULL));
        return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }
    case Distribution::Uniform:
        // variance of U(-h, h) is h^2 / 3
        return sigma * std::sqrt(3.0) * (2.0 * u1 - 1.0);
    case Distribution::Laplace: {
        // variance of Laplace(0, b) is 2 b^2
        const double b = sigma / std::sqrt(2.0);
        const double c = u1 - 0.5;
        return c < 0.0 ? b * std::log(1.0 + 2.0 * c) : -b * std::log(1.0 - 2.0 * c);
    }
    }
    return 0.0;
}

/// i.i.d. innovation field on rows [origin_row, origin_row + rows) and
/// columns [origin_col, origin_col + cols).
inline Field2D gen_innovations(const InnovationSpec& spec, std::size_t rows, std::size_t cols, long origin_row = 0,
                               long origin_col = 0) {
    spec.validate();
    if (rows < 1 || cols < 1) throw ArgumentError("innovation field dimensions must be >= 1");
    Field2D u(rows, cols, origin_row, origin_col);
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j)
            u(i, j) = innovation_at(spec, origin_row + static_cast<long>(i), origin_col + static_cast<long>(j));
    return u;
}

/// Absolute index window of innovations needed to filter an N x M output.
struct InnovationWindow {
    long row_begin = 0;
    long col_begin = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

inline InnovationWindow required_innovation_window(const MaCoefficients& ma, std::size_t out_rows,
                                                   std::size_t out_cols) {
    const long k = ma.extent_k();
    const long l = ma.extent_l();
    InnovationWindow w;
    w.row_begin = -k;
    w.col_begin = -l;
    w.rows = out_rows + static_cast<std::size_t>(k);
    w.cols = out_cols + static_cast<std::size_t>(ma.kind() == SupportKind::NSHP ? 2 * l : l);
    return w;
}

/// w(n, m) = sum_{(r,s) in D(k,l)} a(r,s) u(n - r, m - s) on 0 <= n < N, 0 <= m < M.
/// The input must cover every index the sum touches; nothing is zero-padded.
inline Field2D ma_filter(const Field2D& u, const MaCoefficients& ma, std::size_t out_rows, std::size_t out_cols) {
    if (out_rows < 1 || out_cols < 1) throw ArgumentError("output dimensions must be >= 1");
    const auto need = required_innovation_window(ma, out_rows, out_cols);
    const long need_row_end = need.row_begin + static_cast<long>(need.rows) - 1;
    const long need_col_end = need.col_begin + static_cast<long>(need.cols) - 1;
    const long have_row_end = u.origin_row() + static_cast<long>(u.rows()) - 1;
    const long have_col_end = u.origin_col() + static_cast<long>(u.cols()) - 1;
    if (u.origin_row() > need.row_begin || have_row_end < need_row_end || u.origin_col() > need.col_begin ||
        have_col_end < need_col_end) {
        throw CoverageError("innovation field covers rows [" + std::to_string(u.origin_row()) + ", " +
                            std::to_string(have_row_end) + "] x cols [" + std::to_string(u.origin_col()) + ", " +
                            std::to_string(have_col_end) + "] but rows [" + std::to_string(need.row_begin) + ", " +
                            std::to_string(need_row_end) + "] x cols [" + std::to_string(need.col_begin) + ", " +
                            std::to_string(need_col_end) + "] are required");
    }

    Field2D w(out_rows, out_cols);
    for (const auto& [lag, a] : ma.coeffs()) {
        if (a == 0.0) continue;
        for (std::size_t n = 0; n < out_rows; ++n) {
            const std::size_t ui = static_cast<std::size_t>(static_cast<long>(n) - lag.r - u.origin_row());
            const long uj0 = -static_cast<long>(lag.s) - u.origin_col();
            for (std::size_t m = 0; m < out_cols; ++m)
                w(n, m) += a * u(ui, static_cast<std::size_t>(static_cast<long>(m) + uj0));
        }
    }
    return w;
}

/// Stationary MA noise on the N x M window, drawn from innovations on the
/// enlarged index set so the output has no start-up transient.
inline Field2D synthesize_noise(const InnovationSpec& spec, const MaCoefficients& ma, std::size_t rows,
                                std::size_t cols) {
    const auto win = required_innovation_window(ma, rows, cols);
    const Field2D u = gen_innovations(spec, win.rows, win.cols, win.row_begin, win.col_begin);
    return ma_filter(u, ma, rows, cols);
}

/// Adds the sinusoidal components to a noise field:
/// y(n,m) = sum_i rho_i cos(omega_i n + upsilon_i m + phi_i) + w(n,m).
inline Field2D compose(const ParamVector& params, const Field2D& noise) {
    if (noise.origin_row() != 0 || noise.origin_col() != 0)
        throw ArgumentError("compose expects a noise field with origin (0, 0)");
    Field2D y = noise;
    for (const auto& c : params) {
        for (std::size_t n = 0; n < y.rows(); ++n)
            for (std::size_t m = 0; m < y.cols(); ++m)
                y(n, m) += c.value_at(static_cast<double>(n), static_cast<double>(m));
    }
    return y;
}

/// Noiseless field of the given size.
inline Field2D compose(const ParamVector& params, std::size_t rows, std::size_t cols) {
    return compose(params, Field2D(rows, cols));
}

} // namespace mixspec2d
