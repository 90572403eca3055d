#pragma once

// Domain types for 2-D sinusoids in moving-average noise: sinusoid
// parameters, finite-support MA coefficient arrays, innovation laws and
// real lattices, plus the closed-form noise quantities (spectral density
// and the penalty constant A).
//
// The theory is stated for MA fields with infinite support; everything here
// works with finite supports D(k,l), so theory-level statements apply in the
// limit of growing support.

#include <algorithm>
#include <cmath>
#include <compare>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mixspec2d/errors.hpp"

namespace mixspec2d {

inline constexpr double two_pi = 2.0 * std::numbers::pi;
inline constexpr double default_rho_max = 1e6;
inline constexpr double default_min_freq_sep = 1e-3;

/// Minimum frequency separation tied to an N x M field: four unpadded bins.
inline double min_freq_sep_for(std::size_t rows, std::size_t cols) {
    return two_pi * 4.0 / static_cast<double>(std::max(rows, cols));
}

/// Maps an angle into [0, 2pi).
inline double wrap_angle(double x) {
    double r = std::fmod(x, two_pi);
    if (r < 0.0) r += two_pi;
    if (r >= two_pi) r = 0.0;
    return r;
}

/// Circular distance between two angles, in [0, pi].
inline double angle_distance(double a, double b) {
    double d = std::fabs(wrap_angle(a - b));
    return std::min(d, two_pi - d);
}

/// Max-metric distance between two frequency pairs on the torus, where a pair
/// and its conjugate mirror (2pi - w, 2pi - v) count as the same real sinusoid.
inline double freq_distance(double w1, double v1, double w2, double v2) {
    double direct = std::max(angle_distance(w1, w2), angle_distance(v1, v2));
    double mirror = std::max(angle_distance(w1, -w2), angle_distance(v1, -v2));
    return std::min(direct, mirror);
}

struct SinusoidParams {
    double rho = 1.0;
    double omega = 0.5;
    double upsilon = 0.5;
    double phi = 0.0;

    double value_at(double n, double m) const { return rho * std::cos(omega * n + upsilon * m + phi); }

    friend bool operator==(const SinusoidParams&, const SinusoidParams&) = default;
};

inline void validate(const SinusoidParams& p, double rho_max = default_rho_max) {
    if (!std::isfinite(p.rho) || !(p.rho > 0.0) || p.rho > rho_max)
        throw InvalidModelError("sinusoid amplitude must lie in (0, " + std::to_string(rho_max) +
                                "], got " + std::to_string(p.rho));
    auto open_freq = [](double f) { return std::isfinite(f) && f > 0.0 && f < two_pi; };
    if (!open_freq(p.omega) || !open_freq(p.upsilon))
        throw InvalidModelError("sinusoid frequencies must lie in (0, 2pi)");
    if (!std::isfinite(p.phi) || p.phi < 0.0 || p.phi >= two_pi)
        throw InvalidModelError("sinusoid phase must lie in [0, 2pi)");
}

/// True when (omega, upsilon) is the representative of its conjugate pair:
/// omega < pi, or omega == pi and upsilon <= pi.
inline bool is_representative(double omega, double upsilon) {
    if (omega < std::numbers::pi) return true;
    if (omega > std::numbers::pi) return false;
    return upsilon <= std::numbers::pi;
}

/// Canonical form of one component: rho > 0 (sign absorbed in phi), phi in
/// [0, 2pi), frequency folded onto the representative of its conjugate pair.
inline SinusoidParams canonical_form(SinusoidParams p) {
    if (p.rho < 0.0) {
        p.rho = -p.rho;
        p.phi += std::numbers::pi;
    }
    p.omega = wrap_angle(p.omega);
    p.upsilon = wrap_angle(p.upsilon);
    p.phi = wrap_angle(p.phi);
    if (!is_representative(p.omega, p.upsilon)) {
        // rho cos(wn + vm + phi) == rho cos((2pi - w)n + (2pi - v)m - phi) on the integer lattice
        p.omega = two_pi - p.omega;
        p.upsilon = p.upsilon == 0.0 ? 0.0 : two_pi - p.upsilon;
        p.phi = wrap_angle(-p.phi);
    }
    return p;
}

struct ParamConstraints {
    double rho_max = default_rho_max;
    double min_freq_sep = default_min_freq_sep;
};

/// Ordered list of k sinusoid components (the parameter vector theta_k).
class ParamVector {
public:
    ParamVector() = default;

    explicit ParamVector(std::vector<SinusoidParams> components, ParamConstraints constraints = {})
        : components_(std::move(components)) {
        for (const auto& c : components_) validate(c, constraints.rho_max);
        for (std::size_t i = 0; i < components_.size(); ++i)
            for (std::size_t j = i + 1; j < components_.size(); ++j) {
                const auto& a = components_[i];
                const auto& b = components_[j];
                if (freq_distance(a.omega, a.upsilon, b.omega, b.upsilon) < constraints.min_freq_sep)
                    throw InvalidModelError("components " + std::to_string(i) + " and " + std::to_string(j) +
                                            " are closer than the minimum frequency separation");
            }
    }

    /// Canonicalizes every component and sorts by descending amplitude
    /// (ties by omega, then upsilon).
    static ParamVector canonical(std::vector<SinusoidParams> components, ParamConstraints constraints = {}) {
        for (auto& c : components) c = canonical_form(c);
        std::ranges::sort(components, [](const SinusoidParams& a, const SinusoidParams& b) {
            if (a.rho != b.rho) return a.rho > b.rho;
            if (a.omega != b.omega) return a.omega < b.omega;
            return a.upsilon < b.upsilon;
        });
        return ParamVector(std::move(components), constraints);
    }

    const std::vector<SinusoidParams>& components() const noexcept { return components_; }
    std::size_t size() const noexcept { return components_.size(); }
    bool empty() const noexcept { return components_.empty(); }
    const SinusoidParams& operator[](std::size_t i) const { return components_.at(i); }
    auto begin() const noexcept { return components_.begin(); }
    auto end() const noexcept { return components_.end(); }

    /// Strictly descending amplitudes and every component in canonical form.
    bool is_canonical() const {
        for (std::size_t i = 0; i < components_.size(); ++i) {
            if (canonical_form(components_[i]) != components_[i]) return false;
            if (i > 0 && !(components_[i - 1].rho > components_[i].rho)) return false;
        }
        return true;
    }

    /// Sum of the squared amplitudes halved, i.e. the signal power on a large lattice.
    double signal_power() const {
        double s = 0.0;
        for (const auto& c : components_) s += 0.5 * c.rho * c.rho;
        return s;
    }

private:
    std::vector<SinusoidParams> components_;
};

enum class SupportKind { NSHP, QuarterPlane };

inline std::string to_string(SupportKind k) { return k == SupportKind::NSHP ? "nshp" : "quarter_plane"; }

struct Lag {
    int r = 0;
    int s = 0;
    friend auto operator<=>(const Lag&, const Lag&) = default;
};

/// True when (r, s) lies in D(k, l) of the given kind.
inline bool in_support(SupportKind kind, int extent_k, int extent_l, int r, int s) {
    if (kind == SupportKind::QuarterPlane) return r >= 0 && r <= extent_k && s >= 0 && s <= extent_l;
    if (r == 0) return s >= 0 && s <= extent_l;
    return r > 0 && r <= extent_k && s >= -extent_l && s <= extent_l;
}

/// Finite-support MA coefficients a(r, s) with innovation variance sigma^2.
class MaCoefficients {
public:
    MaCoefficients(SupportKind kind, int extent_k, int extent_l, std::map<Lag, double> coeffs, double sigma2)
        : kind_(kind), extent_k_(extent_k), extent_l_(extent_l), coeffs_(std::move(coeffs)), sigma2_(sigma2) {
        if (extent_k_ < 0 || extent_l_ < 0) throw InvalidModelError("MA extents must be nonnegative");
        if (!std::isfinite(sigma2_) || !(sigma2_ > 0.0)) throw InvalidModelError("innovation variance must be > 0");
        bool any_nonzero = false;
        for (const auto& [lag, a] : coeffs_) {
            if (!mixspec2d::in_support(kind_, extent_k_, extent_l_, lag.r, lag.s))
                throw InvalidModelError("MA coefficient at (" + std::to_string(lag.r) + "," + std::to_string(lag.s) +
                                        ") lies outside the declared " + to_string(kind_) + " support");
            if (!std::isfinite(a)) throw InvalidModelError("MA coefficients must be finite");
            any_nonzero = any_nonzero || a != 0.0;
        }
        if (!any_nonzero) throw InvalidModelError("MA coefficients are all zero");
    }

    /// White noise: a(0,0) = 1.
    static MaCoefficients white(double sigma2 = 1.0, SupportKind kind = SupportKind::NSHP) {
        return MaCoefficients(kind, 0, 0, {{Lag{0, 0}, 1.0}}, sigma2);
    }

    SupportKind kind() const noexcept { return kind_; }
    int extent_k() const noexcept { return extent_k_; }
    int extent_l() const noexcept { return extent_l_; }
    double sigma2() const noexcept { return sigma2_; }
    const std::map<Lag, double>& coeffs() const noexcept { return coeffs_; }

    bool in_support(int r, int s) const { return mixspec2d::in_support(kind_, extent_k_, extent_l_, r, s); }

    double coefficient(int r, int s) const {
        auto it = coeffs_.find(Lag{r, s});
        return it == coeffs_.end() ? 0.0 : it->second;
    }

    double sum_abs() const {
        double s = 0.0;
        for (const auto& [lag, a] : coeffs_) s += std::fabs(a);
        return s;
    }

    double sum_sq() const {
        double s = 0.0;
        for (const auto& [lag, a] : coeffs_) s += a * a;
        return s;
    }

    /// Variance of the noise field, sigma^2 * sum a^2.
    double noise_variance() const { return sigma2_ * sum_sq(); }

    /// E[w(n,m) w(n+p, m+q)] = sigma^2 * sum a(r,s) a(r+p, s+q).
    double autocovariance(int p, int q) const {
        double s = 0.0;
        for (const auto& [lag, a] : coeffs_) s += a * coefficient(lag.r + p, lag.s + q);
        return sigma2_ * s;
    }

    MaCoefficients with_sigma2(double sigma2) const {
        return MaCoefficients(kind_, extent_k_, extent_l_, coeffs_, sigma2);
    }

    /// Re-declares the support kind. A quarter-plane array is always a valid
    /// NSHP array; the reverse throws unless every lag is in the quarter plane.
    MaCoefficients with_support(SupportKind kind) const {
        return MaCoefficients(kind, extent_k_, extent_l_, coeffs_, sigma2_);
    }

private:
    SupportKind kind_;
    int extent_k_;
    int extent_l_;
    std::map<Lag, double> coeffs_;
    double sigma2_;
};

/// f_w(omega, upsilon) = sigma^2 |sum a(r,s) e^{j(omega r + upsilon s)}|^2.
inline double spectral_density(const MaCoefficients& ma, double omega, double upsilon) {
    std::complex<double> acc{0.0, 0.0};
    for (const auto& [lag, a] : ma.coeffs())
        acc += a * std::polar(1.0, omega * lag.r + upsilon * lag.s);
    return ma.sigma2() * std::norm(acc);
}

/// A = (sum_{(r,s)} sum_{(q,t)} |a(r,s) a(q,t)|) / sum a^2 = (sum |a|)^2 / sum a^2.
inline double noise_constant_A(const MaCoefficients& ma) {
    double sq = ma.sum_sq();
    if (!(sq > 0.0)) throw InvalidModelError("noise constant undefined for all-zero coefficients");
    double abs_sum = ma.sum_abs();
    return abs_sum * abs_sum / sq;
}

enum class Distribution { Gaussian, Uniform, Laplace };

inline std::string to_string(Distribution d) {
    switch (d) {
    case Distribution::Gaussian: return "gaussian";
    case Distribution::Uniform: return "uniform";
    case Distribution::Laplace: return "laplace";
    }
    return "unknown";
}

/// Law of the i.i.d. innovation field u(n, m): zero mean, variance sigma2.
/// All three laws have finite moments of every order.
struct InnovationSpec {
    Distribution distribution = Distribution::Gaussian;
    double sigma2 = 1.0;
    std::uint64_t master_seed = 0;

    void validate() const {
        if (!std::isfinite(sigma2) || !(sigma2 > 0.0)) throw InvalidModelError("innovation variance must be > 0");
    }
};

/// Real N x M lattice stored row-major. (origin_row, origin_col) is the
/// absolute index of the first stored element, so extended grids can start at
/// negative indices.
class Field2D {
public:
    Field2D(std::size_t rows, std::size_t cols, long origin_row = 0, long origin_col = 0)
        : Field2D(rows, cols, std::vector<double>(rows * cols, 0.0), origin_row, origin_col) {}

    Field2D(std::size_t rows, std::size_t cols, std::vector<double> values, long origin_row = 0, long origin_col = 0)
        : rows_(rows), cols_(cols), origin_row_(origin_row), origin_col_(origin_col), values_(std::move(values)) {
        if (rows_ < 1 || cols_ < 1) throw ArgumentError("field dimensions must be >= 1");
        if (values_.size() != rows_ * cols_) throw ArgumentError("field value count does not match dimensions");
        for (double v : values_)
            if (!std::isfinite(v)) throw ArgumentError("field values must be finite");
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return values_.size(); }
    long origin_row() const noexcept { return origin_row_; }
    long origin_col() const noexcept { return origin_col_; }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    /// Local (zero-based) element access.
    double& operator()(std::size_t i, std::size_t j) { return values_[i * cols_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values_[i * cols_ + j]; }

    bool contains(long n, long m) const {
        return n >= origin_row_ && n < origin_row_ + static_cast<long>(rows_) && m >= origin_col_ &&
               m < origin_col_ + static_cast<long>(cols_);
    }

    /// Element at absolute index (n, m).
    double at(long n, long m) const {
        if (!contains(n, m)) throw ArgumentError("index outside field");
        return values_[static_cast<std::size_t>(n - origin_row_) * cols_ + static_cast<std::size_t>(m - origin_col_)];
    }

    double mean_square() const {
        double s = 0.0;
        for (double v : values_) s += v * v;
        return s / static_cast<double>(values_.size());
    }

    double mean() const {
        double s = 0.0;
        for (double v : values_) s += v;
        return s / static_cast<double>(values_.size());
    }

    Field2D scaled(double c) const {
        Field2D out = *this;
        for (double& v : out.values_) v *= c;
        return out;
    }

    friend bool operator==(const Field2D&, const Field2D&) = default;

private:
    std::size_t rows_;
    std::size_t cols_;
    long origin_row_;
    long origin_col_;
    std::vector<double> values_;
};

} // namespace mixspec2d
