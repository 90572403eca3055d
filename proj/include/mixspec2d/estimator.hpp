#pragma once

// Least-squares estimation of k sinusoids in a 2-D field.
//
// The loss (1/NM) sum (y - sum rho cos(w n + v m + phi))^2 is minimized by
// variable projection: for fixed frequencies the model
// sum a_i cos(w_i n + v_i m) + b_i sin(w_i n + v_i m) is linear, so amplitudes
// are solved in closed form and only the 2k frequencies are iterated.
// Initialization is greedy (largest residual periodogram peak, k times);
// refinement is a Gauss-Newton step on the frequencies with a step-halving
// line search, clipped to the admissible frequency box.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mixspec2d/model.hpp"
#include "mixspec2d/spectrum.hpp"

namespace mixspec2d {

struct LseOptions {
    std::size_t pad_factor = default_pad_factor;
    double rel_tol = 1e-10;
    std::size_t max_iter = 100;
    std::size_t max_halvings = 30;
    std::size_t k_max = 32;
    /// Defaults to min_freq_sep_for(N, M) when unset.
    std::optional<double> min_freq_sep;
    double rho_max = default_rho_max;
    /// Reciprocal condition number below which a linear fit is rejected.
    double min_rcond = 1e-12;
};

/// Closed-form amplitudes for fixed frequencies.
struct LinearFit {
    struct Coef {
        double a = 0.0; ///< cosine coefficient
        double b = 0.0; ///< sine coefficient
    };
    std::vector<Frequency> freqs;
    std::vector<Coef> coefs;
    double loss = 0.0;

    /// rho = sqrt(a^2 + b^2), phi = atan2(-b, a) in [0, 2pi).
    std::vector<SinusoidParams> components() const {
        std::vector<SinusoidParams> out;
        out.reserve(coefs.size());
        for (std::size_t i = 0; i < coefs.size(); ++i) {
            const auto [a, b] = coefs[i];
            out.push_back({std::hypot(a, b), freqs[i].omega, freqs[i].upsilon, wrap_angle(std::atan2(-b, a))});
        }
        return out;
    }
};

struct LseResult {
    ParamVector params;
    double loss = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    /// Loss after initialization followed by the loss of every accepted step.
    std::vector<double> loss_trace;
    std::size_t reinitializations = 0;
};

/// (1/NM) sum_{n,m} (y(n,m) - sum_i rho_i cos(w_i n + v_i m + phi_i))^2
inline double loss(const Field2D& y, const ParamVector& params) {
    double s = 0.0;
    for (std::size_t n = 0; n < y.rows(); ++n)
        for (std::size_t m = 0; m < y.cols(); ++m) {
            double r = y(n, m);
            for (const auto& c : params) r -= c.value_at(static_cast<double>(n), static_cast<double>(m));
            s += r * r;
        }
    return s / static_cast<double>(y.size());
}

namespace detail {

inline Eigen::Map<const Eigen::VectorXd> as_vector(const Field2D& y) {
    return {y.values().data(), static_cast<Eigen::Index>(y.size())};
}

// Columns [cos_0, sin_0, cos_1, sin_1, ...] evaluated on the field lattice,
// built per axis with the angle-addition identities.
inline Eigen::MatrixXd design_matrix(std::size_t rows, std::size_t cols, std::span<const Frequency> freqs) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows * cols), static_cast<Eigen::Index>(2 * freqs.size()));
    std::vector<double> cn(rows), sn(rows), cm(cols), sm(cols);
    for (std::size_t i = 0; i < freqs.size(); ++i) {
        for (std::size_t n = 0; n < rows; ++n) {
            cn[n] = std::cos(freqs[i].omega * static_cast<double>(n));
            sn[n] = std::sin(freqs[i].omega * static_cast<double>(n));
        }
        for (std::size_t m = 0; m < cols; ++m) {
            cm[m] = std::cos(freqs[i].upsilon * static_cast<double>(m));
            sm[m] = std::sin(freqs[i].upsilon * static_cast<double>(m));
        }
        double* c = x.col(static_cast<Eigen::Index>(2 * i)).data();
        double* s = x.col(static_cast<Eigen::Index>(2 * i + 1)).data();
        for (std::size_t n = 0; n < rows; ++n)
            for (std::size_t m = 0; m < cols; ++m) {
                c[n * cols + m] = cn[n] * cm[m] - sn[n] * sm[m];
                s[n * cols + m] = sn[n] * cm[m] + cn[n] * sm[m];
            }
    }
    return x;
}

// Solves the symmetric positive semi-definite system g x = rhs after Jacobi
// scaling; nullopt when the scaled matrix has reciprocal condition < min_rcond.
inline std::optional<Eigen::VectorXd> solve_scaled(const Eigen::MatrixXd& g, const Eigen::VectorXd& rhs,
                                                   double min_rcond) {
    const Eigen::Index p = g.rows();
    Eigen::VectorXd d(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        if (!(g(i, i) > 0.0) || !std::isfinite(g(i, i))) return std::nullopt;
        d(i) = 1.0 / std::sqrt(g(i, i));
    }
    const Eigen::MatrixXd gs = d.asDiagonal() * g * d.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gs, Eigen::EigenvaluesOnly);
    const auto& ev = eig.eigenvalues();
    if (!(ev(0) > min_rcond * ev(p - 1))) return std::nullopt;
    Eigen::VectorXd z = gs.ldlt().solve(d.asDiagonal() * rhs);
    return Eigen::VectorXd(d.asDiagonal() * z);
}

struct Projection {
    LinearFit fit;
    Eigen::VectorXd residual;
    Eigen::MatrixXd design;
};

inline std::optional<Projection> try_project(const Field2D& y, std::span<const Frequency> freqs, double min_rcond) {
    Projection p;
    p.design = design_matrix(y.rows(), y.cols(), freqs);
    const auto yv = as_vector(y);
    const Eigen::MatrixXd g = p.design.transpose() * p.design;
    const Eigen::VectorXd rhs = p.design.transpose() * yv;
    auto c = solve_scaled(g, rhs, min_rcond);
    if (!c) return std::nullopt;
    p.residual = yv - p.design * (*c);
    p.fit.freqs.assign(freqs.begin(), freqs.end());
    for (std::size_t i = 0; i < freqs.size(); ++i)
        p.fit.coefs.push_back({(*c)(static_cast<Eigen::Index>(2 * i)), (*c)(static_cast<Eigen::Index>(2 * i + 1))});
    p.fit.loss = p.residual.squaredNorm() / static_cast<double>(y.size());
    return p;
}

inline Projection project(const Field2D& y, std::span<const Frequency> freqs, double min_rcond) {
    auto p = try_project(y, freqs, min_rcond);
    if (!p) throw ConditioningError("normal equations of the linear amplitude fit are numerically singular");
    return std::move(*p);
}

// Derivatives of the fitted model with respect to (w_i, v_i):
// d/dw_i = n (-a_i sin + b_i cos), d/dv_i = m (-a_i sin + b_i cos).
inline Eigen::MatrixXd frequency_jacobian(const Projection& p, std::size_t rows, std::size_t cols) {
    const std::size_t k = p.fit.coefs.size();
    Eigen::MatrixXd jf(static_cast<Eigen::Index>(rows * cols), static_cast<Eigen::Index>(2 * k));
    for (std::size_t i = 0; i < k; ++i) {
        const auto [a, b] = p.fit.coefs[i];
        const double* c = p.design.col(static_cast<Eigen::Index>(2 * i)).data();
        const double* s = p.design.col(static_cast<Eigen::Index>(2 * i + 1)).data();
        double* dw = jf.col(static_cast<Eigen::Index>(2 * i)).data();
        double* dv = jf.col(static_cast<Eigen::Index>(2 * i + 1)).data();
        for (std::size_t n = 0; n < rows; ++n)
            for (std::size_t m = 0; m < cols; ++m) {
                const std::size_t idx = n * cols + m;
                const double t = -a * s[idx] + b * c[idx];
                dw[idx] = static_cast<double>(n) * t;
                dv[idx] = static_cast<double>(m) * t;
            }
    }
    return jf;
}

inline bool has_collision(std::span<const Frequency> f, double min_sep, std::size_t* later = nullptr) {
    for (std::size_t i = 0; i < f.size(); ++i)
        for (std::size_t j = i + 1; j < f.size(); ++j)
            if (freq_distance(f[i].omega, f[i].upsilon, f[j].omega, f[j].upsilon) < min_sep) {
                if (later) *later = j;
                return true;
            }
    return false;
}

} // namespace detail

/// Exact linear least squares over the 2k cosine/sine regressors at fixed
/// frequencies. Throws ConditioningError when the normal system is singular.
inline LinearFit linear_amplitudes(const Field2D& y, std::span<const Frequency> freqs, double min_rcond = 1e-12) {
    if (freqs.empty()) return LinearFit{{}, {}, y.mean_square()};
    return detail::project(y, freqs, min_rcond).fit;
}

/// Variable-projection objective: the minimal loss over amplitudes at fixed frequencies.
inline double vp_objective(const Field2D& y, std::span<const Frequency> freqs) {
    return linear_amplitudes(y, freqs).loss;
}

/// Analytic gradient of vp_objective, ordered (w_0, v_0, w_1, v_1, ...).
/// At the optimal amplitudes the amplitude derivatives vanish, so only the
/// explicit frequency dependence of the model contributes.
inline std::vector<double> vp_gradient(const Field2D& y, std::span<const Frequency> freqs) {
    if (freqs.empty()) return {};
    const auto p = detail::project(y, freqs, 1e-12);
    const Eigen::MatrixXd jf = detail::frequency_jacobian(p, y.rows(), y.cols());
    const Eigen::VectorXd g = (-2.0 / static_cast<double>(y.size())) * (jf.transpose() * p.residual);
    return {g.data(), g.data() + g.size()};
}

/// Joint refinement of the given initial frequencies.
inline LseResult lse_refine(const Field2D& y, std::vector<Frequency> freqs, const LseOptions& opts = {}) {
    const std::size_t k = freqs.size();
    const double min_sep = opts.min_freq_sep.value_or(min_freq_sep_for(y.rows(), y.cols()));
    const auto box = FrequencyBox::for_field(y.rows(), y.cols());
    const double exact_floor = 1e-28 * y.mean_square();

    LseResult result;
    if (k == 0) {
        result.loss = y.mean_square();
        result.converged = true;
        result.loss_trace = {result.loss};
        return result;
    }
    for (auto& f : freqs) f = {box.clamp_omega(wrap_angle(f.omega)), box.clamp_upsilon(wrap_angle(f.upsilon))};
    if (detail::has_collision(freqs, min_sep))
        throw ArgumentError("initial frequencies are closer than the minimum separation");

    detail::Projection cur = detail::project(y, freqs, opts.min_rcond);
    result.loss_trace.push_back(cur.fit.loss);

    const Eigen::Index nf = static_cast<Eigen::Index>(2 * k);
    bool converged = false;
    std::size_t iter = 0;
    while (iter < opts.max_iter) {
        if (cur.fit.loss <= exact_floor) {
            converged = true;
            break;
        }
        ++iter;
        // Gauss-Newton on (frequencies, amplitudes); keep the frequency part.
        Eigen::MatrixXd jac(cur.design.rows(), 2 * nf);
        jac.leftCols(nf) = detail::frequency_jacobian(cur, y.rows(), y.cols());
        jac.rightCols(nf) = cur.design;
        const Eigen::MatrixXd g = jac.transpose() * jac;
        const Eigen::VectorXd rhs = jac.transpose() * cur.residual;
        auto delta = detail::solve_scaled(g, rhs, 1e-15);
        for (double lambda = 1e-10; !delta && lambda < 1.0; lambda *= 100.0) {
            Eigen::MatrixXd damped = g;
            damped.diagonal() *= (1.0 + lambda);
            delta = detail::solve_scaled(damped, rhs, 1e-15);
        }
        if (!delta) {
            converged = true;
            break;
        }

        bool accepted = false;
        bool collided = false;
        std::vector<Frequency> full_step;
        double t = 1.0;
        for (std::size_t h = 0; h <= opts.max_halvings && !accepted; ++h, t *= 0.5) {
            std::vector<Frequency> cand(k);
            for (std::size_t i = 0; i < k; ++i) {
                cand[i] = {box.clamp_omega(freqs[i].omega + t * (*delta)(static_cast<Eigen::Index>(2 * i))),
                           box.clamp_upsilon(freqs[i].upsilon + t * (*delta)(static_cast<Eigen::Index>(2 * i + 1)))};
            }
            if (h == 0) full_step = cand;
            if (detail::has_collision(cand, min_sep)) {
                collided = true;
                continue;
            }
            auto proj = detail::try_project(y, cand, opts.min_rcond);
            if (proj && proj->fit.loss < cur.fit.loss) {
                const double prev = cur.fit.loss;
                cur = std::move(*proj);
                freqs = std::move(cand);
                result.loss_trace.push_back(cur.fit.loss);
                accepted = true;
                if (prev - cur.fit.loss <= opts.rel_tol * prev) converged = true;
            }
        }
        if (accepted) {
            if (converged) break;
            continue;
        }

        // No descent along the step. If it ran two components together,
        // restart the later one from the strongest remaining residual peak.
        std::size_t later = 0;
        if (collided && result.reinitializations < k && detail::has_collision(full_step, min_sep, &later)) {
            std::vector<Frequency> others;
            for (std::size_t i = 0; i < k; ++i)
                if (i != later) others.push_back(freqs[i]);
            const auto partial = detail::try_project(y, others, opts.min_rcond);
            if (partial) {
                const Field2D resid(y.rows(), y.cols(),
                                    std::vector<double>(partial->residual.data(),
                                                        partial->residual.data() + partial->residual.size()));
                auto excl = others;
                excl.push_back(freqs[later]);
                const auto peaks = top_peaks(periodogram(resid, opts.pad_factor), 1, excl, min_sep);
                if (!peaks.empty()) {
                    auto cand = freqs;
                    cand[later] = {peaks.front().omega, peaks.front().upsilon};
                    auto proj = detail::try_project(y, cand, opts.min_rcond);
                    if (proj && proj->fit.loss < cur.fit.loss && !detail::has_collision(cand, min_sep)) {
                        ++result.reinitializations;
                        cur = std::move(*proj);
                        freqs = std::move(cand);
                        result.loss_trace.push_back(cur.fit.loss);
                        continue;
                    }
                }
            }
        }
        converged = true;
        break;
    }

    auto comps = cur.fit.components();
    for (std::size_t i = 0; i < comps.size(); ++i)
        if (!(comps[i].rho > 0.0))
            throw RankDeficiencyError("component " + std::to_string(i) + " has zero fitted amplitude");
    result.params = ParamVector::canonical(std::move(comps), ParamConstraints{opts.rho_max, min_sep});
    result.loss = loss(y, result.params);
    result.iterations = iter;
    result.converged = converged;
    return result;
}

/// Greedy initialization: k times, take the largest admissible peak of the
/// residual periodogram, refit all chosen frequencies jointly, subtract.
inline std::vector<Frequency> greedy_init(const Field2D& y, std::size_t k, const LseOptions& opts = {}) {
    const double min_sep = opts.min_freq_sep.value_or(min_freq_sep_for(y.rows(), y.cols()));
    std::vector<Frequency> freqs;
    Field2D resid = y;
    for (std::size_t i = 0; i < k; ++i) {
        const auto peaks = top_peaks(periodogram(resid, opts.pad_factor), 1, freqs, min_sep);
        if (peaks.empty())
            throw RankDeficiencyError("no admissible periodogram peak for component " + std::to_string(i));
        freqs.push_back({peaks.front().omega, peaks.front().upsilon});
        if (i + 1 == k) break;
        // refine before the next peak so leakage from grid-rounded frequencies
        // does not decide between comparable residual peaks
        try {
            const auto r = lse_refine(y, freqs, opts);
            std::vector<Frequency> refined;
            for (const auto& c : r.params) refined.push_back({c.omega, c.upsilon});
            freqs = std::move(refined);
        } catch (const Error&) {
        }
        const auto p = detail::project(y, freqs, opts.min_rcond);
        std::copy(p.residual.data(), p.residual.data() + p.residual.size(), resid.values().begin());
    }
    return freqs;
}

/// Least-squares estimate of k sinusoids. k = 0 returns no components and
/// loss mean(y^2). A field with no admissible spectral content (e.g. y == 0)
/// raises RankDeficiencyError for k > 0.
inline LseResult lse_estimate(const Field2D& y, std::size_t k, const LseOptions& opts = {}) {
    if (k > opts.k_max)
        throw ArgumentError("order " + std::to_string(k) + " exceeds k_max " + std::to_string(opts.k_max));
    if (k == 0) return lse_refine(y, {}, opts);
    return lse_refine(y, greedy_init(y, k, opts), opts);
}

} // namespace mixspec2d
