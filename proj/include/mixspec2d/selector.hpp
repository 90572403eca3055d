#pragma once

// Order selection by minimizing
//   chi_xi(k) = NM ln L_k + xi k ln NM,   k = 0 .. Q-1,
// where L_k is the least-squares loss at assumed order k. Consistency needs
// xi > 14 A for NSHP noise and xi > 8 A for quarter-plane noise.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mixspec2d/estimator.hpp"
#include "mixspec2d/model.hpp"

namespace mixspec2d {

inline constexpr double default_xi_margin = 0.01;
inline constexpr std::size_t default_q_max = 8;

/// Penalty multiplier of the consistency threshold: 14 (NSHP) or 8 (quarter plane).
constexpr double threshold_multiplier(SupportKind kind) { return kind == SupportKind::NSHP ? 14.0 : 8.0; }

/// c * A * (1 + margin) with c from the declared support kind.
inline double xi_threshold(const MaCoefficients& ma, double margin = default_xi_margin) {
    if (!(margin >= 0.0)) throw ArgumentError("xi margin must be >= 0");
    return threshold_multiplier(ma.kind()) * noise_constant_A(ma) * (1.0 + margin);
}

/// NM ln(loss) + xi k ln(NM). A zero loss maps to -infinity, which orders
/// below every finite value so a perfect fit beats every larger order.
inline double chi_statistic(double nm, double loss_k, std::size_t k, double xi) {
    if (!(loss_k >= 0.0)) throw ArgumentError("loss must be >= 0");
    if (loss_k == 0.0) return -std::numeric_limits<double>::infinity();
    return nm * std::log(loss_k) + xi * static_cast<double>(k) * std::log(nm);
}

struct SelectionResult {
    std::size_t q_max = 0;
    double xi = 0.0;
    double nm = 0.0;
    std::vector<double> losses; ///< NaN where the estimate failed
    std::vector<double> chi;    ///< NaN where the estimate failed
    std::vector<bool> failed;
    std::vector<std::string> errors;
    std::vector<bool> retried;
    std::vector<std::optional<LseResult>> estimates;
    std::size_t selected = 0;
};

/// Recomputes chi and the smallest argmin from stored losses.
inline void score(SelectionResult& r, double xi) {
    r.xi = xi;
    r.chi.assign(r.losses.size(), std::numeric_limits<double>::quiet_NaN());
    std::optional<std::size_t> best;
    for (std::size_t k = 0; k < r.losses.size(); ++k) {
        if (r.failed[k]) continue;
        r.chi[k] = chi_statistic(r.nm, r.losses[k], k, xi);
        if (!best || r.chi[k] < r.chi[*best]) best = k;
    }
    r.selected = best.value_or(0);
}

/// Runs lse_estimate for k = 0 .. Q-1 and picks the smallest k minimizing chi.
/// If L_k exceeds L_{k-1}, k is re-run once, initialized from the order k-1
/// frequencies plus the largest remaining residual peak, and the re-run is
/// accepted. Failed orders are flagged and excluded from the argmin.
inline SelectionResult select_order(const Field2D& y, std::size_t q_max, double xi, const LseOptions& opts = {}) {
    if (q_max < 1) throw ArgumentError("q_max must be >= 1");
    if (!(xi > 0.0) || !std::isfinite(xi)) throw ArgumentError("xi must be a positive finite number");

    SelectionResult r;
    r.q_max = q_max;
    r.nm = static_cast<double>(y.size());
    r.losses.assign(q_max, std::numeric_limits<double>::quiet_NaN());
    r.failed.assign(q_max, false);
    r.retried.assign(q_max, false);
    r.errors.assign(q_max, {});
    r.estimates.resize(q_max);

    const double min_sep = opts.min_freq_sep.value_or(min_freq_sep_for(y.rows(), y.cols()));
    for (std::size_t k = 0; k < q_max; ++k) {
        try {
            r.estimates[k] = lse_estimate(y, k, opts);
        } catch (const Error& e) {
            r.failed[k] = true;
            r.errors[k] = e.what();
            continue;
        }
        r.losses[k] = r.estimates[k]->loss;

        if (k == 0 || r.failed[k - 1]) continue;
        const double prev = r.losses[k - 1];
        if (r.losses[k] <= prev + 1e-12 * std::max(1.0, prev)) continue;

        r.retried[k] = true;
        try {
            std::vector<Frequency> init;
            for (const auto& c : r.estimates[k - 1]->params) init.push_back({c.omega, c.upsilon});
            const Field2D resid = [&] {
                const auto fit = linear_amplitudes(y, init, opts.min_rcond);
                Field2D out = y;
                const auto comps = fit.components();
                for (std::size_t n = 0; n < y.rows(); ++n)
                    for (std::size_t m = 0; m < y.cols(); ++m)
                        for (const auto& c : comps)
                            out(n, m) -= c.value_at(static_cast<double>(n), static_cast<double>(m));
                return out;
            }();
            const auto peaks = top_peaks(periodogram(resid, opts.pad_factor), 1, init, min_sep);
            if (!peaks.empty()) {
                init.push_back({peaks.front().omega, peaks.front().upsilon});
                r.estimates[k] = lse_refine(y, init, opts);
                r.losses[k] = r.estimates[k]->loss;
            }
        } catch (const Error&) {
            // keep the first estimate
        }
    }
    score(r, xi);
    return r;
}

} // namespace mixspec2d
