#pragma once

// Monte Carlo harness: synthesizes fields for a list of lattice sizes, runs
// the configured checks per trial and aggregates per size.
//
// Every trial is reproducible from (config, size_index, trial_index): its
// innovation seed is derived from the master seed and the two indices, and no
// state is shared between trials. Aggregation runs after sorting trials by
// (size_index, trial_index), so outputs do not depend on execution order.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "mixspec2d/estimator.hpp"
#include "mixspec2d/io.hpp"
#include "mixspec2d/model.hpp"
#include "mixspec2d/selector.hpp"
#include "mixspec2d/spectrum.hpp"
#include "mixspec2d/synth.hpp"

namespace mixspec2d {

struct XiMode {
    enum class Kind { AutoThreshold, Fixed };
    Kind kind = Kind::AutoThreshold;
    double margin = default_xi_margin;
    /// Support kind declared for the threshold; defaults to the MA's own kind.
    std::optional<SupportKind> declared;
    double value = 0.0;
};

struct Checks {
    bool selection = false;
    std::vector<std::size_t> under_est_orders;
    bool over_est = false;
    bool sup_decay = false;
    bool loss_limits = false;
};

struct LatticeSize {
    std::size_t rows = 0;
    std::size_t cols = 0;
    friend bool operator==(const LatticeSize&, const LatticeSize&) = default;
};

struct ExperimentConfig {
    std::string name = "experiment";
    ParamVector truth;
    MaCoefficients ma = MaCoefficients::white();
    InnovationSpec innovation;
    std::vector<LatticeSize> sizes;
    std::size_t trials = 1;
    std::size_t q_max = default_q_max;
    XiMode xi;
    Checks checks;
    std::size_t pad_factor = default_pad_factor;
    std::filesystem::path output_dir;

    std::size_t true_order() const { return truth.size(); }

    double resolve_xi() const {
        if (xi.kind == XiMode::Kind::Fixed) return xi.value;
        return xi_threshold(ma.with_support(xi.declared.value_or(ma.kind())), xi.margin);
    }

    LseOptions lse_options() const {
        LseOptions o;
        o.pad_factor = pad_factor;
        return o;
    }

    void validate() const {
        if (trials < 1) throw ConfigError("trials must be >= 1");
        if (sizes.empty()) throw ConfigError("sizes must be nonempty");
        for (const auto& s : sizes)
            if (s.rows < 16 || s.cols < 16) throw ConfigError("every lattice size must be at least 16 x 16");
        if (q_max < 1) throw ConfigError("q_max must be >= 1");
        if (pad_factor < 1) throw ConfigError("pad_factor must be >= 1");
        if (xi.kind == XiMode::Kind::Fixed && !(xi.value > 0.0)) throw ConfigError("fixed xi must be > 0");
        if (xi.kind == XiMode::Kind::AutoThreshold && !(xi.margin >= 0.0))
            throw ConfigError("xi margin must be >= 0");
        if (checks.loss_limits && !checks.selection)
            throw ConfigError("loss_limits needs the selection check (it reuses the per-order losses)");
        if (std::abs(ma.sigma2() - innovation.sigma2) > 1e-12 * innovation.sigma2)
            throw ConfigError("MA sigma2 and innovation sigma2 disagree");
    }
};

/// Per-component SNR in dB: 10 log10((rho^2 / 2) / (sigma^2 sum a^2)).
inline double component_snr_db(double rho, const MaCoefficients& ma) {
    return 10.0 * std::log10(0.5 * rho * rho / ma.noise_variance());
}

/// Innovation variance giving the requested SNR for a component of amplitude rho.
inline double sigma2_for_snr(double rho, double snr_db, const MaCoefficients& ma) {
    return 0.5 * rho * rho / (std::pow(10.0, snr_db / 10.0) * ma.sum_sq());
}

inline ExperimentConfig config_from_json(const json& j) {
    try {
        ExperimentConfig c;
        c.name = j.value("name", std::string("experiment"));
        if (j.contains("truth")) c.truth = params_from_json(j.at("truth"));
        c.innovation = innovation_from_json(j.value("innovation", json::object()));
        json ma_doc = j.value("ma", json{{"support_kind", "nshp"},
                                         {"extent_k", 0},
                                         {"extent_l", 0},
                                         {"coeffs", json::array({json::array({0, 0, 1.0})})}});
        ma_doc["sigma2"] = c.innovation.sigma2;
        c.ma = ma_from_json(ma_doc);
        if (j.contains("target_snr_db")) {
            if (c.truth.empty()) throw ConfigError("target_snr_db needs at least one true component");
            const double s2 = sigma2_for_snr(c.truth[0].rho, j.at("target_snr_db").get<double>(), c.ma);
            c.innovation.sigma2 = s2;
            c.ma = c.ma.with_sigma2(s2);
        }
        for (const auto& s : j.at("sizes")) {
            if (!s.is_array() || s.size() != 2) throw ConfigError("each size must be [N, M]");
            c.sizes.push_back({s[0].get<std::size_t>(), s[1].get<std::size_t>()});
        }
        c.trials = j.value("trials", std::size_t{1});
        c.q_max = j.value("q_max", default_q_max);
        c.pad_factor = j.value("pad_factor", default_pad_factor);
        if (j.contains("xi")) {
            const auto& x = j.at("xi");
            const auto mode = x.value("mode", std::string("auto"));
            if (mode == "auto") {
                c.xi.kind = XiMode::Kind::AutoThreshold;
                c.xi.margin = x.value("margin", default_xi_margin);
                if (x.contains("declare")) c.xi.declared = support_kind_from_string(x.at("declare").get<std::string>());
            } else if (mode == "fixed") {
                c.xi.kind = XiMode::Kind::Fixed;
                c.xi.value = x.at("value").get<double>();
            } else {
                throw ConfigError("xi.mode must be 'auto' or 'fixed'");
            }
        }
        for (const auto& chk : j.value("checks", json::array())) {
            const auto s = chk.get<std::string>();
            if (s == "selection") c.checks.selection = true;
            else if (s == "over_est") c.checks.over_est = true;
            else if (s == "sup_decay" || s == "sup_decay") c.checks.sup_decay = true;
            else if (s == "loss_limits") c.checks.loss_limits = true;
            else if (s.rfind("under_est:", 0) == 0) c.checks.under_est_orders.push_back(std::stoul(s.substr(10)));
            else throw ConfigError("unknown check '" + s + "'");
        }
        for (auto k : c.checks.under_est_orders)
            if (k < 1 || k >= c.truth.size()) throw ConfigError("under_est order must satisfy 1 <= k < P");
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
        c.validate();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("experiment config: ") + e.what());
    }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) { return config_from_json(load_json(path)); }

inline json to_json(const ExperimentConfig& c) {
    json sizes = json::array();
    for (const auto& s : c.sizes) sizes.push_back({s.rows, s.cols});
    json checks = json::array();
    if (c.checks.selection) checks.push_back("selection");
    for (auto k : c.checks.under_est_orders) checks.push_back("under_est:" + std::to_string(k));
    if (c.checks.over_est) checks.push_back("over_est");
    if (c.checks.sup_decay) checks.push_back("sup_decay");
    if (c.checks.loss_limits) checks.push_back("loss_limits");
    json xi;
    if (c.xi.kind == XiMode::Kind::Fixed) xi = {{"mode", "fixed"}, {"value", c.xi.value}};
    else {
        xi = {{"mode", "auto"}, {"margin", c.xi.margin}};
        if (c.xi.declared) xi["declare"] = to_string(*c.xi.declared);
    }
    return {{"name", c.name},         {"truth", to_json(c.truth)},   {"ma", to_json(c.ma)},
            {"innovation", to_json(c.innovation)}, {"sizes", sizes}, {"trials", c.trials},
            {"q_max", c.q_max},       {"xi", xi},                     {"checks", checks},
            {"pad_factor", c.pad_factor}};
}

/// 64-bit FNV-1a of the canonical JSON dump of the config (output_dir excluded).
inline std::uint64_t config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json(c).dump()) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

struct UnderEstimate {
    std::size_t order = 0;
    bool failed = false;
    std::vector<SinusoidParams> components;
    std::vector<double> freq_errors; ///< against the `order` dominant true components
    std::vector<double> amp_errors;
};

struct OverEstimate {
    bool failed = false;
    SinusoidParams extra;
    Peak noise_argmax;
    double extra_bins = 0.0;     ///< distance to the noise-periodogram argmax, in padded bins
    double rho2_ratio = 0.0;     ///< rho_extra^2 / ((2/NM) max I_w)
    double head_deviation = 0.0; ///< max frequency change of the first P components vs order P
};

struct TrialResult {
    std::size_t size_index = 0;
    std::size_t trial_index = 0;
    LatticeSize size;
    std::uint64_t seed = 0;
    std::optional<SelectionResult> selection; ///< estimates dropped, losses/chi kept
    bool chi_decreasing_to_p = false;         ///< chi strictly decreasing on k = 0..P
    bool chi_min_above_p = false;             ///< chi[k] > chi[P] for every k > P
    std::optional<std::vector<SinusoidParams>> params_at_p;
    std::vector<double> freq_errors_at_p;
    std::vector<double> amp_errors_at_p;
    std::vector<UnderEstimate> under;
    std::optional<OverEstimate> over;
    std::optional<double> sup_stat;
    std::vector<std::string> errors;
    double wall_seconds = 0.0;
};

namespace detail {

// For each reference component (in order), the nearest unused estimate by
// mirror-aware frequency distance. Returns indices into `est`.
inline std::vector<std::size_t> match_components(std::span<const SinusoidParams> ref,
                                                 std::span<const SinusoidParams> est) {
    std::vector<std::size_t> idx;
    std::vector<bool> used(est.size(), false);
    for (const auto& r : ref) {
        std::size_t best = est.size();
        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < est.size(); ++j) {
            if (used[j]) continue;
            const double d = freq_distance(r.omega, r.upsilon, est[j].omega, est[j].upsilon);
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        if (best == est.size()) break;
        used[best] = true;
        idx.push_back(best);
    }
    return idx;
}

inline void errors_against(std::span<const SinusoidParams> ref, std::span<const SinusoidParams> est,
                           std::vector<double>& freq_err, std::vector<double>& amp_err) {
    const auto idx = match_components(ref, est);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        const auto& e = est[idx[i]];
        freq_err.push_back(freq_distance(ref[i].omega, ref[i].upsilon, e.omega, e.upsilon));
        amp_err.push_back(e.rho - ref[i].rho);
    }
}

} // namespace detail

/// Re-scores a trial's stored losses with a different penalty weight.
inline void rescore(TrialResult& t, double xi, std::size_t true_order) {
    if (!t.selection) return;
    score(*t.selection, xi);
    const auto& chi = t.selection->chi;
    const auto& failed = t.selection->failed;
    t.chi_decreasing_to_p = true;
    for (std::size_t k = 1; k <= true_order && k < chi.size(); ++k)
        if (failed[k] || failed[k - 1] || !(chi[k] < chi[k - 1])) t.chi_decreasing_to_p = false;
    t.chi_min_above_p = true_order < chi.size() && !failed[true_order];
    for (std::size_t k = true_order + 1; k < chi.size() && t.chi_min_above_p; ++k)
        if (!failed[k] && !(chi[k] > chi[true_order])) t.chi_min_above_p = false;
}

inline TrialResult run_trial(const ExperimentConfig& config, std::size_t size_index, std::size_t trial_index) {
    if (size_index >= config.sizes.size() || trial_index >= config.trials)
        throw ArgumentError("trial indices out of range");
    const auto start = std::chrono::steady_clock::now();

    TrialResult t;
    t.size_index = size_index;
    t.trial_index = trial_index;
    t.size = config.sizes[size_index];
    t.seed = derive_seed(config.innovation.master_seed, {size_index, trial_index});

    InnovationSpec spec = config.innovation;
    spec.master_seed = t.seed;
    const std::size_t rows = t.size.rows, cols = t.size.cols;
    const Field2D w = synthesize_noise(spec, config.ma, rows, cols);
    const Field2D y = compose(config.truth, w);
    const auto opts = config.lse_options();
    const std::size_t p = config.true_order();
    const auto& truth = config.truth.components();
    const double min_sep = min_freq_sep_for(rows, cols);

    std::optional<std::vector<SinusoidParams>> order_p_estimate;
    if (config.checks.selection) {
        try {
            auto sel = select_order(y, config.q_max, config.resolve_xi(), opts);
            if (p < config.q_max && sel.estimates[p]) order_p_estimate = sel.estimates[p]->params.components();
            for (std::size_t k = 0; k < sel.q_max; ++k)
                if (sel.failed[k]) t.errors.push_back("order " + std::to_string(k) + ": " + sel.errors[k]);
            sel.estimates.clear();
            t.selection = std::move(sel);
            rescore(t, t.selection->xi, p);
        } catch (const Error& e) {
            t.errors.push_back(std::string("selection: ") + e.what());
        }
    }

    auto estimate_at_p = [&]() -> std::optional<std::vector<SinusoidParams>> {
        if (order_p_estimate) return order_p_estimate;
        try {
            order_p_estimate = lse_estimate(y, p, opts).params.components();
        } catch (const Error& e) {
            t.errors.push_back(std::string("order P estimate: ") + e.what());
        }
        return order_p_estimate;
    };

    if (config.checks.selection || config.checks.over_est) {
        if (auto est = estimate_at_p()) {
            t.params_at_p = est;
            detail::errors_against(truth, *est, t.freq_errors_at_p, t.amp_errors_at_p);
        }
    }

    for (auto k : config.checks.under_est_orders) {
        UnderEstimate u;
        u.order = k;
        try {
            u.components = lse_estimate(y, k, opts).params.components();
            detail::errors_against(std::span(truth).first(k), u.components, u.freq_errors, u.amp_errors);
        } catch (const Error& e) {
            u.failed = true;
            t.errors.push_back("under_est " + std::to_string(k) + ": " + e.what());
        }
        t.under.push_back(std::move(u));
    }

    if (config.checks.over_est) {
        OverEstimate o;
        try {
            const auto head = estimate_at_p();
            if (!head) throw RankDeficiencyError("no order-P estimate");
            const auto full = lse_estimate(y, p + 1, opts).params.components();
            const auto idx = detail::match_components(truth, full);
            std::vector<bool> used(full.size(), false);
            for (auto i : idx) used[i] = true;
            const auto extra_it = std::ranges::find(used, false);
            o.extra = full[static_cast<std::size_t>(extra_it - used.begin())];

            std::vector<SinusoidParams> head_of_full;
            for (auto i : idx) head_of_full.push_back(full[i]);
            const auto hidx = detail::match_components(*head, head_of_full);
            for (std::size_t i = 0; i < hidx.size(); ++i)
                o.head_deviation = std::max(o.head_deviation, freq_distance((*head)[i].omega, (*head)[i].upsilon,
                                                                            head_of_full[hidx[i]].omega,
                                                                            head_of_full[hidx[i]].upsilon));

            std::vector<Frequency> excl;
            for (const auto& c : truth) excl.push_back({c.omega, c.upsilon});
            const auto pg = periodogram(w, config.pad_factor);
            const auto peaks = top_peaks(pg, 1, excl, min_sep);
            if (peaks.empty()) throw RankDeficiencyError("noise periodogram has no admissible peak");
            o.noise_argmax = peaks.front();
            // distance in padded bins, mirror aware
            const auto bins = [&](double w2, double v2) {
                return std::max(angle_distance(o.extra.omega, w2) / pg.omega_step(),
                                angle_distance(o.extra.upsilon, v2) / pg.upsilon_step());
            };
            o.extra_bins = std::min(bins(o.noise_argmax.omega, o.noise_argmax.upsilon),
                                    bins(-o.noise_argmax.omega, -o.noise_argmax.upsilon));
            o.rho2_ratio = o.extra.rho * o.extra.rho /
                           (2.0 / static_cast<double>(rows * cols) * o.noise_argmax.value);
        } catch (const Error& e) {
            o.failed = true;
            t.errors.push_back(std::string("over_est: ") + e.what());
        }
        t.over = o;
    }

    if (config.checks.sup_decay) t.sup_stat = sup_statistic(w, config.pad_factor);

    t.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return t;
}

/// Ordered (metric, value) rows for one lattice size.
struct SizeAggregate {
    std::size_t size_index = 0;
    LatticeSize size;
    std::vector<std::pair<std::string, double>> metrics;

    double get(const std::string& name) const {
        for (const auto& [k, v] : metrics)
            if (k == name) return v;
        throw ArgumentError("no aggregate metric '" + name + "'");
    }
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::ranges::sort(v);
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double rms(const std::vector<double>& v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
}

inline double fraction(std::size_t hits, std::size_t total) {
    return total ? static_cast<double>(hits) / static_cast<double>(total) : std::numeric_limits<double>::quiet_NaN();
}

} // namespace detail

/// Theoretical limit of the order-k loss: sigma^2 sum a^2 + sum_{i > k} rho_i^2 / 2.
inline double loss_limit(const ExperimentConfig& c, std::size_t k) {
    double s = c.ma.noise_variance();
    for (std::size_t i = k; i < c.truth.size(); ++i) s += 0.5 * c.truth[i].rho * c.truth[i].rho;
    return s;
}

/// Tolerance for the under-estimation hit rate: two unpadded bins.
inline double under_est_tolerance(LatticeSize s) { return two_pi * 2.0 / static_cast<double>(std::max(s.rows, s.cols)); }

inline std::vector<SizeAggregate> aggregate(const ExperimentConfig& c, std::vector<TrialResult> trials) {
    std::ranges::sort(trials, [](const TrialResult& a, const TrialResult& b) {
        return std::pair(a.size_index, a.trial_index) < std::pair(b.size_index, b.trial_index);
    });
    const std::size_t p = c.true_order();
    std::vector<SizeAggregate> out;
    for (std::size_t si = 0; si < c.sizes.size(); ++si) {
        SizeAggregate agg;
        agg.size_index = si;
        agg.size = c.sizes[si];
        auto& m = agg.metrics;
        std::vector<const TrialResult*> ts;
        for (const auto& t : trials)
            if (t.size_index == si) ts.push_back(&t);
        m.emplace_back("trials", static_cast<double>(ts.size()));

        if (c.checks.selection) {
            std::vector<std::size_t> hist(c.q_max, 0);
            std::size_t scored = 0, decreasing = 0, above = 0, with_failure = 0;
            std::vector<std::vector<double>> losses(c.q_max);
            for (const auto* t : ts) {
                if (!t->selection) continue;
                ++scored;
                ++hist[t->selection->selected];
                decreasing += t->chi_decreasing_to_p;
                above += t->chi_min_above_p;
                bool any_failed = false;
                for (std::size_t k = 0; k < c.q_max; ++k) {
                    if (t->selection->failed[k]) any_failed = true;
                    else losses[k].push_back(t->selection->losses[k]);
                }
                with_failure += any_failed;
            }
            for (std::size_t k = 0; k < c.q_max; ++k)
                m.emplace_back("selected_rate_k" + std::to_string(k), detail::fraction(hist[k], scored));
            m.emplace_back("correct_order_rate", p < c.q_max ? detail::fraction(hist[p], scored) : 0.0);
            m.emplace_back("chi_decreasing_to_p_rate", detail::fraction(decreasing, scored));
            m.emplace_back("chi_min_above_p_rate", detail::fraction(above, scored));
            m.emplace_back("trials_with_failed_order", static_cast<double>(with_failure));
            if (c.checks.loss_limits) {
                for (std::size_t k = 0; k < c.q_max; ++k) {
                    const double med = detail::median(losses[k]);
                    const double lim = loss_limit(c, k);
                    m.emplace_back("median_loss_k" + std::to_string(k), med);
                    m.emplace_back("loss_limit_k" + std::to_string(k), lim);
                    m.emplace_back("loss_rel_error_k" + std::to_string(k), std::abs(med - lim) / lim);
                }
            }
        }

        if (c.checks.selection || c.checks.over_est) {
            std::vector<double> fe, ae;
            for (const auto* t : ts) {
                fe.insert(fe.end(), t->freq_errors_at_p.begin(), t->freq_errors_at_p.end());
                ae.insert(ae.end(), t->amp_errors_at_p.begin(), t->amp_errors_at_p.end());
            }
            m.emplace_back("freq_rmse_at_p", detail::rms(fe));
            m.emplace_back("amp_rmse_at_p", detail::rms(ae));
        }

        for (std::size_t ui = 0; ui < c.checks.under_est_orders.size(); ++ui) {
            const auto k = c.checks.under_est_orders[ui];
            const double tol = under_est_tolerance(agg.size);
            std::vector<double> fe, ae;
            std::size_t hits = 0;
            for (const auto* t : ts) {
                const auto& u = t->under[ui];
                if (u.failed || u.freq_errors.size() < k) continue;
                fe.insert(fe.end(), u.freq_errors.begin(), u.freq_errors.end());
                ae.insert(ae.end(), u.amp_errors.begin(), u.amp_errors.end());
                hits += std::ranges::all_of(u.freq_errors, [&](double e) { return e <= tol; });
            }
            const std::string sfx = "_k" + std::to_string(k);
            m.emplace_back("under_hit_rate" + sfx, detail::fraction(hits, ts.size()));
            m.emplace_back("under_freq_rmse" + sfx, detail::rms(fe));
            m.emplace_back("under_amp_rmse" + sfx, detail::rms(ae));
        }

        if (c.checks.over_est) {
            std::size_t freq_hits = 0, rho_hits = 0;
            std::vector<double> bins, ratio, head;
            for (const auto* t : ts) {
                if (!t->over || t->over->failed) continue;
                freq_hits += t->over->extra_bins <= 1.0;
                rho_hits += std::abs(t->over->rho2_ratio - 1.0) <= 0.15;
                bins.push_back(t->over->extra_bins);
                ratio.push_back(t->over->rho2_ratio);
                head.push_back(t->over->head_deviation);
            }
            m.emplace_back("over_extra_within_bin_rate", detail::fraction(freq_hits, ts.size()));
            m.emplace_back("over_rho2_within_15pct_rate", detail::fraction(rho_hits, ts.size()));
            m.emplace_back("over_median_extra_bins", detail::median(bins));
            m.emplace_back("over_median_rho2_ratio", detail::median(ratio));
            m.emplace_back("over_median_head_deviation", detail::median(head));
        }

        if (c.checks.sup_decay) {
            std::vector<double> s;
            for (const auto* t : ts)
                if (t->sup_stat) s.push_back(*t->sup_stat);
            m.emplace_back("median_sup_statistic", detail::median(s));
        }
        out.push_back(std::move(agg));
    }
    return out;
}

/// Long-format aggregate CSV: size_index,rows,cols,metric,value.
inline std::string aggregate_csv(const std::vector<SizeAggregate>& aggs) {
    std::string out = "size_index,rows,cols,metric,value\n";
    for (const auto& a : aggs)
        for (const auto& [name, v] : a.metrics)
            out += std::to_string(a.size_index) + "," + std::to_string(a.size.rows) + "," +
                   std::to_string(a.size.cols) + "," + name + "," + format_double(v) + "\n";
    return out;
}

/// Per-trial CSV. Columns depend only on the config; contents depend only on
/// the config, so repeated runs produce identical bytes.
inline std::string trials_csv(const ExperimentConfig& c, std::vector<TrialResult> trials) {
    std::ranges::sort(trials, [](const TrialResult& a, const TrialResult& b) {
        return std::pair(a.size_index, a.trial_index) < std::pair(b.size_index, b.trial_index);
    });
    std::string out = "size_index,rows,cols,trial,seed";
    if (c.checks.selection) {
        out += ",selected,chi_decreasing_to_p,chi_min_above_p";
        for (std::size_t k = 0; k < c.q_max; ++k) out += ",loss_k" + std::to_string(k);
        for (std::size_t k = 0; k < c.q_max; ++k) out += ",chi_k" + std::to_string(k);
    }
    if (c.checks.selection || c.checks.over_est) out += ",max_freq_error_at_p,max_abs_amp_error_at_p";
    for (auto k : c.checks.under_est_orders) out += ",under_max_freq_error_k" + std::to_string(k);
    if (c.checks.over_est) out += ",over_extra_bins,over_rho2_ratio,over_head_deviation";
    if (c.checks.sup_decay) out += ",sup_statistic";
    out += ",errors\n";

    const double nan = std::numeric_limits<double>::quiet_NaN();
    auto maxabs = [&](const std::vector<double>& v) {
        if (v.empty()) return nan;
        double r = 0.0;
        for (double x : v) r = std::max(r, std::abs(x));
        return r;
    };
    for (const auto& t : trials) {
        out += std::to_string(t.size_index) + "," + std::to_string(t.size.rows) + "," + std::to_string(t.size.cols) +
               "," + std::to_string(t.trial_index) + "," + std::to_string(t.seed);
        if (c.checks.selection) {
            if (t.selection) {
                out += "," + std::to_string(t.selection->selected) + "," + (t.chi_decreasing_to_p ? "1" : "0") + "," +
                       (t.chi_min_above_p ? "1" : "0");
                for (double v : t.selection->losses) out += "," + format_double(v);
                for (double v : t.selection->chi) out += "," + format_double(v);
            } else {
                out += ",,,";
                for (std::size_t k = 0; k < 2 * c.q_max; ++k) out += ",";
            }
        }
        if (c.checks.selection || c.checks.over_est)
            out += "," + format_double(maxabs(t.freq_errors_at_p)) + "," + format_double(maxabs(t.amp_errors_at_p));
        for (const auto& u : t.under) out += "," + format_double(u.failed ? nan : maxabs(u.freq_errors));
        if (c.checks.over_est) {
            const bool ok = t.over && !t.over->failed;
            out += "," + format_double(ok ? t.over->extra_bins : nan) + "," +
                   format_double(ok ? t.over->rho2_ratio : nan) + "," +
                   format_double(ok ? t.over->head_deviation : nan);
        }
        if (c.checks.sup_decay) out += "," + format_double(t.sup_stat.value_or(nan));
        out += "," + std::to_string(t.errors.size()) + "\n";
    }
    return out;
}

/// Per-trial wall time, kept apart from trials.csv so that file stays reproducible.
inline std::string timing_csv(std::vector<TrialResult> trials) {
    std::ranges::sort(trials, [](const TrialResult& a, const TrialResult& b) {
        return std::pair(a.size_index, a.trial_index) < std::pair(b.size_index, b.trial_index);
    });
    std::string out = "size_index,trial,wall_seconds\n";
    for (const auto& t : trials)
        out += std::to_string(t.size_index) + "," + std::to_string(t.trial_index) + "," +
               format_double(t.wall_seconds) + "\n";
    return out;
}

struct ExperimentSummary {
    std::vector<TrialResult> trials; ///< sorted by (size_index, trial_index)
    std::vector<SizeAggregate> aggregates;
};

/// Runs every (size, trial) cell on `threads` workers and, when output_dir is
/// set, writes trials.csv, aggregate.csv, timing.csv and manifest.json there. The output
/// directory is checked before any computation.
inline ExperimentSummary run_experiment(const ExperimentConfig& config, std::size_t threads = 1) {
    config.validate();
    const auto& dir = config.output_dir;
    if (!dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        const auto probe = dir / ".write_probe";
        std::ofstream os(probe);
        if (ec || !os) throw IoError("output directory " + dir.string() + " is not writable");
        os.close();
        std::filesystem::remove(probe, ec);
    }

    std::vector<std::pair<std::size_t, std::size_t>> cells;
    for (std::size_t s = 0; s < config.sizes.size(); ++s)
        for (std::size_t t = 0; t < config.trials; ++t) cells.emplace_back(s, t);

    std::vector<TrialResult> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::mutex error_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        for (std::size_t i = next++; i < cells.size(); i = next++) {
            try {
                results[i] = run_trial(config, cells[i].first, cells[i].second);
            } catch (...) {
                std::scoped_lock lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t i = 1; i < std::max<std::size_t>(threads, 1); ++i) pool.emplace_back(worker);
        worker();
    }
    if (first_error) std::rethrow_exception(first_error);

    ExperimentSummary summary;
    summary.aggregates = aggregate(config, results);
    summary.trials = std::move(results); // already in (size_index, trial_index) order

    if (!dir.empty()) {
        save_text(dir / "trials.csv", trials_csv(config, summary.trials));
        save_text(dir / "aggregate.csv", aggregate_csv(summary.aggregates));
        save_text(dir / "timing.csv", timing_csv(summary.trials));
        char hash[17];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(config)));
        const json manifest = {{"config", to_json(config)},
                               {"config_hash", hash},
                               {"xi", config.resolve_xi()},
                               {"files", {"trials.csv", "aggregate.csv", "timing.csv"}}};
        save_text(dir / "manifest.json", manifest.dump(2) + "\n");
    }
    return summary;
}

} // namespace mixspec2d
