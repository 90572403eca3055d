#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "mixspec2d/experiments.hpp"
#include "test_util.hpp"

using namespace mixspec2d;
namespace fs = std::filesystem;

namespace {

const fs::path config_dir = MIXSPEC2D_CONFIG_DIR;

json small_doc() { return load_json(config_dir / "cli_small.json"); }

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), {}};
}

fs::path scratch(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("mixspec2d_exp_" + name);
    fs::remove_all(p);
    return p;
}

} // namespace

TEST(Config, ShippedConfigsLoad) {
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(config_dir)) {
        if (e.path().extension() != ".json" || e.path().filename() == "ma_default.json") continue;
        EXPECT_NO_THROW(load_config(e.path())) << e.path();
        ++count;
    }
    EXPECT_GE(count, 6u);
    EXPECT_NO_THROW(ma_from_json(load_json(config_dir / "ma_default.json")));
}

TEST(Config, TargetSnrSetsVariance) {
    const auto c = config_from_json(small_doc());
    EXPECT_NEAR(c.innovation.sigma2, 0.13793103448275862, 1e-15);
    EXPECT_DOUBLE_EQ(c.ma.sigma2(), c.innovation.sigma2);
    EXPECT_NEAR(component_snr_db(2.0, c.ma), 10.0, 1e-12);
    EXPECT_EQ(c.true_order(), 2u);
    EXPECT_EQ(c.innovation.distribution, Distribution::Laplace);
    EXPECT_TRUE(c.checks.selection && c.checks.over_est && c.checks.sup_decay && c.checks.loss_limits);
    ASSERT_EQ(c.checks.under_est_orders.size(), 1u);
    EXPECT_EQ(c.checks.under_est_orders[0], 1u);
}

TEST(Config, XiResolution) {
    auto doc = small_doc();
    const double a = 4.41 / 1.45;
    EXPECT_NEAR(config_from_json(doc).resolve_xi(), 8 * a * 1.01, 1e-12);
    doc["xi"]["declare"] = "nshp";
    EXPECT_NEAR(config_from_json(doc).resolve_xi(), 14 * a * 1.01, 1e-12);
    doc["xi"] = {{"mode", "fixed"}, {"value", 3.5}};
    EXPECT_DOUBLE_EQ(config_from_json(doc).resolve_xi(), 3.5);
}

TEST(Config, Errors) {
    auto expect_config_error = [](json doc, const char* what) {
        EXPECT_THROW(config_from_json(doc), ConfigError) << what;
    };
    auto d = small_doc();
    d["trials"] = 0;
    expect_config_error(d, "zero trials");
    d = small_doc();
    d["sizes"] = json::array();
    expect_config_error(d, "no sizes");
    d = small_doc();
    d["sizes"] = {{8, 32}};
    expect_config_error(d, "small lattice");
    d = small_doc();
    d["checks"] = {"bogus"};
    expect_config_error(d, "unknown check");
    d = small_doc();
    d["checks"] = {"under_est:2"};
    expect_config_error(d, "under_est order not below P");
    d = small_doc();
    d["checks"] = {"loss_limits"};
    expect_config_error(d, "loss_limits without selection");
    d = small_doc();
    d["xi"] = {{"mode", "guess"}};
    expect_config_error(d, "xi mode");
    d = small_doc();
    d["xi"] = {{"mode", "fixed"}, {"value", -1.0}};
    expect_config_error(d, "negative xi");
    d = small_doc();
    d["truth"]["components"] = json::array();
    d["checks"] = json::array();
    expect_config_error(d, "target snr without truth");
    d = small_doc();
    d.erase("sizes");
    expect_config_error(d, "missing sizes");
    d = small_doc();
    d["trials"] = "many";
    expect_config_error(d, "wrong type");
}

TEST(Config, HashIgnoresOutputDirAndTracksSeed) {
    auto c = config_from_json(small_doc());
    const auto h = config_hash(c);
    c.output_dir = "/somewhere/else";
    EXPECT_EQ(config_hash(c), h);
    c.innovation.master_seed += 1;
    EXPECT_NE(config_hash(c), h);
    // the JSON form reloads to the same config
    EXPECT_EQ(config_hash(config_from_json(to_json(c))), config_hash(c));
}

TEST(LossLimit, Values) {
    const auto c = config_from_json(small_doc());
    const double noise = c.ma.noise_variance();
    EXPECT_NEAR(loss_limit(c, 0), noise + 2.0 + 0.5, 1e-15);
    EXPECT_NEAR(loss_limit(c, 1), noise + 0.5, 1e-15);
    EXPECT_NEAR(loss_limit(c, 2), noise, 1e-15);
    EXPECT_NEAR(loss_limit(c, 3), noise, 1e-15);
}

TEST(Rescore, Flags) {
    TrialResult t;
    SelectionResult s;
    s.q_max = 4;
    s.nm = 1024;
    s.losses = {3.0, 1.0, 0.2, 0.199};
    s.failed.assign(4, false);
    t.selection = s;
    rescore(t, 8.0, 2);
    EXPECT_EQ(t.selection->selected, 2u);
    EXPECT_TRUE(t.chi_decreasing_to_p);
    EXPECT_TRUE(t.chi_min_above_p);
    rescore(t, 1e-6, 2);
    EXPECT_EQ(t.selection->selected, 3u);
    EXPECT_FALSE(t.chi_min_above_p);
    t.selection->failed[1] = true;
    rescore(t, 8.0, 2);
    EXPECT_FALSE(t.chi_decreasing_to_p);
}

TEST(RunTrial, Deterministic) {
    const auto c = config_from_json(small_doc());
    const auto a = run_trial(c, 0, 1);
    const auto b = run_trial(c, 0, 1);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.selection->losses, b.selection->losses);
    EXPECT_EQ(trials_csv(c, {a}), trials_csv(c, {b}));
    const auto other = run_trial(c, 0, 2);
    EXPECT_NE(other.seed, a.seed);
    EXPECT_THROW(run_trial(c, 1, 0), ArgumentError);
    EXPECT_THROW(run_trial(c, 0, 3), ArgumentError);
}

TEST(RunTrial, ChecksPopulated) {
    const auto c = config_from_json(small_doc());
    const auto t = run_trial(c, 0, 0);
    ASSERT_TRUE(t.selection.has_value());
    EXPECT_EQ(t.selection->losses.size(), c.q_max);
    EXPECT_TRUE(t.selection->estimates.empty());
    ASSERT_TRUE(t.params_at_p.has_value());
    EXPECT_EQ(t.params_at_p->size(), 2u);
    EXPECT_EQ(t.freq_errors_at_p.size(), 2u);
    ASSERT_EQ(t.under.size(), 1u);
    EXPECT_EQ(t.under[0].components.size(), 1u);
    ASSERT_TRUE(t.over.has_value());
    EXPECT_FALSE(t.over->failed);
    EXPECT_GT(t.over->rho2_ratio, 0.0);
    ASSERT_TRUE(t.sup_stat.has_value());
    EXPECT_GT(*t.sup_stat, 0.0);
}

TEST(Aggregate, PermutationInvariant) {
    const auto c = config_from_json(small_doc());
    std::vector<TrialResult> ts;
    for (std::size_t i = 0; i < c.trials; ++i) ts.push_back(run_trial(c, 0, i));
    const auto ref = aggregate_csv(aggregate(c, ts));
    const auto ref_trials = trials_csv(c, ts);
    std::mt19937 gen(1);
    for (int rep = 0; rep < 3; ++rep) {
        std::ranges::shuffle(ts, gen);
        EXPECT_EQ(aggregate_csv(aggregate(c, ts)), ref);
        EXPECT_EQ(trials_csv(c, ts), ref_trials);
    }
    const auto agg = aggregate(c, ts);
    EXPECT_DOUBLE_EQ(agg[0].get("trials"), 3.0);
    EXPECT_THROW(agg[0].get("no_such_metric"), ArgumentError);
}

TEST(RunExperiment, ByteIdenticalAcrossRunsAndThreads) {
    auto c = config_from_json(small_doc());
    const auto d1 = scratch("run1"), d2 = scratch("run2");
    c.output_dir = d1;
    run_experiment(c, 1);
    c.output_dir = d2;
    run_experiment(c, 3);
    for (const char* f : {"trials.csv", "aggregate.csv"}) {
        const auto a = slurp(d1 / f);
        EXPECT_FALSE(a.empty()) << f;
        EXPECT_EQ(a, slurp(d2 / f)) << f;
    }
    EXPECT_TRUE(fs::exists(d1 / "timing.csv"));
    const auto manifest = load_json(d1 / "manifest.json");
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(c)));
    EXPECT_EQ(manifest["config_hash"], hash);
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST(RunExperiment, UnwritableOutputDirFailsFirst) {
    const auto base = scratch("blocked");
    fs::create_directories(base);
    save_text(base / "file", "not a directory");
    auto c = config_from_json(small_doc());
    c.output_dir = base / "file" / "out";
    c.trials = 1000000; // would take far too long if anything ran first
    EXPECT_THROW(run_experiment(c, 1), IoError);
    fs::remove_all(base);
}

TEST(RunExperiment, SummaryWithoutOutputDir) {
    auto c = config_from_json(small_doc());
    c.trials = 2;
    const auto s = run_experiment(c, 2);
    ASSERT_EQ(s.trials.size(), 2u);
    EXPECT_EQ(s.trials[0].trial_index, 0u);
    EXPECT_EQ(s.trials[1].trial_index, 1u);
    ASSERT_EQ(s.aggregates.size(), 1u);
    EXPECT_DOUBLE_EQ(s.aggregates[0].get("trials"), 2.0);
}
