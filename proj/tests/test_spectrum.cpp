#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "mixspec2d/spectrum.hpp"
#include "mixspec2d/synth.hpp"
#include "test_util.hpp"

using namespace mixspec2d;
using mixspec2d::testing::pi;
using mixspec2d::testing::random_field;

namespace {

std::vector<Frequency> grid_freqs(const Periodogram& pg) {
    std::vector<Frequency> f;
    for (std::size_t a = 0; a < pg.rows(); ++a)
        for (std::size_t b = 0; b < pg.cols(); ++b) f.push_back({pg.omega(a), pg.upsilon(b)});
    return f;
}

// Relative error against the oracle, floored at the grid scale so bins that
// are numerically zero do not blow up the ratio.
double grid_relative_error(const Periodogram& pg, const std::vector<double>& oracle) {
    const double scale = *std::ranges::max_element(oracle);
    double worst = 0.0;
    for (std::size_t i = 0; i < oracle.size(); ++i)
        worst = std::max(worst, std::abs(pg.values()[i] - oracle[i]) / std::max(std::abs(oracle[i]), 1e-6 * scale));
    return worst;
}

double median(std::vector<double> v) {
    std::ranges::sort(v);
    const std::size_t h = v.size() / 2;
    return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

} // namespace

TEST(Periodogram, ConstantFieldIsDcOnly) {
    const std::size_t n = 6, m = 5;
    const double c = 1.7;
    Field2D f(n, m, std::vector<double>(n * m, c));
    const auto pg = periodogram(f, 1);
    EXPECT_NEAR(pg(0, 0), 2.0 * n * m * c * c, 1e-9);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < m; ++b)
            if (a || b) EXPECT_NEAR(pg(a, b), 0.0, 1e-12);
}

TEST(Periodogram, OnGridCosine) {
    const std::size_t n = 16, m = 12;
    const double rho = 1.3;
    const std::size_t a0 = 3, b0 = 5;
    const auto y = compose(ParamVector({{rho, two_pi * a0 / n, two_pi * b0 / m, 0.0}}), n, m);
    const auto pg = periodogram(y, 1);
    const double want = rho * rho * n * m / 2.0;
    EXPECT_NEAR(pg(a0, b0), want, 1e-9 * want);
    EXPECT_NEAR(pg(n - a0, m - b0), want, 1e-9 * want);
    const std::vector<Frequency> at{{two_pi * a0 / n, two_pi * b0 / m}};
    EXPECT_NEAR(direct_dft_periodogram(y, at).front(), want, 1e-9 * want);
}

TEST(Periodogram, MatchesDirectDft) {
    for (std::size_t size : {8u, 16u})
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const auto f = random_field(size, size, seed);
            for (std::size_t pad : {1u, 2u}) {
                const auto pg = periodogram(f, pad);
                EXPECT_LE(grid_relative_error(pg, direct_dft_periodogram(f, grid_freqs(pg))), 1e-9);
            }
        }
    const auto odd = random_field(7, 5, 3);
    const auto pg = periodogram(odd, 3);
    EXPECT_LE(grid_relative_error(pg, direct_dft_periodogram(odd, grid_freqs(pg))), 1e-9);
}

TEST(Periodogram, Parseval) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto f = random_field(9 + seed, 12, seed);
        const auto pg = periodogram(f, 1);
        double mean = 0.0;
        for (double v : pg.values()) mean += v;
        mean /= static_cast<double>(pg.values().size());
        EXPECT_LE(mixspec2d::testing::relative_error(mean, 2.0 * f.mean_square()), 1e-9);
    }
}

TEST(Periodogram, ConjugateSymmetricAndNonnegative) {
    const auto f = random_field(10, 14, 2);
    const auto pg = periodogram(f, 2);
    const std::size_t r = pg.rows(), c = pg.cols();
    for (std::size_t a = 0; a < r; ++a)
        for (std::size_t b = 0; b < c; ++b) {
            const double v = pg(a, b);
            EXPECT_GE(v, 0.0);
            EXPECT_NEAR(pg((r - a) % r, (c - b) % c), v, 1e-9 * std::max(v, 1.0));
        }
}

TEST(Periodogram, PaddingRefinesGrid) {
    const auto f = random_field(12, 10, 4);
    const auto p1 = periodogram(f, 1);
    const auto p2 = periodogram(f, 2);
    for (std::size_t a = 0; a < p1.rows(); ++a)
        for (std::size_t b = 0; b < p1.cols(); ++b)
            EXPECT_NEAR(p2(2 * a, 2 * b), p1(a, b), 1e-9 * std::max(p1(a, b), 1.0));
}

TEST(Periodogram, ZeroField) {
    const Field2D z(8, 8);
    const auto pg = periodogram(z, 2);
    EXPECT_EQ(pg.max_value(), 0.0);
    const std::vector<Frequency> f{{0.3, 1.2}, {2.0, 5.0}};
    for (double v : direct_dft_periodogram(z, f)) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(top_peaks(pg, 3, {}, 0.1).empty());
}

TEST(Periodogram, RejectsZeroPad) { EXPECT_THROW(periodogram(Field2D(4, 4), 0), ArgumentError); }

TEST(TopPeaks, SingleCosine) {
    const std::size_t n = 32;
    const double rho = 0.8;
    const double w = two_pi * 5 / n, v = two_pi * 27 / n;
    const auto y = compose(ParamVector({{rho, w, v, 1.0}}), n, n);
    const auto pg = periodogram(y, 1);
    const auto peaks = top_peaks(pg, 1, {}, min_freq_sep_for(n, n));
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_NEAR(freq_distance(peaks[0].omega, peaks[0].upsilon, w, v), 0.0, 1e-12);
    EXPECT_TRUE(is_representative(peaks[0].omega, peaks[0].upsilon));
    EXPECT_NEAR(peaks[0].value, rho * rho * n * n / 2.0, 1e-9 * rho * rho * n * n);
}

TEST(TopPeaks, OrderedByAmplitudeWithMirrorCollapsed) {
    const std::size_t n = 32;
    const ParamVector p({{2.0, two_pi * 5 / n, two_pi * 9 / n, 0.3}, {1.0, two_pi * 20 / n, two_pi * 4 / n, 1.1}});
    const auto pg = periodogram(compose(p, n, n), 4);
    const auto peaks = top_peaks(pg, 2, {}, min_freq_sep_for(n, n));
    ASSERT_EQ(peaks.size(), 2u);
    EXPECT_NEAR(freq_distance(peaks[0].omega, peaks[0].upsilon, p[0].omega, p[0].upsilon), 0.0, 1e-12);
    EXPECT_NEAR(freq_distance(peaks[1].omega, peaks[1].upsilon, p[1].omega, p[1].upsilon), 0.0, 1e-12);
    EXPECT_GT(peaks[0].value, peaks[1].value);
    for (const auto& pk : peaks) EXPECT_LT(pk.omega, pi + 1e-12);
    EXPECT_NEAR(peak_sum(peaks), peaks[0].value + peaks[1].value, 1e-12);
}

TEST(TopPeaks, ExclusionsSuppress) {
    const std::size_t n = 32;
    const double w = two_pi * 7 / n, v = two_pi * 3 / n;
    const auto pg = periodogram(compose(ParamVector({{1.0, w, v, 0.0}}), n, n), 1);
    const std::vector<Frequency> excl{{w, v}};
    EXPECT_TRUE(top_peaks(pg, 1, excl, min_freq_sep_for(n, n)).empty());
    const std::vector<Frequency> mirror{{two_pi - w, two_pi - v}};
    EXPECT_TRUE(top_peaks(pg, 1, mirror, min_freq_sep_for(n, n)).empty());
}

TEST(TopPeaks, StrictlyDescendingAndSeparated) {
    const auto f = random_field(32, 32, 8);
    const auto pg = periodogram(f, 4);
    const double radius = min_freq_sep_for(32, 32);
    const auto peaks = top_peaks(pg, 10, {}, radius);
    ASSERT_EQ(peaks.size(), 10u);
    const auto box = FrequencyBox::for_field(32, 32);
    for (std::size_t i = 0; i < peaks.size(); ++i) {
        EXPECT_TRUE(box.contains(peaks[i].omega, peaks[i].upsilon));
        if (i) EXPECT_LT(peaks[i].value, peaks[i - 1].value);
        for (std::size_t j = 0; j < i; ++j)
            EXPECT_GT(freq_distance(peaks[i].omega, peaks[i].upsilon, peaks[j].omega, peaks[j].upsilon), radius);
    }
}

TEST(TopPeaks, SkipsDcNeighbourhood) {
    // a strong mean plus a weak cosine: the DC bin never wins
    const std::size_t n = 16;
    Field2D y = compose(ParamVector({{0.1, two_pi * 5 / n, two_pi * 6 / n, 0.0}}), n, n);
    for (auto& v : y.values()) v += 10.0;
    const auto peaks = top_peaks(periodogram(y, 1), 2, {}, min_freq_sep_for(n, n));
    ASSERT_EQ(peaks.size(), 1u);
    EXPECT_NEAR(peaks[0].omega, two_pi * 5 / n, 1e-12);
    // padded: the DC main lobe is excluded, the cosine is still found
    Field2D z = compose(ParamVector({{1.0, two_pi * 5 / n, two_pi * 6 / n, 0.0}}), n, n);
    for (auto& v : z.values()) v += 0.5;
    const auto padded = top_peaks(periodogram(z, 4), 1, {}, min_freq_sep_for(n, n));
    ASSERT_EQ(padded.size(), 1u);
    EXPECT_NEAR(padded[0].omega, two_pi * 5 / n, 1e-12);
}

TEST(TopPeaks, RejectsZeroCount) { EXPECT_THROW(top_peaks(periodogram(Field2D(4, 4), 1), 0, {}, 0.1), ArgumentError); }

TEST(SupStatistic, Examples) {
    EXPECT_EQ(sup_statistic(Field2D(8, 8)), 0.0);
    Field2D c(8, 6, std::vector<double>(48, -0.75));
    EXPECT_NEAR(sup_statistic(c), 0.75, 1e-12);
}

TEST(SupStatistic, NondecreasingInNestedPads) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto f = random_field(12, 12, seed);
        double prev = 0.0;
        for (std::size_t pad : {1u, 2u, 4u, 8u}) {
            const double s = sup_statistic(f, pad);
            EXPECT_GE(s, prev - 1e-12);
            prev = s;
        }
    }
}

TEST(SupStatistic, WhiteNoiseMedianDecreases) {
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t n : {32u, 64u, 128u, 256u}) {
        std::vector<double> stats;
        for (std::uint64_t seed = 0; seed < 50; ++seed)
            stats.push_back(sup_statistic(gen_innovations({Distribution::Gaussian, 1.0, 1000 + seed}, n, n)));
        const double med = median(stats);
        EXPECT_LT(med, prev) << n;
        prev = med;
    }
}
