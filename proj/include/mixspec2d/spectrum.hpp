#pragma once

// Scaled 2-D periodogram I(w, v) = (2/NM) |sum y(n,m) e^{-j(nw + mv)}|^2 on a
// zero-padded Fourier grid, conjugate-pair aware peak picking, and the
// sup statistic sup |(1/NM) sum y e^{j(wn + vm)}|.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <memory>
#include <mutex>
#include <span>
#include <vector>

#include <fftw3.h>

#include "mixspec2d/model.hpp"

namespace mixspec2d {

inline constexpr std::size_t default_pad_factor = 4;

namespace detail {

// The FFTW planner is not thread-safe; execution of distinct plans is.
inline std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

struct FftwFree {
    void operator()(void* p) const noexcept { fftw_free(p); }
};

// Full complex spectrum X[a,b] = sum_{n,m} x(n,m) e^{-2pi j (a n / R + b m / C)}
// of a real R x C array, returned row-major.
inline std::vector<std::complex<double>> real_dft2(std::span<const double> input, std::size_t rows,
                                                   std::size_t cols) {
    const std::size_t half = cols / 2 + 1;
    std::unique_ptr<double, FftwFree> in(fftw_alloc_real(rows * cols));
    std::unique_ptr<fftw_complex, FftwFree> out(fftw_alloc_complex(rows * half));
    fftw_plan plan;
    {
        std::scoped_lock lock(fftw_planner_mutex());
        plan = fftw_plan_dft_r2c_2d(static_cast<int>(rows), static_cast<int>(cols), in.get(), out.get(),
                                    FFTW_ESTIMATE);
    }
    std::copy(input.begin(), input.end(), in.get());
    fftw_execute(plan);
    {
        std::scoped_lock lock(fftw_planner_mutex());
        fftw_destroy_plan(plan);
    }

    std::vector<std::complex<double>> full(rows * cols);
    const fftw_complex* o = out.get();
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = 0; b < half; ++b)
            full[a * cols + b] = {o[a * half + b][0], o[a * half + b][1]};
        const std::size_t ma = (rows - a) % rows;
        for (std::size_t b = half; b < cols; ++b) {
            const std::size_t mb = cols - b;
            full[a * cols + b] = std::conj(std::complex<double>{o[ma * half + mb][0], o[ma * half + mb][1]});
        }
    }
    return full;
}

} // namespace detail

/// Scaled periodogram on a (pN) x (pM) grid with w_a = 2 pi a / (pN) and
/// v_b = 2 pi b / (pM).
class Periodogram {
public:
    Periodogram(std::vector<double> grid, std::size_t pad_factor, std::size_t src_rows, std::size_t src_cols)
        : grid_(std::move(grid)), pad_(pad_factor), src_rows_(src_rows), src_cols_(src_cols) {
        if (grid_.size() != rows() * cols()) throw ArgumentError("periodogram grid size mismatch");
    }

    std::size_t pad_factor() const noexcept { return pad_; }
    std::size_t src_rows() const noexcept { return src_rows_; }
    std::size_t src_cols() const noexcept { return src_cols_; }
    std::size_t rows() const noexcept { return pad_ * src_rows_; }
    std::size_t cols() const noexcept { return pad_ * src_cols_; }

    double operator()(std::size_t a, std::size_t b) const { return grid_[a * cols() + b]; }
    std::span<const double> values() const noexcept { return grid_; }

    double omega(std::size_t a) const { return two_pi * static_cast<double>(a) / static_cast<double>(rows()); }
    double upsilon(std::size_t b) const { return two_pi * static_cast<double>(b) / static_cast<double>(cols()); }

    /// Padded bin widths along each axis.
    double omega_step() const { return two_pi / static_cast<double>(rows()); }
    double upsilon_step() const { return two_pi / static_cast<double>(cols()); }

    double max_value() const { return *std::ranges::max_element(grid_); }

    /// The periodogram as a field (for writing with the grid-file helpers).
    Field2D as_field() const { return Field2D(rows(), cols(), grid_); }

private:
    std::vector<double> grid_;
    std::size_t pad_;
    std::size_t src_rows_;
    std::size_t src_cols_;
};

/// Periodogram via a zero-padded real FFT. Field values are indexed locally
/// (the first stored element is n = m = 0).
inline Periodogram periodogram(const Field2D& field, std::size_t pad_factor = default_pad_factor) {
    if (pad_factor < 1) throw ArgumentError("pad factor must be >= 1");
    const std::size_t n = field.rows();
    const std::size_t m = field.cols();
    const std::size_t pr = pad_factor * n;
    const std::size_t pc = pad_factor * m;
    std::vector<double> padded(pr * pc, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) padded[i * pc + j] = field(i, j);

    const auto spectrum = detail::real_dft2(padded, pr, pc);
    const double scale = 2.0 / static_cast<double>(n * m);
    std::vector<double> grid(pr * pc);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = scale * std::norm(spectrum[i]);
    return Periodogram(std::move(grid), pad_factor, n, m);
}

struct Frequency {
    double omega = 0.0;
    double upsilon = 0.0;
};

/// The same quantity as periodogram(), by the literal double sum at arbitrary frequencies.
inline std::vector<double> direct_dft_periodogram(const Field2D& field, std::span<const Frequency> freqs) {
    const double scale = 2.0 / static_cast<double>(field.size());
    std::vector<double> out;
    out.reserve(freqs.size());
    for (const auto& f : freqs) {
        std::complex<double> acc{0.0, 0.0};
        for (std::size_t n = 0; n < field.rows(); ++n)
            for (std::size_t m = 0; m < field.cols(); ++m)
                acc += field(n, m) * std::polar(1.0, -(f.omega * static_cast<double>(n) +
                                                       f.upsilon * static_cast<double>(m)));
        out.push_back(scale * std::norm(acc));
    }
    return out;
}

struct Peak {
    double omega = 0.0;
    double upsilon = 0.0;
    double value = 0.0;
    std::size_t bin_row = 0;
    std::size_t bin_col = 0;
};

/// Frequencies admitted by peak picking and refinement: each coordinate at
/// least one unpadded bin away from 0 (mod 2pi). This removes the DC
/// neighbourhood and the two axis bands where a coordinate leaves (0, 2pi).
struct FrequencyBox {
    double omega_margin = 0.0;
    double upsilon_margin = 0.0;

    static FrequencyBox for_field(std::size_t rows, std::size_t cols) {
        return {two_pi / static_cast<double>(rows), two_pi / static_cast<double>(cols)};
    }

    bool contains(double omega, double upsilon) const {
        // small slack so that grid frequencies exactly on the margin are admitted
        constexpr double eps = 1e-12;
        return omega >= omega_margin - eps && omega <= two_pi - omega_margin + eps &&
               upsilon >= upsilon_margin - eps && upsilon <= two_pi - upsilon_margin + eps;
    }

    double clamp_omega(double w) const { return std::clamp(w, omega_margin, two_pi - omega_margin); }
    double clamp_upsilon(double v) const { return std::clamp(v, upsilon_margin, two_pi - upsilon_margin); }
};

/// Up to `count` local-maximum bins in strictly descending value order.
/// Bins at roundoff level (below 1e-13 of the maximum) are ignored.
/// Bins outside the admissible box are skipped, each conjugate pair yields one
/// representative (omega < pi, ties by upsilon <= pi), and bins within
/// excl_radius (max-metric, mirror aware) of an exclusion or of an already
/// returned peak are suppressed. Returns fewer peaks when fewer exist.
inline std::vector<Peak> top_peaks(const Periodogram& pg, std::size_t count, std::span<const Frequency> exclusions,
                                   double excl_radius) {
    if (count < 1) throw ArgumentError("peak count must be >= 1");
    const std::size_t rows = pg.rows();
    const std::size_t cols = pg.cols();
    const auto box = FrequencyBox::for_field(pg.src_rows(), pg.src_cols());
    // bins at transform roundoff relative to the largest one count as empty
    const double floor = 1e-13 * pg.max_value();

    std::vector<Peak> candidates;
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = 0; b < cols; ++b) {
            const double v = pg(a, b);
            if (!(v > floor)) continue;
            const double w = pg.omega(a);
            const double u = pg.upsilon(b);
            if (!is_representative(w, u) || !box.contains(w, u)) continue;
            bool is_max = true;
            for (int da = -1; da <= 1 && is_max; ++da)
                for (int db = -1; db <= 1; ++db) {
                    if (da == 0 && db == 0) continue;
                    const std::size_t na = static_cast<std::size_t>(static_cast<long>(a + rows) + da) % rows;
                    const std::size_t nb = static_cast<std::size_t>(static_cast<long>(b + cols) + db) % cols;
                    if (pg(na, nb) > v) {
                        is_max = false;
                        break;
                    }
                }
            if (is_max) candidates.push_back({w, u, v, a, b});
        }
    }
    std::ranges::sort(candidates, [](const Peak& x, const Peak& y) {
        if (x.value != y.value) return x.value > y.value;
        if (x.bin_row != y.bin_row) return x.bin_row < y.bin_row;
        return x.bin_col < y.bin_col;
    });

    std::vector<Peak> out;
    for (const auto& c : candidates) {
        if (out.size() >= count) break;
        auto near = [&](double w, double u) { return freq_distance(c.omega, c.upsilon, w, u) <= excl_radius; };
        if (std::ranges::any_of(exclusions, [&](const Frequency& f) { return near(f.omega, f.upsilon); })) continue;
        if (std::ranges::any_of(out, [&](const Peak& p) { return near(p.omega, p.upsilon); })) continue;
        if (!out.empty() && !(c.value < out.back().value)) continue;
        out.push_back(c);
    }
    return out;
}

/// Sum U_l of the values of the given peaks.
inline double peak_sum(std::span<const Peak> peaks) {
    double s = 0.0;
    for (const auto& p : peaks) s += p.value;
    return s;
}

/// sup over the padded grid (DC included) of |(1/NM) sum field e^{j(wn + vm)}|,
/// i.e. sqrt(max I / (2 NM)).
inline double sup_statistic(const Field2D& field, std::size_t pad_factor = default_pad_factor) {
    const auto pg = periodogram(field, pad_factor);
    return std::sqrt(pg.max_value() / (2.0 * static_cast<double>(field.size())));
}

} // namespace mixspec2d
