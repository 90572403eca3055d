// mixspec2d command-line interface.
//
//   mixspec2d synth       --config cfg.json --out-dir DIR [--seed S] [--rows N --cols M] [--csv]
//   mixspec2d periodogram --input y.grid --out-dir DIR [--pad 4] [--peaks 5]
//   mixspec2d estimate    --input y.grid --order K [--pad 4] [--out-dir DIR]
//   mixspec2d select      --input y.grid --qmax Q --xi <value|auto> [--ma ma.json] [--margin 0.01] [--out-dir DIR]
//   mixspec2d experiment  --config cfg.json [--seed S] [--out-dir DIR] [--threads T]
//
// Exit codes: 0 success, 1 numerical failure, 2 usage or config error, 3 I/O error.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "mixspec2d/mixspec2d.hpp"

namespace fs = std::filesystem;
using namespace mixspec2d;

namespace {

constexpr int exit_numeric = 1;
constexpr int exit_config = 2;
constexpr int exit_io = 3;

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

void emit(const std::optional<fs::path>& dir, const std::string& file, const std::string& text) {
    if (!dir) {
        std::cout << text;
        return;
    }
    ensure_dir(*dir);
    save_text(*dir / file, text);
}

struct SynthArgs {
    std::string config;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::size_t rows = 0;
    std::size_t cols = 0;
    bool csv = false;
};

void run_synth(const SynthArgs& a) {
    auto cfg = load_config(a.config);
    InnovationSpec spec = cfg.innovation;
    if (a.seed) spec.master_seed = *a.seed;
    const std::size_t rows = a.rows ? a.rows : cfg.sizes.front().rows;
    const std::size_t cols = a.cols ? a.cols : cfg.sizes.front().cols;
    const Field2D w = synthesize_noise(spec, cfg.ma, rows, cols);
    const Field2D y = compose(cfg.truth, w);
    ensure_dir(a.out_dir);
    const fs::path dir = a.out_dir;
    write_grid(dir / "y.grid", y);
    write_grid(dir / "w.grid", w);
    if (a.csv) {
        write_grid_csv(dir / "y.csv", y);
        write_grid_csv(dir / "w.csv", w);
    }
    std::cout << "wrote " << rows << "x" << cols << " field to " << (dir / "y.grid").string() << "\n";
}

struct PeriodogramArgs {
    std::string input;
    std::string out_dir;
    std::size_t pad = default_pad_factor;
    std::size_t peaks = 5;
};

void run_periodogram(const PeriodogramArgs& a) {
    const Field2D y = read_field(a.input);
    const auto pg = periodogram(y, a.pad);
    const auto peaks = top_peaks(pg, a.peaks, {}, min_freq_sep_for(y.rows(), y.cols()));
    ensure_dir(a.out_dir);
    const fs::path dir = a.out_dir;
    write_grid(dir / "periodogram.grid", pg.as_field());
    std::string csv = "rank,omega,upsilon,value\n";
    for (std::size_t i = 0; i < peaks.size(); ++i)
        csv += std::to_string(i + 1) + "," + format_double(peaks[i].omega) + "," + format_double(peaks[i].upsilon) +
               "," + format_double(peaks[i].value) + "\n";
    save_text(dir / "peaks.csv", csv);
    std::cout << csv;
}

struct EstimateArgs {
    std::string input;
    std::size_t order = 1;
    std::size_t pad = default_pad_factor;
    std::optional<std::string> out_dir;
};

void run_estimate(const EstimateArgs& a) {
    const Field2D y = read_field(a.input);
    LseOptions opts;
    opts.pad_factor = a.pad;
    const auto r = lse_estimate(y, a.order, opts);
    std::optional<fs::path> dir;
    if (a.out_dir) dir = *a.out_dir;
    emit(dir, "estimate.json", to_json(r).dump(2) + "\n");
}

struct SelectArgs {
    std::string input;
    std::size_t qmax = default_q_max;
    std::string xi;
    std::optional<std::string> ma;
    double margin = default_xi_margin;
    std::size_t pad = default_pad_factor;
    std::optional<std::string> out_dir;
};

void run_select(const SelectArgs& a) {
    double xi = 0.0;
    if (a.xi == "auto") {
        if (!a.ma) throw ConfigError("--xi auto needs --ma <coefficients.json>; the penalty depends on the noise");
        xi = xi_threshold(ma_from_json(load_json(*a.ma)), a.margin);
    } else {
        try {
            std::size_t used = 0;
            xi = std::stod(a.xi, &used);
            if (used != a.xi.size()) throw std::invalid_argument(a.xi);
        } catch (const std::exception&) {
            throw ConfigError("--xi must be a number or 'auto', got '" + a.xi + "'");
        }
        if (!(xi > 0.0)) throw ConfigError("--xi must be positive");
    }
    const Field2D y = read_field(a.input);
    LseOptions opts;
    opts.pad_factor = a.pad;
    const auto r = select_order(y, a.qmax, xi, opts);
    if (a.out_dir) {
        emit(fs::path(*a.out_dir), "selection.json", to_json(r).dump(2) + "\n");
        emit(fs::path(*a.out_dir), "selection.csv", selection_csv(r));
    } else {
        std::cout << to_json(r).dump(2) << "\n";
    }
    std::cerr << "selected order " << r.selected << " (xi = " << format_double(xi) << ")\n";
}

struct ExperimentArgs {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::size_t threads = 1;
};

void run_experiment_cmd(const ExperimentArgs& a) {
    auto cfg = load_config(a.config);
    if (a.seed) cfg.innovation.master_seed = *a.seed;
    if (a.out_dir) cfg.output_dir = *a.out_dir;
    if (cfg.output_dir.empty()) cfg.output_dir = "mixspec2d_out";
    const auto summary = run_experiment(cfg, a.threads);
    std::cout << aggregate_csv(summary.aggregates);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"2-D sinusoids in colored noise: synthesis, estimation and order selection"};
    app.require_subcommand(1);

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "synthesize an observation field and its noise");
    s->add_option("--config", synth.config, "experiment config (truth, ma, innovation, sizes)")->required();
    s->add_option("--out-dir", synth.out_dir, "output directory")->required();
    s->add_option("--seed", synth.seed, "innovation master seed override");
    s->add_option("--rows", synth.rows, "rows (default: first configured size)");
    s->add_option("--cols", synth.cols, "columns (default: first configured size)");
    s->add_flag("--csv", synth.csv, "also write CSV grids");

    PeriodogramArgs pga;
    auto* p = app.add_subcommand("periodogram", "scaled periodogram and its top peaks");
    p->add_option("--input", pga.input, "grid file")->required();
    p->add_option("--out-dir", pga.out_dir, "output directory")->required();
    p->add_option("--pad", pga.pad, "zero-padding factor")->check(CLI::PositiveNumber);
    p->add_option("--peaks", pga.peaks, "number of peaks")->check(CLI::PositiveNumber);

    EstimateArgs est;
    auto* e = app.add_subcommand("estimate", "least-squares estimate at a given order");
    e->add_option("--input", est.input, "grid file")->required();
    e->add_option("--order", est.order, "assumed number of sinusoids")->required();
    e->add_option("--pad", est.pad, "zero-padding factor")->check(CLI::PositiveNumber);
    e->add_option("--out-dir", est.out_dir, "output directory (default: stdout)");

    SelectArgs sel;
    auto* o = app.add_subcommand("select", "select the number of sinusoids");
    o->add_option("--input", sel.input, "grid file")->required();
    o->add_option("--qmax", sel.qmax, "candidate orders 0..Q-1")->check(CLI::PositiveNumber);
    o->add_option("--xi", sel.xi, "penalty weight, or 'auto' with --ma")->required();
    o->add_option("--ma", sel.ma, "MA coefficients JSON for --xi auto");
    o->add_option("--margin", sel.margin, "relative margin above the threshold for --xi auto");
    o->add_option("--pad", sel.pad, "zero-padding factor")->check(CLI::PositiveNumber);
    o->add_option("--out-dir", sel.out_dir, "output directory (default: stdout)");

    ExperimentArgs exp;
    auto* x = app.add_subcommand("experiment", "Monte Carlo experiment");
    x->add_option("--config", exp.config, "experiment config")->required();
    x->add_option("--seed", exp.seed, "master seed override");
    x->add_option("--out-dir", exp.out_dir, "output directory override");
    x->add_option("--threads", exp.threads, "worker threads")->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return exit_config;
    }

    try {
        if (*s) run_synth(synth);
        else if (*p) run_periodogram(pga);
        else if (*e) run_estimate(est);
        else if (*o) run_select(sel);
        else if (*x) run_experiment_cmd(exp);
    } catch (const IoError& ex) {
        std::cerr << "I/O error: " << ex.what() << "\n";
        return exit_io;
    } catch (const ConfigError& ex) {
        std::cerr << "config error: " << ex.what() << "\n";
        return exit_config;
    } catch (const ArgumentError& ex) {
        std::cerr << "argument error: " << ex.what() << "\n";
        return exit_config;
    } catch (const InvalidModelError& ex) {
        std::cerr << "invalid model: " << ex.what() << "\n";
        return exit_config;
    } catch (const Error& ex) {
        std::cerr << "error: " << ex.what() << "\n";
        return exit_numeric;
    }
    return EXIT_SUCCESS;
}
