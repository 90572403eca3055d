#pragma once

// File formats.
//
// Grid file (binary): 8-byte magic "MS2DGRID", N and M as uint64
// little-endian, then N*M IEEE-754 doubles little-endian, row-major.
// Grid file (CSV): N lines of M comma-separated values.
//
// JSON documents:
//   MA coefficients  {"support_kind": "nshp" | "quarter_plane", "extent_k": k,
//                     "extent_l": l, "coeffs": [[r, s, value], ...], "sigma2": s2}
//   parameter vector {"components": [[rho, omega, upsilon, phi], ...]}
//   innovation law   {"distribution": "gaussian" | "uniform" | "laplace",
//                     "sigma2": s2, "master_seed": seed}

#include <array>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "mixspec2d/estimator.hpp"
#include "mixspec2d/model.hpp"
#include "mixspec2d/selector.hpp"

namespace mixspec2d {

using json = nlohmann::json;

inline constexpr std::array<char, 8> grid_magic{'M', 'S', '2', 'D', 'G', 'R', 'I', 'D'};

namespace detail {

template <typename T>
void put_le(std::ostream& os, T value) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    std::array<char, 8> buf;
    for (int i = 0; i < 8; ++i) buf[static_cast<std::size_t>(i)] = static_cast<char>((bits >> (8 * i)) & 0xffU);
    os.write(buf.data(), 8);
}

template <typename T>
T get_le(std::istream& is) {
    static_assert(sizeof(T) == 8);
    std::array<unsigned char, 8> buf;
    if (!is.read(reinterpret_cast<char*>(buf.data()), 8)) throw IoError("truncated grid file");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[static_cast<std::size_t>(i)]) << (8 * i);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
}

inline bool has_csv_extension(const std::filesystem::path& p) { return p.extension() == ".csv"; }

} // namespace detail

/// Shortest decimal text that round-trips a double.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_grid(const std::filesystem::path& path, const Field2D& field) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os.write(grid_magic.data(), grid_magic.size());
    detail::put_le<std::uint64_t>(os, field.rows());
    detail::put_le<std::uint64_t>(os, field.cols());
    for (double v : field.values()) detail::put_le<double>(os, v);
    if (!os) throw IoError("write failed for " + path.string());
}

inline Field2D read_grid(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path.string());
    std::array<char, 8> magic;
    if (!is.read(magic.data(), magic.size()) || magic != grid_magic)
        throw IoError(path.string() + " is not a grid file (bad magic)");
    const auto rows = detail::get_le<std::uint64_t>(is);
    const auto cols = detail::get_le<std::uint64_t>(is);
    if (rows == 0 || cols == 0 || rows > (1ULL << 28) / cols) throw IoError("implausible grid dimensions");
    std::vector<double> values(rows * cols);
    for (auto& v : values) v = detail::get_le<double>(is);
    return Field2D(rows, cols, std::move(values));
}

inline void write_grid_csv(const std::filesystem::path& path, const Field2D& field) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    for (std::size_t i = 0; i < field.rows(); ++i) {
        for (std::size_t j = 0; j < field.cols(); ++j) os << (j ? "," : "") << format_double(field(i, j));
        os << '\n';
    }
    if (!os) throw IoError("write failed for " + path.string());
}

inline Field2D read_grid_csv(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::vector<double> values;
    std::size_t rows = 0, cols = 0;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t n = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                values.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw IoError("bad number '" + cell + "' in " + path.string());
            }
            ++n;
        }
        if (rows == 0) cols = n;
        else if (n != cols) throw IoError("ragged CSV grid in " + path.string());
        ++rows;
    }
    if (rows == 0) throw IoError("empty CSV grid " + path.string());
    return Field2D(rows, cols, std::move(values));
}

/// Reads a binary grid, or a CSV grid when the extension is .csv.
inline Field2D read_field(const std::filesystem::path& path) {
    return detail::has_csv_extension(path) ? read_grid_csv(path) : read_grid(path);
}

inline void write_field(const std::filesystem::path& path, const Field2D& field) {
    if (detail::has_csv_extension(path)) write_grid_csv(path, field);
    else write_grid(path, field);
}

inline json load_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

inline void save_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path.string() + " for writing");
    os << text;
    if (!os) throw IoError("write failed for " + path.string());
}

// JSON conversions. Malformed documents raise ConfigError; documents that
// parse but violate a model invariant raise InvalidModelError.

inline json to_json(const MaCoefficients& ma) {
    json coeffs = json::array();
    for (const auto& [lag, a] : ma.coeffs()) coeffs.push_back({lag.r, lag.s, a});
    return {{"support_kind", to_string(ma.kind())},
            {"extent_k", ma.extent_k()},
            {"extent_l", ma.extent_l()},
            {"coeffs", coeffs},
            {"sigma2", ma.sigma2()}};
}

inline SupportKind support_kind_from_string(const std::string& s) {
    if (s == "nshp") return SupportKind::NSHP;
    if (s == "quarter_plane") return SupportKind::QuarterPlane;
    throw ConfigError("unknown support_kind '" + s + "'");
}

inline MaCoefficients ma_from_json(const json& j) {
    try {
        std::map<Lag, double> coeffs;
        for (const auto& c : j.at("coeffs")) {
            if (!c.is_array() || c.size() != 3) throw ConfigError("each MA coefficient must be [r, s, value]");
            const Lag lag{c[0].get<int>(), c[1].get<int>()};
            if (!coeffs.emplace(lag, c[2].get<double>()).second)
                throw ConfigError("duplicate MA coefficient lag");
        }
        return MaCoefficients(support_kind_from_string(j.at("support_kind").get<std::string>()),
                              j.at("extent_k").get<int>(), j.at("extent_l").get<int>(), std::move(coeffs),
                              j.at("sigma2").get<double>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("MA coefficients: ") + e.what());
    }
}

inline json to_json(const ParamVector& p) {
    json comps = json::array();
    for (const auto& c : p) comps.push_back({c.rho, c.omega, c.upsilon, c.phi});
    return {{"components", comps}};
}

inline ParamVector params_from_json(const json& j, ParamConstraints constraints = {}) {
    try {
        std::vector<SinusoidParams> comps;
        for (const auto& c : j.at("components")) {
            if (!c.is_array() || c.size() != 4) throw ConfigError("each component must be [rho, omega, upsilon, phi]");
            comps.push_back({c[0].get<double>(), c[1].get<double>(), c[2].get<double>(), c[3].get<double>()});
        }
        return ParamVector(std::move(comps), constraints);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("parameter vector: ") + e.what());
    }
}

inline Distribution distribution_from_string(const std::string& s) {
    if (s == "gaussian") return Distribution::Gaussian;
    if (s == "uniform") return Distribution::Uniform;
    if (s == "laplace") return Distribution::Laplace;
    throw ConfigError("unknown distribution '" + s + "'");
}

inline json to_json(const InnovationSpec& s) {
    return {{"distribution", to_string(s.distribution)}, {"sigma2", s.sigma2}, {"master_seed", s.master_seed}};
}

inline InnovationSpec innovation_from_json(const json& j) {
    try {
        InnovationSpec s;
        s.distribution = distribution_from_string(j.value("distribution", std::string("gaussian")));
        s.sigma2 = j.value("sigma2", 1.0);
        s.master_seed = j.value("master_seed", std::uint64_t{0});
        s.validate();
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("innovation: ") + e.what());
    }
}

/// {order, loss, converged, iterations, components: [{rho, omega, upsilon, phi}, ...]}
inline json to_json(const LseResult& r) {
    json comps = json::array();
    for (const auto& c : r.params)
        comps.push_back({{"rho", c.rho}, {"omega", c.omega}, {"upsilon", c.upsilon}, {"phi", c.phi}});
    return {{"order", r.params.size()},
            {"loss", r.loss},
            {"converged", r.converged},
            {"iterations", r.iterations},
            {"components", comps}};
}

namespace detail {
// JSON has no NaN/inf; failed orders and the zero-loss sentinel become null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
} // namespace detail

inline json to_json(const SelectionResult& r) {
    json losses = json::array(), chi = json::array(), failed = json::array();
    for (std::size_t k = 0; k < r.q_max; ++k) {
        losses.push_back(detail::finite_or_null(r.losses[k]));
        chi.push_back(detail::finite_or_null(r.chi[k]));
        failed.push_back(static_cast<bool>(r.failed[k]));
    }
    json estimates = json::array();
    for (const auto& e : r.estimates) estimates.push_back(e ? to_json(*e) : json(nullptr));
    return {{"q_max", r.q_max}, {"xi", r.xi},         {"nm", r.nm},         {"losses", losses},
            {"chi", chi},       {"failed", failed}, {"selected", r.selected}, {"estimates", estimates}};
}

/// CSV with header k,loss,chi,failed.
inline std::string selection_csv(const SelectionResult& r) {
    std::string out = "k,loss,chi,failed\n";
    for (std::size_t k = 0; k < r.q_max; ++k)
        out += std::to_string(k) + "," + format_double(r.losses[k]) + "," + format_double(r.chi[k]) + "," +
               (r.failed[k] ? "1" : "0") + "\n";
    return out;
}

} // namespace mixspec2d
