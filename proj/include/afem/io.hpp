#pragma once

#include <afem/adapt.hpp>
#include <afem/boundary.hpp>
#include <afem/errors.hpp>
#include <afem/estimator.hpp>
#include <afem/fem.hpp>
#include <afem/mesh.hpp>
#include <afem/objective.hpp>

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <utility>
#include <vector>

namespace afem {

// All text output goes through to_chars/from_chars: '.' decimal regardless of locale.

/// Shortest round-trip representation.
inline std::string format_double(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string_view trim(std::string_view s)
{
    constexpr std::string_view ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

inline double parse_double(std::string_view s)
{
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError("not a number: '" + std::string(s) + "'");
    }
    return v;
}

template <class Int>
Int parse_integer(std::string_view s)
{
    s = trim(s);
    Int v{};
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
        throw DataError("not an integer: '" + std::string(s) + "'");
    }
    return v;
}

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

inline std::ifstream open_input(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read " + path.string());
    return in;
}

inline void finish(std::ofstream& out, const std::filesystem::path& path)
{
    out.flush();
    if (!out) throw DataError("error while writing " + path.string());
}

} // namespace detail

struct NamedValues
{
    std::string name;
    std::span<const double> values;
};

/**
 * Legacy ASCII VTK unstructured grid. Points carry z = 0; vertices and
 * triangles appear in creation order. The per-triangle generation is always
 * written as cell data; further point and cell scalars are optional.
 */
inline void write_vtk(const std::filesystem::path& path, const TriMesh& mesh,
                      const std::vector<NamedValues>& point_data = {}, const std::vector<NamedValues>& cell_data = {})
{
    const auto nv = static_cast<std::size_t>(mesh.num_vertices());
    const auto nt = static_cast<std::size_t>(mesh.num_triangles());
    for (const auto& f : point_data) {
        if (f.values.size() != nv) throw InvalidArgument("point field '" + f.name + "' has the wrong length");
    }
    for (const auto& f : cell_data) {
        if (f.values.size() != nt) throw InvalidArgument("cell field '" + f.name + "' has the wrong length");
    }

    auto out = detail::open_output(path);
    out << "# vtk DataFile Version 3.0\nischemia_afem mesh\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    out << "POINTS " << nv << " double\n";
    for (const auto& p : mesh.vertices()) out << format_double(p.x) << ' ' << format_double(p.y) << " 0\n";
    out << "CELLS " << nt << ' ' << 4 * nt << '\n';
    for (const auto& t : mesh.triangles()) out << "3 " << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << '\n';
    out << "CELL_TYPES " << nt << '\n';
    for (std::size_t t = 0; t < nt; ++t) out << "5\n";

    out << "CELL_DATA " << nt << "\nSCALARS generation int 1\nLOOKUP_TABLE default\n";
    for (int g : mesh.generation()) out << g << '\n';
    for (const auto& f : cell_data) {
        out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
        for (double v : f.values) out << format_double(v) << '\n';
    }
    if (!point_data.empty()) {
        out << "POINT_DATA " << nv << '\n';
        for (const auto& f : point_data) {
            out << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
            for (double v : f.values) out << format_double(v) << '\n';
        }
    }
    detail::finish(out, path);
}

inline void write_eta_csv(const std::filesystem::path& path, const EstimatorTable& table)
{
    auto out = detail::open_output(path);
    out << "element,eta1_sq,eta2_sq,eta3_sq\n";
    for (std::size_t t = 0; t < table.eta1_sq.size(); ++t) {
        out << t << ',' << format_double(table.eta1_sq[t]) << ',' << format_double(table.eta2_sq[t]) << ','
            << format_double(table.eta3_sq[t]) << '\n';
    }
    detail::finish(out, path);
}

// Wall times live in timings.csv so that history.csv is reproducible byte for byte.
inline constexpr std::string_view kHistoryHeader =
    "mode,k,nodes,triangles,objective,eta1_sq,eta2_sq,eta3_sq,eta_sum,marked,dominant,optimizer_iterations,"
    "stationarity,converged";

inline std::string history_line(const std::string& mode, const HistoryRow& r)
{
    std::string s = mode;
    s += ',' + std::to_string(r.k) + ',' + std::to_string(r.nodes) + ',' + std::to_string(r.triangles);
    for (double v : {r.objective, r.eta1_sq, r.eta2_sq, r.eta3_sq, r.eta_sum()}) s += ',' + format_double(v);
    s += ',' + std::to_string(r.marked) + ',' + std::to_string(r.dominant + 1) + ',' +
         std::to_string(r.optimizer_iterations) + ',' + format_double(r.stationarity) + ',' +
         (r.converged ? "1" : "0");
    return s;
}

inline void write_history(const std::filesystem::path& path, const RunHistory& history)
{
    auto out = detail::open_output(path);
    out << kHistoryHeader << '\n';
    for (const auto& r : history.rows) out << history_line(history.mode, r) << '\n';
    detail::finish(out, path);
}

inline RunHistory read_history(const std::filesystem::path& path)
{
    auto in = detail::open_input(path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kHistoryHeader) throw DataError(path.string() + " has an unexpected header");
    RunHistory h;
    h.mode.clear();
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv(line);
        if (f.size() != 14) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 14 columns");
        try {
            if (h.mode.empty()) h.mode = std::string(f[0]);
            else if (h.mode != f[0]) throw DataError("mixed modes");
            HistoryRow r;
            r.k = parse_integer<int>(f[1]);
            r.nodes = parse_integer<Index>(f[2]);
            r.triangles = parse_integer<Index>(f[3]);
            r.objective = parse_double(f[4]);
            r.eta1_sq = parse_double(f[5]);
            r.eta2_sq = parse_double(f[6]);
            r.eta3_sq = parse_double(f[7]);
            r.marked = parse_integer<Index>(f[9]);
            r.dominant = parse_integer<int>(f[10]) - 1;
            r.optimizer_iterations = parse_integer<int>(f[11]);
            r.stationarity = parse_double(f[12]);
            r.converged = parse_integer<int>(f[13]) != 0;
            h.rows.push_back(r);
        } catch (const DataError& e) {
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    if (h.mode.empty()) h.mode = "adaptive";
    return h;
}

inline void write_timings(const std::filesystem::path& path, const RunHistory& history)
{
    auto out = detail::open_output(path);
    out << "k,nodes,wall_time_s\n";
    for (const auto& r : history.rows) out << r.k << ',' << r.nodes << ',' << format_double(r.wall_time) << '\n';
    detail::finish(out, path);
}

/// Appends one level's optimizer iterations; the header is written with level 0.
inline void append_trace(const std::filesystem::path& path, int level, std::span<const OptimizerTraceRow> trace)
{
    std::ofstream out(path, std::ios::binary | (level == 0 ? std::ios::trunc : std::ios::app));
    if (!out) throw DataError("cannot write " + path.string());
    if (level == 0) out << "level,iteration,objective,stationarity,step\n";
    for (const auto& r : trace) {
        out << level << ',' << r.iteration << ',' << format_double(r.objective) << ','
            << format_double(r.stationarity) << ',' << format_double(r.step) << '\n';
    }
    detail::finish(out, path);
}

/// Metadata stored in the comment header of a boundary data file.
struct BoundaryFileHeader
{
    std::uint64_t seed = 0;
    double noise_pct = 0.0;
    double sigma = 1e-4;
    int fine_n = 0;
    std::vector<std::string> sources;
};

/**
 * Boundary data as CSV with columns source_id, arclength, value, clean_value.
 * Lines starting with '#' hold `key=value` metadata; per-source noise records
 * are stored as `noise.<id>=sigma_noise,delta`.
 */
inline void write_boundary_data(const std::filesystem::path& path, const BoundaryFileHeader& header,
                                std::span<const BoundaryData> data)
{
    if (header.sources.size() != data.size()) throw InvalidArgument("one source name per data set is required");
    auto out = detail::open_output(path);
    out << "# seed=" << header.seed << '\n';
    out << "# noise_pct=" << format_double(header.noise_pct) << '\n';
    out << "# sigma=" << format_double(header.sigma) << '\n';
    out << "# fine_n=" << header.fine_n << '\n';
    for (std::size_t i = 0; i < data.size(); ++i) {
        out << "# source." << i << '=' << header.sources[i] << '\n';
        out << "# noise." << i << '=' << format_double(data[i].noise().sigma_noise) << ','
            << format_double(data[i].noise().delta) << '\n';
    }
    out << "source_id,arclength,value,clean_value\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto& d = data[i];
        for (std::size_t k = 0; k < d.size(); ++k) {
            out << i << ',' << format_double(d.arclengths()[k]) << ',' << format_double(d.values()[k]) << ','
                << format_double(d.clean_values()[k]) << '\n';
        }
    }
    detail::finish(out, path);
}

struct BoundaryFile
{
    BoundaryFileHeader header;
    std::vector<BoundaryData> data;
};

inline BoundaryFile read_boundary_data(const std::filesystem::path& path)
{
    auto in = detail::open_input(path);
    BoundaryFile file;
    struct Columns
    {
        std::vector<double> s, v, c;
    };
    std::vector<Columns> cols;
    std::vector<std::pair<double, double>> noise;
    std::string line;
    int lineno = 0;
    bool seen_header = false;
    auto fail = [&](const std::string& what) {
        return DataError(path.string() + ":" + std::to_string(lineno) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        try {
            if (line.front() == '#') {
                std::string_view kv(line);
                kv.remove_prefix(1);
                while (!kv.empty() && kv.front() == ' ') kv.remove_prefix(1);
                const auto eq = kv.find('=');
                if (eq == std::string_view::npos) continue;
                const auto key = kv.substr(0, eq);
                const auto val = kv.substr(eq + 1);
                if (key == "seed") file.header.seed = parse_integer<std::uint64_t>(val);
                else if (key == "noise_pct") file.header.noise_pct = parse_double(val);
                else if (key == "sigma") file.header.sigma = parse_double(val);
                else if (key == "fine_n") file.header.fine_n = parse_integer<int>(val);
                else if (key.starts_with("source.")) {
                    const auto id = parse_integer<std::size_t>(key.substr(7));
                    if (file.header.sources.size() <= id) file.header.sources.resize(id + 1);
                    file.header.sources[id] = std::string(val);
                } else if (key.starts_with("noise.")) {
                    const auto id = parse_integer<std::size_t>(key.substr(6));
                    const auto f = split_csv(val);
                    if (f.size() != 2) throw DataError("noise record needs two values");
                    if (noise.size() <= id) noise.resize(id + 1);
                    noise[id] = {parse_double(f[0]), parse_double(f[1])};
                }
                continue;
            }
            if (!seen_header) {
                if (line != "source_id,arclength,value,clean_value") throw DataError("unexpected column header");
                seen_header = true;
                continue;
            }
            const auto f = split_csv(line);
            if (f.size() != 4) throw DataError("expected 4 columns");
            const auto id = parse_integer<std::size_t>(f[0]);
            if (id > cols.size()) throw DataError("source ids must be contiguous from 0");
            if (id == cols.size()) cols.emplace_back();
            cols[id].s.push_back(parse_double(f[1]));
            cols[id].v.push_back(parse_double(f[2]));
            cols[id].c.push_back(parse_double(f[3]));
        } catch (const DataError& e) {
            throw fail(e.what());
        }
    }
    if (cols.empty()) throw DataError(path.string() + ": no boundary samples");
    if (file.header.sources.size() != cols.size()) {
        throw DataError(path.string() + ": source names do not match the data columns");
    }
    noise.resize(cols.size());
    for (std::size_t i = 0; i < cols.size(); ++i) {
        NoiseRecord rec{file.header.noise_pct, noise[i].first, file.header.seed, noise[i].second};
        try {
            file.data.emplace_back(std::move(cols[i].s), std::move(cols[i].v), std::move(cols[i].c), rec);
        } catch (const InvalidArgument& e) {
            throw DataError(path.string() + ": source " + std::to_string(i) + ": " + e.what());
        }
    }
    return file;
}

/// Whole-file contents (for checksums and comparisons).
inline std::string read_file(const std::filesystem::path& path)
{
    auto in = detail::open_input(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace afem
