#pragma once

#include <afem/adapt.hpp>
#include <afem/config.hpp>
#include <afem/data.hpp>
#include <afem/errors.hpp>
#include <afem/io.hpp>

#include <boost/crc.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#ifndef AFEM_VERSION
#define AFEM_VERSION "0.0.0"
#endif

namespace afem {

inline constexpr const char* kSeedEnv = "ISCHEMIA_AFEM_SEED";

struct CommandOptions
{
    int threads = 1;
    bool allow_inverse_crime = false;
    std::optional<std::string> output_dir;   // overrides output.dir
    std::optional<std::string> data_file;    // overrides data.file
    std::ostream* log = nullptr;             // progress lines, one per level
};

namespace detail {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline std::uint32_t crc32_of(const std::string& bytes)
{
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

inline std::string hex32(std::uint32_t v)
{
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

/// Config with the seed override from the environment and the command-line overrides applied.
inline Config resolve_config(const fs::path& config_path, const CommandOptions& opts, std::string& seed_origin)
{
    Config cfg = load_config(config_path);
    seed_origin = "config";
    if (const char* env = std::getenv(kSeedEnv); env != nullptr && *env != '\0') {
        try {
            cfg.seed = parse_integer<std::uint64_t>(env);
        } catch (const DataError&) {
            throw DataError(std::string(kSeedEnv) + " is not an unsigned integer: '" + env + "'");
        }
        seed_origin = kSeedEnv;
    }
    if (opts.output_dir) cfg.output_dir = *opts.output_dir;
    if (opts.data_file) cfg.data_file = *opts.data_file;
    if (opts.threads < 1) throw InvalidArgument("--threads must be at least 1");
    validate(cfg);
    return cfg;
}

inline Json config_json(const Config& cfg)
{
    Json j = Json::object();
    for (const auto& [path, value] : config_entries(cfg)) {
        const auto dot = path.find('.');
        j[path.substr(0, dot)][path.substr(dot + 1)] = value;
    }
    return j;
}

/// File inventory relative to `base`, with sizes and CRC-32 checksums.
inline Json file_inventory(const fs::path& base, const std::vector<fs::path>& files)
{
    Json out = Json::array();
    for (const auto& f : files) {
        const std::string bytes = read_file(f);
        out.push_back({{"path", fs::relative(f, base).generic_string()},
                       {"bytes", bytes.size()},
                       {"crc32", hex32(crc32_of(bytes))}});
    }
    return out;
}

inline void write_json(const fs::path& path, const Json& j)
{
    auto out = open_output(path);
    out << j.dump(2) << '\n';
    finish(out, path);
}

inline Json manifest_header(const char* command, const Config& cfg, const std::string& seed_origin, int threads)
{
    Json m;
    m["tool"] = "ischemia_afem";
    m["version"] = AFEM_VERSION;
    m["command"] = command;
    m["status"] = "ok";
    m["config"] = config_json(cfg);
    m["config_ini"] = to_ini(cfg);
    m["seeds"] = {{"data", cfg.seed}, {"origin", seed_origin}};
    m["threads"] = threads;
    return m;
}

inline void ensure_directory(const fs::path& dir)
{
    if (dir.empty()) return;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
}

inline double seconds_between(std::chrono::steady_clock::time_point a, std::chrono::steady_clock::time_point b)
{
    return std::chrono::duration<double>(b - a).count();
}

} // namespace detail

/// Location of the manifest written next to a generated data file.
inline std::filesystem::path generate_manifest_path(const std::filesystem::path& data_file)
{
    auto p = data_file;
    p.replace_extension(".manifest.json");
    return p;
}

/**
 * Synthesizes boundary data for the configured shape and sources on the
 * fine mesh, writes it to data.file and records a manifest beside it.
 */
inline std::filesystem::path cmd_generate(const std::filesystem::path& config_path, const CommandOptions& opts = {})
{
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    std::string seed_origin;
    const Config cfg = detail::resolve_config(config_path, opts, seed_origin);

    DataSpec spec;
    spec.shape = parse_shape(cfg.shape);
    for (const auto& s : cfg.sources) spec.sources.push_back(named_source(s));
    spec.sigma = cfg.sigma;
    spec.fine_n = cfg.fine_n;
    spec.noise_pct = cfg.noise_pct;
    spec.seed = cfg.seed;
    spec.d0 = cfg.d0;
    spec.newton.tolerance = cfg.newton_tolerance;
    spec.newton.max_iterations = cfg.newton_max_iterations;
    spec.threads = opts.threads;
    const auto data = make_data(spec);

    const fs::path data_path = cfg.data_file;
    detail::ensure_directory(data_path.parent_path());
    write_boundary_data(data_path, {cfg.seed, cfg.noise_pct, cfg.sigma, cfg.fine_n, cfg.sources}, data);

    const fs::path manifest_path = generate_manifest_path(data_path);
    auto m = detail::manifest_header("generate", cfg, seed_origin, opts.threads);
    detail::Json noise = detail::Json::array();
    for (std::size_t i = 0; i < data.size(); ++i) {
        noise.push_back({{"source", cfg.sources[i]},
                         {"sigma_noise", data[i].noise().sigma_noise},
                         {"delta", data[i].noise().delta}});
    }
    m["noise"] = noise;
    m["timings"] = {{"total_s", detail::seconds_between(t0, std::chrono::steady_clock::now())}};
    m["files"] = detail::file_inventory(manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path(),
                                        {data_path});
    detail::write_json(manifest_path, m);
    if (opts.log) *opts.log << "wrote " << data_path.string() << " (" << data.size() << " sources)\n";
    return data_path;
}

struct ReconstructOutcome
{
    RunHistory history;
    std::filesystem::path output_dir;
};

/**
 * Runs the adaptive loop (or the uniform baseline) on the data named in the
 * config. Artifacts are written per level while the run proceeds; on a
 * numerical failure the history so far and a manifest marked "failed" are
 * kept and the error is rethrown.
 */
inline ReconstructOutcome cmd_reconstruct(const std::filesystem::path& config_path, const CommandOptions& opts = {})
{
    namespace fs = std::filesystem;
    const auto t0 = std::chrono::steady_clock::now();
    std::string seed_origin;
    const Config cfg = detail::resolve_config(config_path, opts, seed_origin);

    const BoundaryFile file = read_boundary_data(cfg.data_file);
    if (file.header.sources != cfg.sources) {
        throw DataError("data file " + cfg.data_file + " holds sources (" + detail::join(file.header.sources) +
                        ") but the config asks for (" + detail::join(cfg.sources) + ")");
    }

    ReconstructionSetup setup;
    for (const auto& s : cfg.sources) setup.sources.push_back(named_source(s));
    setup.ydeltas = file.data;
    setup.coeffs = Coefficients{cfg.sigma};
    setup.reg = {cfg.alpha, cfg.epsilon};
    setup.d0 = cfg.d0;
    setup.optimizer.tolerance = cfg.opt_tolerance;
    setup.optimizer.max_iterations = cfg.opt_max_iterations;
    setup.optimizer.memory = cfg.opt_memory;
    setup.optimizer.armijo = cfg.armijo;
    setup.optimizer.max_backtracks = cfg.max_backtracks;
    setup.optimizer.newton.tolerance = cfg.newton_tolerance;
    setup.optimizer.newton.max_iterations = cfg.newton_max_iterations;
    setup.optimizer.threads = opts.threads;

    const TriMesh initial = build_structured(cfg.initial_n);
    check_inverse_crime(file.header.fine_n, initial, opts.allow_inverse_crime);
    if (cfg.mode == RunMode::uniform && cfg.uniform_strategy == UniformStrategy::regrid) {
        for (int k = 1; k <= cfg.uniform_levels; ++k) {
            if (cfg.initial_n + k * cfg.grid_step == file.header.fine_n && !opts.allow_inverse_crime) {
                throw InvalidArgument("uniform level " + std::to_string(k) +
                                      " equals the data mesh (inverse crime); pass --allow-inverse-crime to override");
            }
        }
    }

    const fs::path dir = cfg.output_dir;
    detail::ensure_directory(dir);
    std::vector<fs::path> files;
    auto emit = [&](const fs::path& p) {
        if (std::find(files.begin(), files.end(), p) == files.end()) files.push_back(p);
    };
    const fs::path history_path = dir / "history.csv";
    const fs::path trace_path = dir / "optimizer_trace.csv";

    const LevelObserver observer = [&](const LevelState& lvl) {
        const auto& mesh = *lvl.mesh;
        const auto& table = lvl.estimate->combined;
        const std::string k = std::to_string(lvl.k);
        if (cfg.write_vtk) {
            std::vector<double> marked(static_cast<std::size_t>(mesh.num_triangles()), 0.0);
            for (Index t : lvl.marked) marked[static_cast<std::size_t>(t)] = 1.0;
            write_vtk(dir / ("mesh_" + k + ".vtk"), mesh, {},
                      {{"eta1_sq", table.eta1_sq}, {"eta2_sq", table.eta2_sq}, {"eta3_sq", table.eta3_sq},
                       {"marked", marked}});
            std::vector<NamedValues> fields{{"u", lvl.triplet->u.values()}};
            for (std::size_t i = 0; i < lvl.triplet->states.size(); ++i) {
                fields.push_back({"y_" + cfg.sources[i], lvl.triplet->states[i].values()});
                fields.push_back({"p_" + cfg.sources[i], lvl.triplet->adjoints[i].values()});
            }
            write_vtk(dir / ("u_" + k + ".vtk"), mesh, fields);
            emit(dir / ("mesh_" + k + ".vtk"));
            emit(dir / ("u_" + k + ".vtk"));
        }
        write_eta_csv(dir / ("eta_" + k + ".csv"), table);
        emit(dir / ("eta_" + k + ".csv"));
        write_history(history_path, *lvl.history);
        emit(history_path);
        append_trace(trace_path, lvl.k, lvl.triplet->trace);
        emit(trace_path);
        if (opts.log) {
            const auto& r = lvl.history->rows.back();
            *opts.log << (lvl.history->mode == "uniform" ? "uniform" : "adaptive") << " k=" << r.k
                      << " nodes=" << r.nodes << " J=" << format_double(r.objective)
                      << " eta_sq=" << format_double(r.eta_sum()) << " marked=" << r.marked
                      << " opt_it=" << r.optimizer_iterations << (r.converged ? "" : " (not converged)") << '\n';
        }
    };

    auto finalize = [&](const RunHistory& history, const char* status, const std::string& error) {
        write_history(history_path, history);
        emit(history_path);
        write_timings(dir / "timings.csv", history);
        emit(dir / "timings.csv");
        {
            auto out = detail::open_output(dir / "config.ini");
            out << to_ini(cfg);
            detail::finish(out, dir / "config.ini");
        }
        emit(dir / "config.ini");

        auto m = detail::manifest_header("reconstruct", cfg, seed_origin, opts.threads);
        m["status"] = status;
        if (!error.empty()) m["error"] = error;
        m["seeds"]["data_file"] = file.header.seed;
        m["data_file"] = {{"path", cfg.data_file}, {"crc32", detail::hex32(detail::crc32_of(read_file(cfg.data_file)))}};
        detail::Json levels = detail::Json::array();
        for (const auto& r : history.rows) levels.push_back({{"k", r.k}, {"nodes", r.nodes}, {"wall_time_s", r.wall_time}});
        m["timings"] = {{"total_s", detail::seconds_between(t0, std::chrono::steady_clock::now())}, {"levels", levels}};
        m["files"] = detail::file_inventory(dir, files);
        detail::write_json(dir / "manifest.json", m);
    };

    try {
        RunResult result;
        if (cfg.mode == RunMode::adaptive) {
            LoopConfig loop;
            loop.theta = cfg.theta;
            loop.tol = cfg.tol;
            loop.max_iterations = cfg.max_iterations;
            loop.marking = cfg.marking;
            loop.combine = cfg.combine;
            result = run(initial, setup, loop, observer);
        } else {
            UniformConfig uni;
            uni.levels = cfg.uniform_levels;
            uni.strategy = cfg.uniform_strategy;
            uni.initial_n = cfg.initial_n;
            uni.grid_step = cfg.grid_step;
            uni.combine = cfg.combine;
            result = run_uniform(initial, setup, uni, observer);
        }
        finalize(result.history, "ok", "");
        return {std::move(result.history), dir};
    } catch (const LoopFailure& e) {
        finalize(e.history(), "failed", e.what());
        throw;
    }
}

/**
 * Merges the histories of several run directories into one long-format CSV
 * (run, mode, k, nodes, quantity, value) written to `out`.
 */
inline void cmd_report(const std::vector<std::filesystem::path>& run_dirs, std::ostream& out)
{
    if (run_dirs.empty()) throw DataError("report needs at least one run directory");
    std::vector<std::pair<std::string, RunHistory>> runs;
    for (const auto& d : run_dirs) {
        const auto h = d / "history.csv";
        if (!std::filesystem::is_regular_file(h)) throw DataError("missing history: " + h.string());
        runs.emplace_back(d.generic_string(), read_history(h));
    }
    out << "run,mode,k,nodes,quantity,value\n";
    for (const auto& [name, h] : runs) {
        for (const auto& r : h.rows) {
            const std::pair<const char*, double> q[] = {{"objective", r.objective}, {"eta1_sq", r.eta1_sq},
                                                        {"eta2_sq", r.eta2_sq},     {"eta3_sq", r.eta3_sq},
                                                        {"eta_sum", r.eta_sum()}};
            for (const auto& [what, v] : q) {
                out << name << ',' << h.mode << ',' << r.k << ',' << r.nodes << ',' << what << ','
                    << format_double(v) << '\n';
            }
        }
    }
    if (!out) throw DataError("error while writing the report");
}

} // namespace afem
