#pragma once

#include <afem/adapt.hpp>
#include <afem/data.hpp>
#include <afem/errors.hpp>
#include <afem/estimator.hpp>
#include <afem/io.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace afem {

/// Reconstruction mode of cmd_reconstruct.
enum class RunMode { adaptive, uniform };

/**
 * Fully resolved run configuration. A preset fills in the shape, alpha,
 * epsilon and sources; any key given explicitly overrides the preset value.
 */
struct Config
{
    // [problem]
    std::string preset = "circle";
    std::string shape;                 // canonical shape spec, see parse_shape
    std::vector<std::string> sources;
    double alpha = 0.0;
    double epsilon = 0.0;
    double sigma = 1e-4;
    double d0 = 0.1;
    int initial_n = 26;

    // [optimizer]
    double opt_tolerance = 1e-6;
    int opt_max_iterations = 200;
    int opt_memory = 10;
    double armijo = 1e-4;
    int max_backtracks = 30;
    double newton_tolerance = 1e-10;
    int newton_max_iterations = 50;

    // [loop]
    RunMode mode = RunMode::adaptive;
    double theta = 0.65;
    double tol = 1e-6;
    int max_iterations = 6;
    MarkingStrategy marking = MarkingStrategy::dorfler;
    CombineMode combine = CombineMode::max;
    int uniform_levels = 3;
    UniformStrategy uniform_strategy = UniformStrategy::regrid;
    int grid_step = 15;

    // [data]
    int fine_n = 401;
    double noise_pct = 0.0;
    std::uint64_t seed = 0;
    std::string data_file = "data.csv";

    // [output]
    std::string output_dir = "run";
    bool write_vtk = true;

    friend bool operator==(const Config&, const Config&) = default;
};

// ---- shape specs ----------------------------------------------------------
//   none
//   circle cx cy r
//   ellipse cx cy rx ry [angle]
// with several parts separated by ';' forming a union.

inline InclusionShape parse_shape(const std::string& spec)
{
    std::vector<Ellipse> parts;
    std::vector<std::string> kinds;
    std::stringstream all(spec);
    std::string item;
    while (std::getline(all, item, ';')) {
        std::istringstream words{std::string(trim(item))};
        std::string kind;
        if (!(words >> kind)) continue;
        if (kind == "none") continue;
        std::vector<double> nums;
        std::string w;
        while (words >> w) nums.push_back(parse_double(w));
        if (kind == "circle" && nums.size() == 3) {
            parts.push_back({{nums[0], nums[1]}, nums[2], nums[2], 0.0});
        } else if (kind == "ellipse" && (nums.size() == 4 || nums.size() == 5)) {
            parts.push_back({{nums[0], nums[1]}, nums[2], nums[3], nums.size() == 5 ? nums[4] : 0.0});
        } else {
            throw DataError("bad shape part '" + std::string(trim(item)) +
                            "' (expected 'circle cx cy r' or 'ellipse cx cy rx ry [angle]')");
        }
        kinds.push_back(kind);
    }
    if (parts.size() == 1) {
        const Ellipse& e = parts.front();
        return kinds.front() == "circle" ? InclusionShape::circle(e.center, e.rx)
                                         : InclusionShape::ellipse(e.center, e.rx, e.ry, e.angle);
    }
    return InclusionShape::union_of(std::move(parts));
}

inline std::string format_shape(const InclusionShape& shape)
{
    if (shape.parts.empty()) return "none";
    std::string out;
    for (const auto& e : shape.parts) {
        if (!out.empty()) out += "; ";
        const bool round = e.rx == e.ry && e.angle == 0.0 && shape.kind != InclusionShape::Kind::ellipse;
        out += round ? "circle " : "ellipse ";
        out += format_double(e.center.x) + ' ' + format_double(e.center.y) + ' ' + format_double(e.rx);
        if (!round) out += ' ' + format_double(e.ry) + ' ' + format_double(e.angle);
    }
    return out;
}

namespace detail {

inline std::string join(const std::vector<std::string>& v, const char* sep = ",")
{
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : sep) + s;
    return out;
}

inline std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    for (auto part : split_csv(s)) {
        part = trim(part);
        if (!part.empty()) out.emplace_back(part);
    }
    return out;
}

inline bool parse_bool(const std::string& s)
{
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw DataError("not a boolean: '" + s + "'");
}

template <class Enum>
Enum parse_choice(const std::string& s, const std::vector<std::pair<const char*, Enum>>& choices)
{
    std::string names;
    for (const auto& [name, value] : choices) {
        if (s == name) return value;
        names += (names.empty() ? "" : ", ") + std::string(name);
    }
    throw DataError("'" + s + "' is not one of " + names);
}

template <class Enum>
std::string choice_name(Enum v, const std::vector<std::pair<const char*, Enum>>& choices)
{
    for (const auto& [name, value] : choices) {
        if (v == value) return name;
    }
    return "?";
}

inline const std::vector<std::pair<const char*, RunMode>> kModes = {{"adaptive", RunMode::adaptive},
                                                                              {"uniform", RunMode::uniform}};
inline const std::vector<std::pair<const char*, MarkingStrategy>> kMarkings = {
    {"dorfler", MarkingStrategy::dorfler}, {"maximum", MarkingStrategy::maximum}};
inline const std::vector<std::pair<const char*, CombineMode>> kCombines = {{"max", CombineMode::max},
                                                                                    {"sum", CombineMode::sum}};
inline const std::vector<std::pair<const char*, UniformStrategy>> kUniform = {
    {"regrid", UniformStrategy::regrid}, {"bisect", UniformStrategy::bisect}};

/// One INI key: how to read it into a Config and how to print it back.
struct KeySpec
{
    const char* section;
    const char* key;
    std::function<void(Config&, const std::string&)> read;
    std::function<std::string(const Config&)> write;
};

template <class T, class Member>
KeySpec number_key(const char* section, const char* key, Member member)
{
    return {section, key,
            [member](Config& c, const std::string& v) {
                if constexpr (std::is_floating_point_v<T>) c.*member = parse_double(v);
                else c.*member = parse_integer<T>(v);
            },
            [member](const Config& c) {
                if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
                else return std::to_string(c.*member);
            }};
}

template <class Enum>
KeySpec choice_key(const char* section, const char* key, Enum Config::*member,
                   const std::vector<std::pair<const char*, Enum>>& choices)
{
    return {section, key, [member, &choices](Config& c, const std::string& v) { c.*member = parse_choice(v, choices); },
            [member, &choices](const Config& c) { return choice_name(c.*member, choices); }};
}

inline const std::vector<KeySpec>& key_specs()
{
    static const std::vector<KeySpec> specs = {
        {"problem", "preset", [](Config& c, const std::string& v) { c.preset = v; },
         [](const Config& c) { return c.preset; }},
        {"problem", "shape", [](Config& c, const std::string& v) { c.shape = format_shape(parse_shape(v)); },
         [](const Config& c) { return c.shape; }},
        {"problem", "sources",
         [](Config& c, const std::string& v) {
             c.sources = split_list(v);
             for (const auto& s : c.sources) named_source(s);
         },
         [](const Config& c) { return join(c.sources); }},
        number_key<double>("problem", "alpha", &Config::alpha),
        number_key<double>("problem", "epsilon", &Config::epsilon),
        number_key<double>("problem", "sigma", &Config::sigma),
        number_key<double>("problem", "d0", &Config::d0),
        number_key<int>("problem", "initial_n", &Config::initial_n),

        number_key<double>("optimizer", "tolerance", &Config::opt_tolerance),
        number_key<int>("optimizer", "max_iterations", &Config::opt_max_iterations),
        number_key<int>("optimizer", "memory", &Config::opt_memory),
        number_key<double>("optimizer", "armijo", &Config::armijo),
        number_key<int>("optimizer", "max_backtracks", &Config::max_backtracks),
        number_key<double>("optimizer", "newton_tolerance", &Config::newton_tolerance),
        number_key<int>("optimizer", "newton_max_iterations", &Config::newton_max_iterations),

        choice_key("loop", "mode", &Config::mode, kModes),
        number_key<double>("loop", "theta", &Config::theta),
        number_key<double>("loop", "tol", &Config::tol),
        number_key<int>("loop", "max_iterations", &Config::max_iterations),
        choice_key("loop", "marking", &Config::marking, kMarkings),
        choice_key("loop", "combine", &Config::combine, kCombines),
        number_key<int>("loop", "uniform_levels", &Config::uniform_levels),
        choice_key("loop", "uniform_strategy", &Config::uniform_strategy, kUniform),
        number_key<int>("loop", "grid_step", &Config::grid_step),

        number_key<int>("data", "fine_n", &Config::fine_n),
        number_key<double>("data", "noise_pct", &Config::noise_pct),
        number_key<std::uint64_t>("data", "seed", &Config::seed),
        {"data", "file", [](Config& c, const std::string& v) { c.data_file = v; },
         [](const Config& c) { return c.data_file; }},

        {"output", "dir", [](Config& c, const std::string& v) { c.output_dir = v; },
         [](const Config& c) { return c.output_dir; }},
        {"output", "vtk", [](Config& c, const std::string& v) { c.write_vtk = parse_bool(v); },
         [](const Config& c) { return std::string(c.write_vtk ? "true" : "false"); }},
    };
    return specs;
}

inline void apply_preset(Config& c)
{
    Preset p;
    try {
        p = find_preset(c.preset);
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("problem.preset: ") + e.what());
    }
    c.shape = format_shape(p.shape);
    c.sources = p.sources;
    c.alpha = p.alpha;
    c.epsilon = p.epsilon;
}

} // namespace detail

/// Range checks on the resolved values; errors name the offending key.
inline void validate(const Config& c)
{
    auto require = [](bool ok, const char* key, const char* what) {
        if (!ok) throw DataError(std::string(key) + ": " + what);
    };
    require(!c.sources.empty(), "problem.sources", "at least one source is required");
    require(c.alpha > 0.0, "problem.alpha", "must be positive");
    require(c.epsilon > 0.0, "problem.epsilon", "must be positive");
    require(c.sigma > 0.0 && c.sigma <= 1.0, "problem.sigma", "must lie in (0, 1]");
    require(c.d0 >= 0.0, "problem.d0", "must be nonnegative");
    require(c.initial_n >= 2, "problem.initial_n", "must be at least 2");
    require(c.opt_tolerance >= 0.0, "optimizer.tolerance", "must be nonnegative");
    require(c.opt_max_iterations >= 0, "optimizer.max_iterations", "must be nonnegative");
    require(c.opt_memory >= 0, "optimizer.memory", "must be nonnegative");
    require(c.armijo > 0.0 && c.armijo < 1.0, "optimizer.armijo", "must lie in (0, 1)");
    require(c.max_backtracks >= 1, "optimizer.max_backtracks", "must be at least 1");
    require(c.newton_tolerance > 0.0, "optimizer.newton_tolerance", "must be positive");
    require(c.newton_max_iterations >= 1, "optimizer.newton_max_iterations", "must be at least 1");
    require(c.theta > 0.0 && c.theta <= 1.0, "loop.theta", "must lie in (0, 1]");
    require(c.tol >= 0.0, "loop.tol", "must be nonnegative");
    require(c.max_iterations >= 1, "loop.max_iterations", "must be at least 1");
    require(c.uniform_levels >= 0, "loop.uniform_levels", "must be nonnegative");
    require(c.grid_step >= 1, "loop.grid_step", "must be at least 1");
    require(c.fine_n >= 2, "data.fine_n", "must be at least 2");
    require(c.noise_pct >= 0.0, "data.noise_pct", "must be nonnegative");
    require(!c.data_file.empty(), "data.file", "must not be empty");
    require(!c.output_dir.empty(), "output.dir", "must not be empty");
    try {
        parse_shape(c.shape).validate(c.d0);
    } catch (const InvalidArgument& e) {
        throw DataError(std::string("problem.shape: ") + e.what());
    }
}

/// Parses INI text. Unknown sections or keys and malformed values raise DataError naming the key path.
inline Config parse_config(const std::string& text)
{
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw DataError("config line " + std::to_string(e.line()) + ": " + e.message());
    }

    std::map<std::string, std::string> given;
    for (const auto& [section, body] : tree) {
        if (body.empty() && !body.data().empty()) throw DataError("unknown key '" + section + "' outside a section");
        for (const auto& [key, value] : body) given[section + "." + key] = value.data();
    }
    for (const auto& [path, value] : given) {
        const bool known = std::any_of(detail::key_specs().begin(), detail::key_specs().end(), [&](const auto& s) {
            return path == std::string(s.section) + "." + s.key;
        });
        if (!known) throw DataError("unknown key '" + path + "'");
    }

    Config c;
    if (auto it = given.find("problem.preset"); it != given.end()) c.preset = std::string(trim(it->second));
    detail::apply_preset(c);
    for (const auto& s : detail::key_specs()) {
        const std::string path = std::string(s.section) + "." + s.key;
        const auto it = given.find(path);
        if (it == given.end()) continue;
        try {
            s.read(c, std::string(trim(it->second)));
        } catch (const std::exception& e) {
            throw DataError(path + ": " + e.what());
        }
    }
    validate(c);
    return c;
}

inline Config load_config(const std::filesystem::path& path)
{
    std::string text;
    try {
        text = read_file(path);
    } catch (const DataError&) {
        throw DataError("cannot read config file " + path.string());
    }
    return parse_config(text);
}

/// The resolved configuration as INI text; parse_config(to_ini(c)) == c.
inline std::string to_ini(const Config& c)
{
    std::string out;
    const char* section = "";
    for (const auto& s : detail::key_specs()) {
        if (std::string(section) != s.section) {
            section = s.section;
            out += std::string(out.empty() ? "" : "\n") + "[" + section + "]\n";
        }
        out += std::string(s.key) + " = " + s.write(c) + "\n";
    }
    return out;
}

/// Resolved values as (section.key, value) pairs in canonical order.
inline std::vector<std::pair<std::string, std::string>> config_entries(const Config& c)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : detail::key_specs()) out.emplace_back(std::string(s.section) + "." + s.key, s.write(c));
    return out;
}

} // namespace afem
