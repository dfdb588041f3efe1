#pragma once

#include <afem/boundary.hpp>
#include <afem/errors.hpp>
#include <afem/fem.hpp>
#include <afem/mesh.hpp>
#include <afem/objective.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace afem {

/// Ellipse with semi-axes (rx, ry) rotated by `angle` radians; a circle has rx == ry.
struct Ellipse
{
    Point center;
    double rx = 0.0;
    double ry = 0.0;
    double angle = 0.0;

    bool contains(Point p) const
    {
        const double c = std::cos(angle), s = std::sin(angle);
        const Point d = p - center;
        const double xl = (c * d.x + s * d.y) / rx;
        const double yl = (-s * d.x + c * d.y) / ry;
        return xl * xl + yl * yl <= 1.0;
    }

    /// Half-widths of the axis-aligned bounding box.
    Point extent() const
    {
        const double c = std::cos(angle), s = std::sin(angle);
        return {std::hypot(rx * c, ry * s), std::hypot(rx * s, ry * c)};
    }

    double area() const { return std::numbers::pi * rx * ry; }
};

/// Inclusion omega as a union of ellipses (empty union means no inclusion).
struct InclusionShape
{
    enum class Kind { circle, ellipse, union_of };

    Kind kind = Kind::union_of;
    std::vector<Ellipse> parts;

    static InclusionShape circle(Point center, double r) { return {Kind::circle, {{center, r, r, 0.0}}}; }
    static InclusionShape ellipse(Point center, double rx, double ry, double angle = 0.0)
    {
        return {Kind::ellipse, {{center, rx, ry, angle}}};
    }
    static InclusionShape union_of(std::vector<Ellipse> parts) { return {Kind::union_of, std::move(parts)}; }

    bool contains(Point p) const
    {
        return std::any_of(parts.begin(), parts.end(), [&](const Ellipse& e) { return e.contains(p); });
    }

    /// Lower bound on dist(omega, boundary) from the bounding boxes of the parts.
    double boundary_distance() const
    {
        double d = 1.0;
        for (const auto& e : parts) {
            const Point ext = e.extent();
            d = std::min({d, 1.0 - (std::abs(e.center.x) + ext.x), 1.0 - (std::abs(e.center.y) + ext.y)});
        }
        return d;
    }

    void validate(double d0) const
    {
        for (const auto& e : parts) {
            if (!(e.rx > 0.0 && e.ry > 0.0)) throw InvalidArgument("inclusion semi-axes must be positive");
        }
        if (!parts.empty() && boundary_distance() < d0) {
            throw InvalidArgument("inclusion reaches into the boundary band of width d0");
        }
    }
};

inline const char* to_string(InclusionShape::Kind k)
{
    switch (k) {
    case InclusionShape::Kind::circle: return "circle";
    case InclusionShape::Kind::ellipse: return "ellipse";
    case InclusionShape::Kind::union_of: return "union";
    }
    return "union";
}

/// Nodal indicator of omega on `mesh`.
inline NodalField rasterize(const InclusionShape& shape, const TriMesh& mesh, double d0 = 0.0)
{
    shape.validate(d0);
    NodalField u(mesh, 0.0);
    for (Index v = 0; v < mesh.num_vertices(); ++v) u[v] = shape.contains(mesh.vertex(v)) ? 1.0 : 0.0;
    return u;
}

/// Sources by name: "x1" -> f = x1, "x2" -> f = x2, "mean" -> f = (x1 + x2) / 2, or a number.
inline Source named_source(const std::string& name)
{
    if (name == "x1") return Source("x1", [](Point p) { return p.x; });
    if (name == "x2") return Source("x2", [](Point p) { return p.y; });
    if (name == "mean") return Source("mean", [](Point p) { return 0.5 * (p.x + p.y); });
    try {
        std::size_t used = 0;
        const double c = std::stod(name, &used);
        if (used == name.size()) return Source::constant(c);
    } catch (const std::exception&) {
    }
    throw InvalidArgument("unknown source '" + name + "' (expected x1, x2, mean or a number)");
}

/// One of the four shipped experiments. Shape geometries are our own choice.
struct Preset
{
    std::string name;
    InclusionShape shape;
    double alpha = 1.5e-3;
    double epsilon = 1.0 / (16.0 * std::numbers::pi);
    std::vector<std::string> sources;
};

inline std::vector<Preset> presets()
{
    const double eps16 = 1.0 / (16.0 * std::numbers::pi);
    const double eps12 = 1.0 / (12.0 * std::numbers::pi);
    return {
        {"circle", InclusionShape::circle({0.0, 0.0}, 0.3), 1.5e-3, eps16, {"x1", "x2"}},
        {"ellipse", InclusionShape::ellipse({0.0, 0.0}, 0.5, 0.3, 0.0), 1.5e-3, eps16, {"x1", "x2"}},
        {"two_circles",
         InclusionShape::union_of({{{-0.4, -0.3}, 0.3, 0.3, 0.0}, {{0.4, 0.35}, 0.3, 0.3, 0.0}}),
         1e-3,
         eps16,
         {"x1", "x2", "mean"}},
        {"four_circles",
         InclusionShape::union_of({{{-0.45, -0.45}, 0.25, 0.25, 0.0},
                                   {{0.45, -0.45}, 0.25, 0.25, 0.0},
                                   {{-0.45, 0.45}, 0.25, 0.25, 0.0},
                                   {{0.45, 0.45}, 0.25, 0.25, 0.0}}),
         2e-3,
         eps12,
         {"x1", "x2", "mean"}},
    };
}

inline std::string preset_names()
{
    std::string out;
    for (const auto& p : presets()) out += (out.empty() ? "" : ", ") + p.name;
    return out;
}

inline Preset find_preset(const std::string& name)
{
    for (auto& p : presets()) {
        if (p.name == name) return p;
    }
    throw InvalidArgument("unknown preset '" + name + "'; valid presets: " + preset_names());
}

struct DataSpec
{
    InclusionShape shape;
    std::vector<Source> sources;
    double sigma = 1e-4;
    int fine_n = 401;
    double noise_pct = 0.0;
    std::uint64_t seed = 0;
    double d0 = 0.1;
    NewtonOptions newton;
    int threads = 1;
};

namespace detail {

/// ||a - b||_{L2} of two periodic piecewise-linear traces sharing sample points.
inline double trace_distance(std::span<const double> s, std::span<const double> a, std::span<const double> b)
{
    double acc = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const std::size_t n = (k + 1) % s.size();
        const double h = (n == 0 ? s[0] + kPerimeter : s[n]) - s[k];
        const double d0 = a[k] - b[k], d1 = a[n] - b[n];
        acc += h * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    return std::sqrt(acc);
}

} // namespace detail

/**
 * Synthetic boundary data: solves the state with u = chi_omega on the fine
 * structured mesh for each source and samples the trace at the boundary
 * vertices. Noise with standard deviation noise_pct/100 * max|y*| on the
 * boundary is added independently at every sample, drawn from one
 * mt19937_64 stream seeded with `seed` (sources in order).
 */
inline std::vector<BoundaryData> make_data(const DataSpec& spec)
{
    if (spec.fine_n < 2) throw InvalidArgument("fine_n must be at least 2");
    if (!(spec.noise_pct >= 0.0)) throw InvalidArgument("noise_pct must be nonnegative");
    if (!(spec.sigma > 0.0 && spec.sigma <= 1.0)) throw InvalidArgument("sigma must lie in (0, 1]");
    if (spec.sources.empty()) throw InvalidArgument("at least one source is required");
    const TriMesh fine = build_structured(spec.fine_n);
    const FemSpace space(fine);
    const NodalField u = rasterize(spec.shape, fine, spec.d0);
    const Coefficients coeffs{spec.sigma};

    std::vector<NodalField> states(spec.sources.size());
    detail::for_each_source(spec.sources.size(), spec.threads, [&](std::size_t i) {
        states[i] = solve_state(space, u, spec.sources[i], coeffs, spec.newton);
    });

    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<BoundaryData> out;
    for (const auto& y : states) {
        const auto clean = BoundaryData::from_nodal(fine, y.values());
        std::vector<double> s(clean.arclengths().begin(), clean.arclengths().end());
        std::vector<double> exact(clean.values().begin(), clean.values().end());
        double ymax = 0.0;
        for (double v : exact) ymax = std::max(ymax, std::abs(v));
        NoiseRecord rec{spec.noise_pct, spec.noise_pct / 100.0 * ymax, spec.seed, 0.0};
        std::vector<double> noisy = exact;
        if (rec.sigma_noise > 0.0) {
            for (double& v : noisy) v += rec.sigma_noise * normal(rng);
        }
        rec.delta = detail::trace_distance(s, noisy, exact);
        out.emplace_back(std::move(s), std::move(noisy), std::move(exact), rec);
    }
    return out;
}

/// |A cap B| / |A cup B| for the supports {u >= 1/2} of two fields on one mesh,
/// measured with a per-element 4-point midpoint-refined count.
inline double jaccard(const TriMesh& mesh, const NodalField& a, const NodalField& b)
{
    if (!a.belongs_to(mesh) || !b.belongs_to(mesh)) throw InvalidArgument("fields must live on the mesh");
    static constexpr std::array<std::array<double, 3>, 4> pts = {
        {{2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0},
         {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0}}};
    double inter = 0.0, uni = 0.0;
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto al = local_values(mesh, t, a.values());
        const auto bl = local_values(mesh, t, b.values());
        const double w = mesh.area(t) / 4.0;
        for (const auto& lam : pts) {
            const bool ia = interpolate_local(al, lam) >= 0.5;
            const bool ib = interpolate_local(bl, lam) >= 0.5;
            if (ia && ib) inter += w;
            if (ia || ib) uni += w;
        }
    }
    return uni > 0.0 ? inter / uni : 1.0;
}

/// Jaccard overlap of the reconstruction against the exact shape on the same mesh.
inline double jaccard(const TriMesh& mesh, const NodalField& u, const InclusionShape& shape)
{
    return jaccard(mesh, u, rasterize(shape, mesh));
}

/// Refuses to reconstruct on the mesh that generated the data unless explicitly allowed.
inline void check_inverse_crime(int data_fine_n, const TriMesh& reconstruction_mesh, bool allow)
{
    if (allow) return;
    const auto n = static_cast<Index>(data_fine_n);
    if (reconstruction_mesh.num_vertices() == n * n && reconstruction_mesh.num_triangles() == 2 * (n - 1) * (n - 1)) {
        throw InvalidArgument("reconstruction mesh equals the data mesh (inverse crime); pass --allow-inverse-crime to override");
    }
}

} // namespace afem
