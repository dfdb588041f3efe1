#pragma once

// Independent reference computations shared by the test suites. Nothing here
// calls into the assembly or quadrature code under test.

#include <afem/mesh.hpp>

#include <boost/math/quadrature/gauss.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <vector>

namespace oracle {

using afem::Index;
using afem::Point;
using afem::TriMesh;

/// Integral of f over the triangle with corners c by a Duffy-collapsed
/// 12x12 Gauss-Legendre product rule on `levels` levels of midpoint subdivision.
inline double integrate(const std::array<Point, 3>& c, const std::function<double(Point)>& f, int levels = 1)
{
    if (levels > 0) {
        const Point m01 = afem::midpoint(c[0], c[1]), m12 = afem::midpoint(c[1], c[2]), m20 = afem::midpoint(c[2], c[0]);
        return integrate({c[0], m01, m20}, f, levels - 1) + integrate({m01, c[1], m12}, f, levels - 1) +
               integrate({m20, m12, c[2]}, f, levels - 1) + integrate({m01, m12, m20}, f, levels - 1);
    }
    using Gauss = boost::math::quadrature::gauss<double, 12>;
    const double jac = std::abs(afem::cross(c[1] - c[0], c[2] - c[0]));
    double acc = 0.0;
    auto inner = [&](double xi, double wx) {
        for (std::size_t j = 0; j < Gauss::abscissa().size(); ++j) {
            for (int sgn : {-1, 1}) {
                if (sgn < 0 && Gauss::abscissa()[j] == 0.0) continue;
                const double eta = 0.5 * (1.0 + sgn * Gauss::abscissa()[j]);
                const double wy = 0.5 * Gauss::weights()[j];
                // (s, t) = (xi, (1 - xi) eta) maps the unit square onto the reference triangle.
                const double s = xi, t = (1.0 - xi) * eta;
                const Point x = c[0] + s * (c[1] - c[0]) + t * (c[2] - c[0]);
                acc += wx * wy * (1.0 - xi) * f(x);
            }
        }
    };
    for (std::size_t i = 0; i < Gauss::abscissa().size(); ++i) {
        for (int sgn : {-1, 1}) {
            if (sgn < 0 && Gauss::abscissa()[i] == 0.0) continue;
            inner(0.5 * (1.0 + sgn * Gauss::abscissa()[i]), 0.5 * Gauss::weights()[i]);
        }
    }
    return jac * acc;
}

/// Line integral of f along the segment a-b with 20-point Gauss-Legendre.
inline double integrate_segment(Point a, Point b, const std::function<double(Point)>& f)
{
    const double len = afem::norm(b - a);
    return boost::math::quadrature::gauss<double, 20>::integrate(
               [&](double s) { return f(a + (0.5 * (1.0 + s)) * (b - a)); }, -1.0, 1.0) *
           0.5 * len;
}

/// Linear interpolant on a triangle from vertex values.
inline double p1_value(const std::array<Point, 3>& c, const std::array<double, 3>& v, Point x)
{
    const double det = afem::cross(c[1] - c[0], c[2] - c[0]);
    const double l1 = afem::cross(x - c[0], c[2] - c[0]) / det;
    const double l2 = afem::cross(c[1] - c[0], x - c[0]) / det;
    return v[0] * (1.0 - l1 - l2) + v[1] * l1 + v[2] * l2;
}

inline Point p1_gradient(const std::array<Point, 3>& c, const std::array<double, 3>& v)
{
    const double det = afem::cross(c[1] - c[0], c[2] - c[0]);
    const Point e1 = c[1] - c[0], e2 = c[2] - c[0];
    const double d1 = v[1] - v[0], d2 = v[2] - v[0];
    return {(d1 * e2.y - d2 * e1.y) / det, (d2 * e1.x - d1 * e2.x) / det};
}

inline std::array<double, 3> values_on(const TriMesh& mesh, Index t, std::span<const double> field)
{
    const auto& tri = mesh.triangle(t);
    return {field[static_cast<std::size_t>(tri.v[0])], field[static_cast<std::size_t>(tri.v[1])],
            field[static_cast<std::size_t>(tri.v[2])]};
}

inline bool on_square_boundary(Point p)
{
    constexpr double tol = 1e-12;
    return std::abs(std::abs(p.x) - 1.0) < tol || std::abs(std::abs(p.y) - 1.0) < tol;
}

/// Brute-force conformity: every edge has one or two incident triangles and
/// single-incidence edges lie on one side of the square.
inline bool conforming(const TriMesh& mesh)
{
    std::map<std::pair<Index, Index>, int> count;
    for (const auto& t : mesh.triangles()) {
        for (int e = 0; e < 3; ++e) {
            const Index a = t.v[static_cast<std::size_t>((e + 1) % 3)], b = t.v[static_cast<std::size_t>((e + 2) % 3)];
            ++count[{std::min(a, b), std::max(a, b)}];
        }
    }
    for (const auto& [edge, c] : count) {
        if (c > 2) return false;
        if (c == 1) {
            const Point a = mesh.vertex(edge.first), b = mesh.vertex(edge.second);
            const bool same_side = (std::abs(a.x - b.x) < 1e-12 && std::abs(std::abs(a.x) - 1.0) < 1e-12) ||
                                   (std::abs(a.y - b.y) < 1e-12 && std::abs(std::abs(a.y) - 1.0) < 1e-12);
            if (!same_side) return false;
        }
    }
    return true;
}

/// Sorted interior angles, rounded so that similar triangles compare equal.
inline std::array<long, 3> shape_key(const std::array<Point, 3>& c)
{
    std::array<double, 3> ang{};
    for (int i = 0; i < 3; ++i) {
        const Point u = c[static_cast<std::size_t>((i + 1) % 3)] - c[static_cast<std::size_t>(i)];
        const Point v = c[static_cast<std::size_t>((i + 2) % 3)] - c[static_cast<std::size_t>(i)];
        ang[static_cast<std::size_t>(i)] = std::acos(afem::dot(u, v) / (afem::norm(u) * afem::norm(v)));
    }
    std::sort(ang.begin(), ang.end());
    return {std::lround(ang[0] * 1e8), std::lround(ang[1] * 1e8), std::lround(ang[2] * 1e8)};
}

inline double min_angle(const std::array<Point, 3>& c)
{
    double m = 10.0;
    for (int i = 0; i < 3; ++i) {
        const Point u = c[static_cast<std::size_t>((i + 1) % 3)] - c[static_cast<std::size_t>(i)];
        const Point v = c[static_cast<std::size_t>((i + 2) % 3)] - c[static_cast<std::size_t>(i)];
        m = std::min(m, std::acos(afem::dot(u, v) / (afem::norm(u) * afem::norm(v))));
    }
    return m;
}

/// Dense P1 stiffness and consistent mass matrices with coefficient functions
/// evaluated by the refined quadrature above.
inline std::vector<std::vector<double>> dense_stiffness(const TriMesh& mesh, const std::function<double(Point)>& coef)
{
    const auto n = static_cast<std::size_t>(mesh.num_vertices());
    std::vector<std::vector<double>> k(n, std::vector<double>(n, 0.0));
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto c = mesh.corners(t);
        const auto& tri = mesh.triangle(t);
        const double w = integrate(c, coef, 0);
        std::array<Point, 3> g{};
        for (int i = 0; i < 3; ++i) {
            std::array<double, 3> e{};
            e[static_cast<std::size_t>(i)] = 1.0;
            g[static_cast<std::size_t>(i)] = p1_gradient(c, e);
        }
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                k[static_cast<std::size_t>(tri.v[static_cast<std::size_t>(i)])]
                 [static_cast<std::size_t>(tri.v[static_cast<std::size_t>(j)])] +=
                    w * afem::dot(g[static_cast<std::size_t>(i)], g[static_cast<std::size_t>(j)]);
            }
        }
    }
    return k;
}

inline std::vector<std::vector<double>> dense_mass(const TriMesh& mesh, const std::function<double(Point)>& coef)
{
    const auto n = static_cast<std::size_t>(mesh.num_vertices());
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto c = mesh.corners(t);
        const auto& tri = mesh.triangle(t);
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 3; ++j) {
                std::array<double, 3> ei{}, ej{};
                ei[static_cast<std::size_t>(i)] = 1.0;
                ej[static_cast<std::size_t>(j)] = 1.0;
                m[static_cast<std::size_t>(tri.v[static_cast<std::size_t>(i)])]
                 [static_cast<std::size_t>(tri.v[static_cast<std::size_t>(j)])] +=
                    integrate(c, [&](Point x) { return coef(x) * p1_value(c, ei, x) * p1_value(c, ej, x); }, 0);
            }
        }
    }
    return m;
}

/// Random nodal field with values in [lo, hi].
inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = 0.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

/// Structured mesh with interior vertices moved by up to `amount` times the
/// grid spacing, so that root triangles are no longer right isosceles.
inline afem::TriMesh jittered_structured(int n, std::mt19937_64& rng, double amount = 0.2)
{
    const auto base = afem::build_structured(n);
    std::vector<afem::Point> v(base.vertices().begin(), base.vertices().end());
    std::uniform_real_distribution<double> d(-amount, amount);
    const double h = 2.0 / (n - 1);
    for (auto& p : v) {
        if (on_square_boundary(p)) continue;
        p = p + afem::Point{d(rng) * h, d(rng) * h};
    }
    return afem::TriMesh::from_triangles(std::move(v), {base.triangles().begin(), base.triangles().end()});
}

} // namespace oracle
