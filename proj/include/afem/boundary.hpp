#pragma once

#include <afem/errors.hpp>
#include <afem/mesh.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace afem {

/// Arclength parameterization of the boundary of (-1,1)^2, counter-clockwise
/// from the corner (-1,-1): bottom [0,2], right [2,4], top [4,6], left [6,8].
inline constexpr double kPerimeter = 8.0;
inline constexpr double kBoundaryTolerance = 1e-9;

enum class Side { bottom = 0, right = 1, top = 2, left = 3 };

inline bool on_side(Point p, Side side)
{
    switch (side) {
    case Side::bottom: return std::abs(p.y + 1.0) <= kBoundaryTolerance && std::abs(p.x) <= 1.0 + kBoundaryTolerance;
    case Side::right: return std::abs(p.x - 1.0) <= kBoundaryTolerance && std::abs(p.y) <= 1.0 + kBoundaryTolerance;
    case Side::top: return std::abs(p.y - 1.0) <= kBoundaryTolerance && std::abs(p.x) <= 1.0 + kBoundaryTolerance;
    case Side::left: return std::abs(p.x + 1.0) <= kBoundaryTolerance && std::abs(p.y) <= 1.0 + kBoundaryTolerance;
    }
    return false;
}

/// Arclength of p measured along `side`; the corner (-1,-1) maps to 8 on the left side.
inline double side_arclength(Point p, Side side)
{
    switch (side) {
    case Side::bottom: return p.x + 1.0;
    case Side::right: return 2.0 + (p.y + 1.0);
    case Side::top: return 4.0 + (1.0 - p.x);
    case Side::left: return 6.0 + (1.0 - p.y);
    }
    return 0.0;
}

/// Arclength in [0, 8) of a boundary point, or nullopt when p is off the boundary.
inline std::optional<double> arclength(Point p)
{
    for (Side side : {Side::bottom, Side::right, Side::top, Side::left}) {
        if (on_side(p, side)) {
            double s = side_arclength(p, side);
            s = std::clamp(s, 0.0, kPerimeter);
            return s >= kPerimeter ? 0.0 : s;
        }
    }
    return std::nullopt;
}

inline Point boundary_point(double s)
{
    s = std::fmod(s, kPerimeter);
    if (s < 0.0) s += kPerimeter;
    if (s <= 2.0) return {-1.0 + s, -1.0};
    if (s <= 4.0) return {1.0, -1.0 + (s - 2.0)};
    if (s <= 6.0) return {1.0 - (s - 4.0), 1.0};
    return {-1.0, 1.0 - (s - 6.0)};
}

/// Arclengths of the endpoints of a boundary edge, measured along the side
/// that contains both.
inline std::array<double, 2> edge_arclength(Point a, Point b)
{
    for (Side side : {Side::bottom, Side::right, Side::top, Side::left}) {
        if (on_side(a, side) && on_side(b, side)) return {side_arclength(a, side), side_arclength(b, side)};
    }
    throw InvalidArgument("edge does not lie on a single side of the boundary");
}

/// Bookkeeping for how boundary data was produced.
struct NoiseRecord
{
    double noise_pct = 0.0;
    double sigma_noise = 0.0;   // standard deviation of the added noise
    std::uint64_t seed = 0;
    double delta = 0.0;         // ||y^delta - y||_{L2(boundary)}
};

/**
 * Boundary trace sampled along the arclength of the square's perimeter and
 * evaluated by periodic piecewise-linear interpolation. `values` carries the
 * (possibly noisy) data, `clean_values` the noise-free trace.
 */
class BoundaryData
{
public:
    BoundaryData() = default;

    BoundaryData(std::vector<double> arclength, std::vector<double> values, std::vector<double> clean_values = {},
                 NoiseRecord noise = {})
        : s_(std::move(arclength)), values_(std::move(values)), clean_(std::move(clean_values)), noise_(noise)
    {
        if (s_.empty() || s_.size() != values_.size()) {
            throw InvalidArgument("boundary data needs matching, nonempty sample and value arrays");
        }
        if (clean_.empty()) clean_ = values_;
        if (clean_.size() != values_.size()) throw InvalidArgument("clean values must match sample count");
        for (std::size_t k = 0; k < s_.size(); ++k) {
            if (!(s_[k] >= 0.0 && s_[k] < kPerimeter)) throw InvalidArgument("sample arclength outside [0, 8)");
            if (k > 0 && !(s_[k] > s_[k - 1])) throw InvalidArgument("sample arclengths must increase strictly");
        }
    }

    static BoundaryData constant(double value) { return BoundaryData({0.0}, {value}); }

    /// Samples the boundary values of a nodal vector on `mesh`.
    static BoundaryData from_nodal(const TriMesh& mesh, std::span<const double> nodal)
    {
        std::vector<std::pair<double, double>> samples;
        std::vector<char> seen(static_cast<std::size_t>(mesh.num_vertices()), 0);
        for (const auto& e : mesh.boundary_edges()) {
            for (Index v : e) {
                if (seen[static_cast<std::size_t>(v)]) continue;
                seen[static_cast<std::size_t>(v)] = 1;
                const auto s = arclength(mesh.vertex(v));
                if (!s) throw InvalidArgument("mesh boundary vertex is not on the square's boundary");
                samples.emplace_back(*s, nodal[static_cast<std::size_t>(v)]);
            }
        }
        std::sort(samples.begin(), samples.end());
        std::vector<double> s, val;
        for (auto [si, vi] : samples) {
            s.push_back(si);
            val.push_back(vi);
        }
        return BoundaryData(std::move(s), std::move(val));
    }

    std::span<const double> arclengths() const noexcept { return s_; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<const double> clean_values() const noexcept { return clean_; }
    const NoiseRecord& noise() const noexcept { return noise_; }
    std::size_t size() const noexcept { return s_.size(); }

    double at(double s) const { return interpolate(values_, s); }
    double clean_at(double s) const { return interpolate(clean_, s); }

    /// Evaluates the data at a point of the boundary.
    double eval(Point p) const
    {
        const auto s = arclength(p);
        if (!s) throw InvalidArgument("point is not on the boundary");
        return at(*s);
    }

    /// Sample positions strictly inside (lo, hi), for 0 <= lo < hi <= 8.
    std::vector<double> breakpoints(double lo, double hi) const
    {
        std::vector<double> out;
        auto it = std::upper_bound(s_.begin(), s_.end(), lo);
        for (; it != s_.end() && *it < hi; ++it) out.push_back(*it);
        return out;
    }

private:
    double interpolate(const std::vector<double>& v, double s) const
    {
        if (s_.size() == 1) return v.front();
        s = std::fmod(s, kPerimeter);
        if (s < 0.0) s += kPerimeter;
        auto it = std::upper_bound(s_.begin(), s_.end(), s);
        std::size_t hi = static_cast<std::size_t>(it - s_.begin());
        std::size_t lo;
        double s_lo, s_hi;
        if (hi == 0 || hi == s_.size()) {
            lo = s_.size() - 1;
            hi = 0;
            s_lo = s_[lo];
            s_hi = s_[0] + kPerimeter;
            if (s < s_lo) s += kPerimeter;
        } else {
            lo = hi - 1;
            s_lo = s_[lo];
            s_hi = s_[hi];
        }
        const double t = (s - s_lo) / (s_hi - s_lo);
        return (1.0 - t) * v[lo] + t * v[hi];
    }

    std::vector<double> s_;
    std::vector<double> values_;
    std::vector<double> clean_;
    NoiseRecord noise_;
};

/// Three-point Gauss-Legendre rule on [0,1].
inline constexpr std::array<double, 3> kEdgeGaussPoints = {0.1127016653792583114820735, 0.5,
                                                           0.8872983346207416885179265};
inline constexpr std::array<double, 3> kEdgeGaussWeights = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};

/**
 * Visits Gauss points on the boundary edges of `mesh`. When `data` is given,
 * each edge is first split at the data's sample positions, so integrands that
 * are polynomial between samples are integrated exactly.
 *
 * The visitor receives (edge index into mesh.boundary_edges(), a, b, t, s, w):
 * the point is (1 - t) * x_a + t * x_b, s is its arclength and w is the
 * physical quadrature weight.
 */
template <class Visitor>
void for_each_boundary_gauss_point(const TriMesh& mesh, const BoundaryData* data, Visitor&& visit)
{
    std::vector<double> cuts;
    const auto edges = mesh.boundary_edges();
    for (std::size_t k = 0; k < edges.size(); ++k) {
        const Index a = edges[k][0], b = edges[k][1];
        const Point pa = mesh.vertex(a), pb = mesh.vertex(b);
        const double length = norm(pb - pa);
        cuts.assign({0.0, 1.0});
        const auto [sa, sb] = edge_arclength(pa, pb);
        if (data != nullptr && data->size() > 1) {
            const double lo = std::min(sa, sb), hi = std::max(sa, sb);
            for (double s : data->breakpoints(lo, hi)) cuts.push_back((s - sa) / (sb - sa));
            std::sort(cuts.begin(), cuts.end());
        }
        for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
            const double t0 = cuts[c], t1 = cuts[c + 1];
            if (t1 - t0 <= 0.0) continue;
            for (std::size_t q = 0; q < 3; ++q) {
                const double t = t0 + (t1 - t0) * kEdgeGaussPoints[q];
                visit(k, a, b, t, sa + t * (sb - sa), kEdgeGaussWeights[q] * (t1 - t0) * length);
            }
        }
    }
}

} // namespace afem
