#pragma once

#include <afem/boundary.hpp>
#include <afem/errors.hpp>
#include <afem/fem.hpp>
#include <afem/mesh.hpp>
#include <afem/objective.hpp>
#include <afem/quadrature.hpp>

#include <algorithm>
#include <array>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

namespace afem {

/**
 * One residual indicator split into its parts:
 *   residual[T] = h_T^2 ||R_T||^2_{L2(T)}
 *   jump[T]     = sum_{F in dT} h_T ||J_F||^2_{L2(F)}
 * and the per-edge squared jump norms ||J_F||^2_{L2(F)} they are built from.
 */
struct ElementIndicator
{
    std::vector<double> residual;
    std::vector<double> jump;
    std::vector<double> edge_jump_sq;

    std::vector<double> total() const
    {
        std::vector<double> out(residual.size());
        for (std::size_t t = 0; t < out.size(); ++t) out[t] = residual[t] + jump[t];
        return out;
    }
};

namespace detail {

/// Integral over T of r(x)^2 with a degree-8 rule, times h_T^2 = |T|.
template <class Residual>
double weighted_residual_sq(const ElementGeometry& g, Residual&& r)
{
    const auto& rule = triangle_rule_degree8();
    double acc = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
        const double v = r(rule.points[q], g.map(rule.points[q]));
        acc += 2.0 * g.area * rule.weights[q] * v * v;
    }
    return g.area * acc;
}

/// ||a(u) c||^2_{L2(F)} for a constant c and u linear along the edge.
inline double edge_norm_sq(const Edge& e, std::span<const double> u, const Coefficients& coeffs, double c)
{
    const double a0 = coeffs.a(u[static_cast<std::size_t>(e.v[0])]);
    const double a1 = coeffs.a(u[static_cast<std::size_t>(e.v[1])]);
    return e.length * (a0 * a0 + a0 * a1 + a1 * a1) / 3.0 * c * c;
}

/// Normal flux jump of grad w across edge e ([.] is the one-sided value on the boundary).
inline double normal_jump(const FemSpace& space, const Edge& e, std::span<const double> w)
{
    const auto& mesh = space.mesh();
    const double plus = dot(local_gradient(space.geometry(e.t_plus), local_values(mesh, e.t_plus, w)), e.normal);
    if (e.on_boundary()) return plus;
    const double minus = dot(local_gradient(space.geometry(e.t_minus), local_values(mesh, e.t_minus, w)), e.normal);
    return plus - minus;
}

inline void distribute_jumps(const FemSpace& space, const EdgeTable& edges, ElementIndicator& ind)
{
    const auto& mesh = space.mesh();
    ind.jump.assign(static_cast<std::size_t>(mesh.num_triangles()), 0.0);
    for (std::size_t k = 0; k < edges.edges.size(); ++k) {
        const auto& e = edges.edges[k];
        for (Index t : {e.t_plus, e.t_minus}) {
            if (t < 0) continue;
            ind.jump[static_cast<std::size_t>(t)] += std::sqrt(space.geometry(t).area) * ind.edge_jump_sq[k];
        }
    }
}

inline void check_edges(const FemSpace& space, const EdgeTable& edges)
{
    if (edges.tri_edges.size() != static_cast<std::size_t>(space.mesh().num_triangles())) {
        throw InvalidArgument("edge table does not match the mesh");
    }
}

} // namespace detail

/// State indicator with R_T = -(1-sigma) grad u . grad y - b(u) y^3 + f and
/// J_F = [a(u) grad y . n_F].
inline ElementIndicator eta1(const FemSpace& space, const EdgeTable& edges, const NodalField& u, const NodalField& y,
                             const Source& f, const Coefficients& coeffs)
{
    detail::check_edges(space, edges);
    const auto& mesh = space.mesh();
    ElementIndicator ind;
    ind.residual.resize(static_cast<std::size_t>(mesh.num_triangles()));
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& g = space.geometry(t);
        const auto ul = local_values(mesh, t, u.values());
        const auto yl = local_values(mesh, t, y.values());
        const double div_flux = -(1.0 - coeffs.sigma) * dot(local_gradient(g, ul), local_gradient(g, yl));
        ind.residual[static_cast<std::size_t>(t)] =
            detail::weighted_residual_sq(g, [&](const std::array<double, 3>& lam, Point x) {
                const double yq = interpolate_local(yl, lam);
                return div_flux - coeffs.b(interpolate_local(ul, lam)) * yq * yq * yq + f(mesh, t, lam, x);
            });
    }
    ind.edge_jump_sq.resize(edges.edges.size());
    for (std::size_t k = 0; k < edges.edges.size(); ++k) {
        const auto& e = edges.edges[k];
        ind.edge_jump_sq[k] = detail::edge_norm_sq(e, u.values(), coeffs, detail::normal_jump(space, e, y.values()));
    }
    detail::distribute_jumps(space, edges, ind);
    return ind;
}

/// Adjoint indicator with R_T = -(1-sigma) grad u . grad p - 3 b(u) y^2 p,
/// interior jumps [a(u) grad p . n_F] and boundary jumps a(u) grad p . n - (y - y^delta).
inline ElementIndicator eta2(const FemSpace& space, const EdgeTable& edges, const NodalField& u, const NodalField& y,
                             const NodalField& p, const BoundaryData& ydelta, const Coefficients& coeffs)
{
    detail::check_edges(space, edges);
    const auto& mesh = space.mesh();
    ElementIndicator ind;
    ind.residual.resize(static_cast<std::size_t>(mesh.num_triangles()));
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& g = space.geometry(t);
        const auto ul = local_values(mesh, t, u.values());
        const auto yl = local_values(mesh, t, y.values());
        const auto pl = local_values(mesh, t, p.values());
        const double div_flux = -(1.0 - coeffs.sigma) * dot(local_gradient(g, ul), local_gradient(g, pl));
        ind.residual[static_cast<std::size_t>(t)] =
            detail::weighted_residual_sq(g, [&](const std::array<double, 3>& lam, Point) {
                const double yq = interpolate_local(yl, lam);
                return div_flux - 3.0 * coeffs.b(interpolate_local(ul, lam)) * yq * yq * interpolate_local(pl, lam);
            });
    }
    ind.edge_jump_sq.assign(edges.edges.size(), 0.0);
    std::unordered_map<std::uint64_t, std::size_t> boundary_lookup;
    for (std::size_t k = 0; k < edges.edges.size(); ++k) {
        const auto& e = edges.edges[k];
        if (e.on_boundary()) {
            boundary_lookup.emplace(detail::edge_key(e.v[0], e.v[1]), k);
        } else {
            ind.edge_jump_sq[k] = detail::edge_norm_sq(e, u.values(), coeffs, detail::normal_jump(space, e, p.values()));
        }
    }
    for_each_boundary_gauss_point(mesh, &ydelta, [&](std::size_t, Index va, Index vb, double t, double s, double w) {
        const std::size_t k = boundary_lookup.at(detail::edge_key(va, vb));
        const auto& e = edges.edges[k];
        const double flux = dot(local_gradient(space.geometry(e.t_plus), local_values(mesh, e.t_plus, p.values())),
                                e.normal);
        const double uq = (1.0 - t) * u[va] + t * u[vb];
        const double yq = (1.0 - t) * y[va] + t * y[vb];
        const double j = coeffs.a(uq) * flux - (yq - ydelta.at(s));
        ind.edge_jump_sq[k] += w * j * j;
    });
    detail::distribute_jumps(space, edges, ind);
    return ind;
}

/**
 * Control indicator with
 *   R_T = sum_i [(1-sigma) grad y_i . grad p_i + y_i^3 p_i] + alpha/epsilon (1 - 2u)
 *   J_F = 2 alpha epsilon [grad u . n_F].
 * With several sources the coupling terms are summed, matching the single
 * variational inequality of the joint problem.
 */
inline ElementIndicator eta3(const FemSpace& space, const EdgeTable& edges, const NodalField& u,
                             std::span<const NodalField> states, std::span<const NodalField> adjoints,
                             const Coefficients& coeffs, const RegularizationParams& reg)
{
    detail::check_edges(space, edges);
    if (states.size() != adjoints.size()) throw InvalidArgument("one adjoint per state is required");
    const auto& mesh = space.mesh();
    ElementIndicator ind;
    ind.residual.resize(static_cast<std::size_t>(mesh.num_triangles()));
    std::vector<std::array<double, 3>> yl(states.size()), pl(states.size());
    std::vector<double> coupling(states.size());
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& g = space.geometry(t);
        const auto ul = local_values(mesh, t, u.values());
        for (std::size_t i = 0; i < states.size(); ++i) {
            yl[i] = local_values(mesh, t, states[i].values());
            pl[i] = local_values(mesh, t, adjoints[i].values());
            coupling[i] = (1.0 - coeffs.sigma) * dot(local_gradient(g, yl[i]), local_gradient(g, pl[i]));
        }
        ind.residual[static_cast<std::size_t>(t)] =
            detail::weighted_residual_sq(g, [&](const std::array<double, 3>& lam, Point) {
                double r = reg.alpha / reg.epsilon * (1.0 - 2.0 * interpolate_local(ul, lam));
                for (std::size_t i = 0; i < states.size(); ++i) {
                    const double yq = interpolate_local(yl[i], lam);
                    r += coupling[i] + yq * yq * yq * interpolate_local(pl[i], lam);
                }
                return r;
            });
    }
    ind.edge_jump_sq.resize(edges.edges.size());
    for (std::size_t k = 0; k < edges.edges.size(); ++k) {
        const auto& e = edges.edges[k];
        const double j = 2.0 * reg.alpha * reg.epsilon * detail::normal_jump(space, e, u.values());
        ind.edge_jump_sq[k] = e.length * j * j;
    }
    detail::distribute_jumps(space, edges, ind);
    return ind;
}

/// Per-element squared indicators eta_1^2, eta_2^2, eta_3^2 with aggregates.
struct EstimatorTable
{
    std::vector<double> eta1_sq;
    std::vector<double> eta2_sq;
    std::vector<double> eta3_sq;
    std::array<double, 3> totals{};
    int dominant = 0;   // index (0-based) of the largest aggregate
    Index argmax = 0;   // element with the largest entry of the dominant indicator

    Index size() const noexcept { return static_cast<Index>(eta1_sq.size()); }
    double sum() const noexcept { return totals[0] + totals[1] + totals[2]; }

    const std::vector<double>& indicator(int i) const
    {
        switch (i) {
        case 0: return eta1_sq;
        case 1: return eta2_sq;
        default: return eta3_sq;
        }
    }

    /// Recomputes aggregates, the dominant indicator and its argmax.
    void finalize()
    {
        if (eta2_sq.size() != eta1_sq.size() || eta3_sq.size() != eta1_sq.size()) {
            throw InvalidArgument("estimator columns differ in length");
        }
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (double v : indicator(i)) s += v;
            totals[static_cast<std::size_t>(i)] = s;
        }
        dominant = static_cast<int>(std::max_element(totals.begin(), totals.end()) - totals.begin());
        const auto& col = indicator(dominant);
        argmax = col.empty() ? 0 : static_cast<Index>(std::max_element(col.begin(), col.end()) - col.begin());
    }
};

inline EstimatorTable make_table(std::vector<double> e1, std::vector<double> e2, std::vector<double> e3)
{
    EstimatorTable t{std::move(e1), std::move(e2), std::move(e3)};
    t.finalize();
    return t;
}

enum class CombineMode { max, sum };

/**
 * Combines per-source tables elementwise (max or sum). When `joint_eta3` is
 * given it replaces the combined third column, since the control indicator
 * of a multi-source problem is already a joint quantity.
 */
inline EstimatorTable combine(std::span<const EstimatorTable> tables, CombineMode mode,
                              const std::vector<double>* joint_eta3 = nullptr)
{
    if (tables.empty()) throw InvalidArgument("combine needs at least one table");
    const std::size_t n = tables.front().eta1_sq.size();
    for (const auto& t : tables) {
        if (t.eta1_sq.size() != n || t.eta2_sq.size() != n || t.eta3_sq.size() != n) {
            throw InvalidArgument("estimator tables live on different meshes");
        }
    }
    if (joint_eta3 != nullptr && joint_eta3->size() != n) throw InvalidArgument("joint eta3 has wrong length");
    EstimatorTable out = tables.front();
    for (std::size_t k = 1; k < tables.size(); ++k) {
        for (int i = 0; i < 3; ++i) {
            auto& dst = const_cast<std::vector<double>&>(out.indicator(i));
            const auto& src = tables[k].indicator(i);
            for (std::size_t t = 0; t < n; ++t) dst[t] = mode == CombineMode::max ? std::max(dst[t], src[t]) : dst[t] + src[t];
        }
    }
    if (joint_eta3 != nullptr) out.eta3_sq = *joint_eta3;
    out.finalize();
    return out;
}

/// Indicators for every source at an optimality triplet, combined across sources.
struct EstimateResult
{
    std::vector<EstimatorTable> per_source;
    EstimatorTable combined;
};

inline EstimateResult estimate(const FemSpace& space, const NodalField& u, std::span<const NodalField> states,
                               std::span<const NodalField> adjoints, std::span<const Source> sources,
                               std::span<const BoundaryData> ydeltas, const Coefficients& coeffs,
                               const RegularizationParams& reg, CombineMode mode = CombineMode::max)
{
    if (states.size() != sources.size() || adjoints.size() != sources.size() || ydeltas.size() != sources.size()) {
        throw InvalidArgument("states, adjoints, sources and data must have equal counts");
    }
    const EdgeTable edges = edge_tables(space.mesh());
    const auto joint = eta3(space, edges, u, states, adjoints, coeffs, reg).total();
    EstimateResult res;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        res.per_source.push_back(make_table(eta1(space, edges, u, states[i], sources[i], coeffs).total(),
                                            eta2(space, edges, u, states[i], adjoints[i], ydeltas[i], coeffs).total(),
                                            joint));
    }
    res.combined = combine(res.per_source, mode, &joint);
    return res;
}

} // namespace afem
