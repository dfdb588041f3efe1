#pragma once

#include <afem/boundary.hpp>
#include <afem/errors.hpp>
#include <afem/fem.hpp>
#include <afem/mesh.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <limits>
#include <span>
#include <vector>

namespace afem {

/// Weight alpha of the Ginzburg-Landau term and phase-field width epsilon.
struct RegularizationParams
{
    double alpha = 1.5e-3;
    double epsilon = 1.0 / (16.0 * 3.14159265358979323846);

    void validate() const
    {
        if (!(alpha > 0.0)) throw InvalidArgument("alpha must be positive");
        if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be positive");
    }
};

/// Nodal box [0,1] with the control pinned to zero on the boundary band.
class AdmissibleSet
{
public:
    AdmissibleSet() = default;
    explicit AdmissibleSet(BandMask band) : band_(std::move(band)) {}

    const BandMask& band() const noexcept { return band_; }
    bool pinned(Index v) const { return !band_.is_zero.empty() && band_.contains(v); }

    double project(Index v, double value) const { return pinned(v) ? 0.0 : std::clamp(value, 0.0, 1.0); }

    void project(NodalField& u) const
    {
        for (Index v = 0; v < static_cast<Index>(u.size()); ++v) u[v] = project(v, u[v]);
    }

    bool contains(const NodalField& u, double tol = 0.0) const
    {
        for (Index v = 0; v < static_cast<Index>(u.size()); ++v) {
            if (u[v] < -tol || u[v] > 1.0 + tol) return false;
            if (pinned(v) && std::abs(u[v]) > tol) return false;
        }
        return true;
    }

private:
    BandMask band_;
};

/// Inner product weighted by the lumped mass, sum_j m_j a_j b_j.
inline double lumped_dot(const FemSpace& space, std::span<const double> a, std::span<const double> b)
{
    const auto m = space.lumped_mass();
    double s = 0.0;
    for (std::size_t j = 0; j < m.size(); ++j) s += m[j] * a[j] * b[j];
    return s;
}

/// alpha * (epsilon * ||grad u||^2 + epsilon^{-1} * int u (1 - u)).
inline double regularization(const FemSpace& space, const NodalField& u, const RegularizationParams& reg)
{
    const auto& mesh = space.mesh();
    const auto& rule = triangle_rule_degree5();
    double grad_sq = 0.0, well = 0.0;
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& g = space.geometry(t);
        const auto ul = local_values(mesh, t, u.values());
        const Point gu = local_gradient(g, ul);
        grad_sq += g.area * dot(gu, gu);
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const double uq = interpolate_local(ul, rule.points[q]);
            well += 2.0 * g.area * rule.weights[q] * uq * (1.0 - uq);
        }
    }
    return reg.alpha * (reg.epsilon * grad_sq + well / reg.epsilon);
}

/// Sum over sources of the boundary misfits plus the Ginzburg-Landau term.
inline double eval_objective(const FemSpace& space, const NodalField& u, std::span<const NodalField> states,
                             std::span<const BoundaryData> ydeltas, const RegularizationParams& reg)
{
    if (states.size() != ydeltas.size()) throw InvalidArgument("one state per data set is required");
    double misfit = 0.0;
    for (std::size_t i = 0; i < states.size(); ++i) misfit += boundary_misfit(space.mesh(), states[i], ydeltas[i]);
    return misfit + regularization(space, u, reg);
}

/**
 * Partial derivatives G_j of the reduced functional with respect to the nodal
 * control values:
 *   G_j = sum_i [((1-sigma) phi_j grad y_i, grad p_i) + (phi_j, y_i^3 p_i)]
 *         + 2 alpha epsilon (grad u, grad phi_j) + alpha/epsilon (1 - 2u, phi_j).
 */
inline Vector objective_derivative(const FemSpace& space, const NodalField& u, std::span<const NodalField> states,
                                   std::span<const NodalField> adjoints, const Coefficients& coeffs,
                                   const RegularizationParams& reg)
{
    if (states.size() != adjoints.size()) throw InvalidArgument("one adjoint per state is required");
    const auto& mesh = space.mesh();
    const auto& rule = triangle_rule_degree5();
    Vector g = Vector::Zero(space.num_dofs());
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& geo = space.geometry(t);
        const auto& tri = mesh.triangle(t);
        const auto ul = local_values(mesh, t, u.values());
        std::array<double, 3> local{};
        const Point gu = local_gradient(geo, ul);
        for (std::size_t j = 0; j < 3; ++j) local[j] += 2.0 * reg.alpha * reg.epsilon * geo.area * dot(gu, geo.grad[j]);
        for (std::size_t i = 0; i < states.size(); ++i) {
            const auto yl = local_values(mesh, t, states[i].values());
            const auto pl = local_values(mesh, t, adjoints[i].values());
            const double coupling = (1.0 - coeffs.sigma) * dot(local_gradient(geo, yl), local_gradient(geo, pl));
            for (std::size_t j = 0; j < 3; ++j) local[j] += coupling * geo.area / 3.0;
            for (std::size_t q = 0; q < rule.size(); ++q) {
                const auto& lam = rule.points[q];
                const double yq = interpolate_local(yl, lam);
                const double val = 2.0 * geo.area * rule.weights[q] * yq * yq * yq * interpolate_local(pl, lam);
                for (std::size_t j = 0; j < 3; ++j) local[j] += val * lam[j];
            }
        }
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const auto& lam = rule.points[q];
            const double val = 2.0 * geo.area * rule.weights[q] * reg.alpha / reg.epsilon *
                               (1.0 - 2.0 * interpolate_local(ul, lam));
            for (std::size_t j = 0; j < 3; ++j) local[j] += val * lam[j];
        }
        for (std::size_t j = 0; j < 3; ++j) g[tri.v[j]] += local[j];
    }
    return g;
}

/// Riesz representative of the derivative in the lumped L2 inner product;
/// entries on band nodes are zero.
inline NodalField reduced_gradient(const FemSpace& space, const NodalField& u, std::span<const NodalField> states,
                                   std::span<const NodalField> adjoints, const Coefficients& coeffs,
                                   const RegularizationParams& reg, const AdmissibleSet& admissible)
{
    const Vector d = objective_derivative(space, u, states, adjoints, coeffs, reg);
    const auto m = space.lumped_mass();
    NodalField g(space.mesh());
    for (Index j = 0; j < space.num_dofs(); ++j) {
        g[j] = admissible.pinned(j) ? 0.0 : d[j] / m[static_cast<std::size_t>(j)];
    }
    return g;
}

/// ||u - P(u - s g)||_{L2} / s in the lumped norm.
inline double stationarity(const FemSpace& space, const NodalField& u, const NodalField& g,
                           const AdmissibleSet& admissible, double s = 1.0)
{
    const auto m = space.lumped_mass();
    double acc = 0.0;
    for (Index j = 0; j < space.num_dofs(); ++j) {
        const double diff = u[j] - admissible.project(j, u[j] - s * g[j]);
        acc += m[static_cast<std::size_t>(j)] * diff * diff;
    }
    return std::sqrt(acc) / s;
}

/// Everything the reduced functional needs on one mesh.
struct InverseProblem
{
    const FemSpace* space = nullptr;
    std::span<const Source> sources;
    std::span<const BoundaryData> ydeltas;
    Coefficients coeffs;
    RegularizationParams reg;
    AdmissibleSet admissible;
};

struct OptimizerConfig
{
    double tolerance = 1e-6;
    int max_iterations = 200;
    int memory = 10;
    double armijo = 1e-4;
    int max_backtracks = 30;
    NewtonOptions newton;
    int threads = 1;
};

struct OptimizerTraceRow
{
    int iteration = 0;
    double objective = 0.0;
    double stationarity = 0.0;
    double step = 0.0;
};

/// Discrete control with its per-source states and adjoints.
struct OptimalityTriplet
{
    NodalField u;
    std::vector<NodalField> states;
    std::vector<NodalField> adjoints;
    double objective = 0.0;
    double stationarity = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<OptimizerTraceRow> trace;
};

namespace detail {

template <class Fn>
void for_each_source(std::size_t n, int threads, Fn&& fn)
{
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < n; ++i) jobs.push_back(std::async(std::launch::async, [&fn, i] { fn(i); }));
    for (auto& j : jobs) j.get();
}

} // namespace detail

/// States for every source at control u, warm-started from `guess` when given.
inline std::vector<NodalField> solve_states(const InverseProblem& prob, const NodalField& u,
                                            std::span<const NodalField> guess, const OptimizerConfig& cfg = {})
{
    std::vector<NodalField> ys(prob.sources.size());
    detail::for_each_source(prob.sources.size(), cfg.threads, [&](std::size_t i) {
        const NodalField* init = i < guess.size() && guess[i].belongs_to(prob.space->mesh()) ? &guess[i] : nullptr;
        ys[i] = solve_state(*prob.space, u, prob.sources[i], prob.coeffs, cfg.newton, init);
    });
    return ys;
}

inline std::vector<NodalField> solve_adjoints(const InverseProblem& prob, const NodalField& u,
                                              std::span<const NodalField> states, const OptimizerConfig& cfg = {})
{
    std::vector<NodalField> ps(states.size());
    detail::for_each_source(states.size(), cfg.threads, [&](std::size_t i) {
        ps[i] = solve_adjoint(*prob.space, u, states[i], prob.ydeltas[i], prob.coeffs);
    });
    return ps;
}

/**
 * Projected limited-memory BFGS on the admissible set.
 *
 * Search directions are built in the lumped-mass inner product on the
 * variables that are not held at a bound; the step follows the projected
 * path u(t) = P(u + t d) with Armijo backtracking, so accepted objective
 * values never increase.
 */
inline OptimalityTriplet minimize(const InverseProblem& prob, NodalField u0, const OptimizerConfig& cfg = {},
                                  std::span<const NodalField> initial_states = {})
{
    if (prob.space == nullptr) throw InvalidArgument("inverse problem has no FE space");
    if (prob.sources.size() != prob.ydeltas.size()) throw InvalidArgument("one data set per source is required");
    prob.reg.validate();
    const auto& space = *prob.space;
    const auto& mesh = space.mesh();
    const auto n = static_cast<std::size_t>(space.num_dofs());
    const auto m = space.lumped_mass();
    prob.admissible.project(u0);

    OptimalityTriplet cur;
    cur.u = std::move(u0);
    cur.states = solve_states(prob, cur.u, initial_states, cfg);
    cur.adjoints = solve_adjoints(prob, cur.u, cur.states, cfg);
    cur.objective = eval_objective(space, cur.u, cur.states, prob.ydeltas, prob.reg);
    Vector deriv = objective_derivative(space, cur.u, cur.states, cur.adjoints, prob.coeffs, prob.reg);
    NodalField g = reduced_gradient(space, cur.u, cur.states, cur.adjoints, prob.coeffs, prob.reg, prob.admissible);
    cur.stationarity = stationarity(space, cur.u, g, prob.admissible);
    cur.trace.push_back({0, cur.objective, cur.stationarity, 0.0});

    struct Pair
    {
        std::vector<double> s, y;
    };
    std::deque<Pair> memory;
    std::vector<char> free(n);
    std::vector<double> d(n), q(n);
    auto mdot = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (free[j]) acc += m[j] * a[j] * b[j];
        }
        return acc;
    };

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        if (cur.stationarity <= cfg.tolerance) {
            cur.converged = true;
            break;
        }
        for (std::size_t j = 0; j < n; ++j) {
            const auto v = static_cast<Index>(j);
            const bool at_lower = cur.u[v] <= 0.0 && g[v] > 0.0;
            const bool at_upper = cur.u[v] >= 1.0 && g[v] < 0.0;
            free[j] = !(prob.admissible.pinned(v) || at_lower || at_upper);
            q[j] = free[j] ? g[v] : 0.0;
        }

        // Two-loop recursion restricted to the free variables.
        std::vector<double> alphas(memory.size());
        std::vector<double> rhos(memory.size());
        for (std::size_t k = memory.size(); k-- > 0;) {
            const double sy = mdot(memory[k].s, memory[k].y);
            rhos[k] = sy > 0.0 ? 1.0 / sy : 0.0;
            alphas[k] = rhos[k] * mdot(memory[k].s, q);
            for (std::size_t j = 0; j < n; ++j) {
                if (free[j]) q[j] -= alphas[k] * memory[k].y[j];
            }
        }
        double gamma = 1.0;
        if (!memory.empty()) {
            const double yy = mdot(memory.back().y, memory.back().y);
            const double sy = mdot(memory.back().s, memory.back().y);
            if (yy > 0.0 && sy > 0.0) gamma = sy / yy;
        } else {
            double gmax = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (free[j]) gmax = std::max(gmax, std::abs(q[j]));
            }
            if (gmax > 0.0) gamma = std::min(1.0, 0.25 / gmax);
        }
        for (std::size_t j = 0; j < n; ++j) q[j] *= gamma;
        for (std::size_t k = 0; k < memory.size(); ++k) {
            const double beta = rhos[k] * mdot(memory[k].y, q);
            for (std::size_t j = 0; j < n; ++j) {
                if (free[j]) q[j] += memory[k].s[j] * (alphas[k] - beta);
            }
        }
        for (std::size_t j = 0; j < n; ++j) d[j] = free[j] ? -q[j] : 0.0;
        auto steepest = [&] {
            memory.clear();
            double gmax = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (free[j]) gmax = std::max(gmax, std::abs(g[static_cast<Index>(j)]));
            }
            const double scale = gmax > 0.0 ? std::min(1.0, 0.25 / gmax) : 1.0;
            for (std::size_t j = 0; j < n; ++j) d[j] = free[j] ? -scale * g[static_cast<Index>(j)] : 0.0;
        };
        double slope = 0.0;
        for (std::size_t j = 0; j < n; ++j) slope += deriv[static_cast<Eigen::Index>(j)] * d[j];
        bool is_steepest = memory.empty();
        if (!(slope < 0.0)) {
            steepest();
            is_steepest = true;
        }

        // Projected Armijo line search. Controls live in [0, 1], so a step
        // longer than 1 in any component is cut back first. A full step that
        // succeeds is expanded while the objective keeps falling: the double
        // well makes the functional concave along many directions, where
        // the best step runs into the bounds.
        NodalField trial(mesh);
        std::vector<NodalField> trial_states;
        double trial_obj = 0.0, t = 1.0;
        auto try_step = [&](double step, double& obj, NodalField& point, std::vector<NodalField>& states,
                            double& decrease) {
            double moved = 0.0;
            decrease = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const auto v = static_cast<Index>(j);
                point[v] = prob.admissible.project(v, cur.u[v] + step * d[j]);
                const double delta = point[v] - cur.u[v];
                decrease += deriv[static_cast<Eigen::Index>(j)] * delta;
                moved = std::max(moved, std::abs(delta));
            }
            if (moved == 0.0) return -1;
            try {
                states = solve_states(prob, point, cur.states, cfg);
            } catch (const SolverDiverged&) {
                return 0;
            }
            obj = eval_objective(space, point, states, prob.ydeltas, prob.reg);
            return 1;
        };
        auto line_search = [&] {
            double dmax = 0.0;
            for (double v : d) dmax = std::max(dmax, std::abs(v));
            if (dmax > 1.0) {
                for (double& v : d) v /= dmax;
                dmax = 1.0;
            }
            t = 1.0;
            for (int bt = 0; bt <= cfg.max_backtracks; ++bt, t *= 0.5) {
                double decrease = 0.0;
                const int status = try_step(t, trial_obj, trial, trial_states, decrease);
                if (status < 0) return false;
                if (status == 0 || !(trial_obj < cur.objective) || trial_obj > cur.objective + cfg.armijo * decrease) continue;
                if (bt == 0) {
                    NodalField wider(mesh);
                    std::vector<NodalField> wider_states;
                    double wider_obj = 0.0;
                    for (double tw = 2.0; tw * dmax <= 2.0; tw *= 2.0) {
                        if (try_step(tw, wider_obj, wider, wider_states, decrease) != 1) break;
                        if (!(wider_obj < trial_obj) || wider_obj > cur.objective + cfg.armijo * decrease) break;
                        trial = wider;
                        trial_states = wider_states;
                        trial_obj = wider_obj;
                        t = tw;
                    }
                }
                return true;
            }
            return false;
        };
        bool accepted = line_search();
        if (!accepted && !is_steepest) {
            steepest();
            accepted = line_search();
        }
        if (!accepted) {
            cur.iterations = it - 1;
            return cur;
        }

        Pair pair;
        pair.s.resize(n);
        pair.y.resize(n);
        NodalField old_g = g;
        for (std::size_t j = 0; j < n; ++j) pair.s[j] = trial[static_cast<Index>(j)] - cur.u[static_cast<Index>(j)];

        cur.u = std::move(trial);
        cur.states = std::move(trial_states);
        cur.objective = trial_obj;
        cur.adjoints = solve_adjoints(prob, cur.u, cur.states, cfg);
        deriv = objective_derivative(space, cur.u, cur.states, cur.adjoints, prob.coeffs, prob.reg);
        g = reduced_gradient(space, cur.u, cur.states, cur.adjoints, prob.coeffs, prob.reg, prob.admissible);
        cur.stationarity = stationarity(space, cur.u, g, prob.admissible);
        cur.iterations = it;
        cur.trace.push_back({it, cur.objective, cur.stationarity, t});

        double sy = 0.0, ss = 0.0, yy = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            pair.y[j] = g[static_cast<Index>(j)] - old_g[static_cast<Index>(j)];
            sy += m[j] * pair.s[j] * pair.y[j];
            ss += m[j] * pair.s[j] * pair.s[j];
            yy += m[j] * pair.y[j] * pair.y[j];
        }
        if (sy > 1e-10 * std::sqrt(ss * yy)) {
            memory.push_back(std::move(pair));
            if (static_cast<int>(memory.size()) > cfg.memory) memory.pop_front();
        }
    }
    if (cur.stationarity <= cfg.tolerance) cur.converged = true;
    return cur;
}

} // namespace afem
