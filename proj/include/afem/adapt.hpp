#pragma once

#include <afem/errors.hpp>
#include <afem/estimator.hpp>
#include <afem/fem.hpp>
#include <afem/mesh.hpp>
#include <afem/objective.hpp>

#include <algorithm>
#include <chrono>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace afem {

enum class MarkingStrategy { dorfler, maximum };

struct LoopConfig
{
    double theta = 0.65;
    double tol = 1e-6;
    int max_iterations = 6;
    MarkingStrategy marking = MarkingStrategy::dorfler;
    CombineMode combine = CombineMode::max;

    void validate() const
    {
        if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgument("theta must lie in (0, 1]");
        if (!(tol >= 0.0)) throw InvalidArgument("TOL must be nonnegative");
        if (max_iterations < 1) throw InvalidArgument("K must be at least 1");
    }
};

/// Greedy Doerfler marking of one indicator column.
inline std::vector<Index> mark_dorfler(std::span<const double> eta_sq, double theta)
{
    if (eta_sq.empty()) throw InvalidArgument("cannot mark an empty estimator table");
    if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgument("theta must lie in (0, 1]");
    std::vector<Index> order(eta_sq.size());
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
        return eta_sq[static_cast<std::size_t>(a)] > eta_sq[static_cast<std::size_t>(b)];
    });
    double total = 0.0;
    for (Index t : order) total += eta_sq[static_cast<std::size_t>(t)];
    if (!(total > 0.0)) return {order.front()};

    const double target = theta * total;
    std::vector<Index> marked;
    double acc = 0.0;
    for (Index t : order) {
        marked.push_back(t);
        acc += eta_sq[static_cast<std::size_t>(t)];
        if (acc >= target) break;
    }
    return marked;
}

/// Marks every element with eta^2 >= max/2 (in ascending id order).
inline std::vector<Index> mark_maximum(std::span<const double> eta_sq)
{
    if (eta_sq.empty()) throw InvalidArgument("cannot mark an empty estimator table");
    const double top = *std::max_element(eta_sq.begin(), eta_sq.end());
    if (!(top > 0.0)) return {0};
    std::vector<Index> marked;
    for (std::size_t t = 0; t < eta_sq.size(); ++t) {
        if (eta_sq[t] >= 0.5 * top) marked.push_back(static_cast<Index>(t));
    }
    return marked;
}

/// Marking driven by the dominant indicator of `table`.
inline std::vector<Index> mark(const EstimatorTable& table, double theta,
                               MarkingStrategy strategy = MarkingStrategy::dorfler)
{
    const auto& col = table.indicator(table.dominant);
    return strategy == MarkingStrategy::dorfler ? mark_dorfler(col, theta) : mark_maximum(col);
}

struct HistoryRow
{
    int k = 0;
    Index nodes = 0;
    Index triangles = 0;
    double objective = 0.0;
    double eta1_sq = 0.0;
    double eta2_sq = 0.0;
    double eta3_sq = 0.0;
    Index marked = 0;
    int dominant = 0;
    int optimizer_iterations = 0;
    double stationarity = 0.0;
    bool converged = false;
    double wall_time = 0.0;   // seconds

    double eta_sum() const noexcept { return eta1_sq + eta2_sq + eta3_sq; }
};

struct RunHistory
{
    std::string mode = "adaptive";
    std::vector<HistoryRow> rows;
};

/// Data and parameters shared by every level of a reconstruction.
struct ReconstructionSetup
{
    std::vector<Source> sources;
    std::vector<BoundaryData> ydeltas;
    Coefficients coeffs;
    RegularizationParams reg;
    double d0 = 0.1;
    OptimizerConfig optimizer;
};

/// Everything produced at one level, handed to observers before refinement.
struct LevelState
{
    int k = 0;
    const TriMesh* mesh = nullptr;
    const OptimalityTriplet* triplet = nullptr;
    const EstimateResult* estimate = nullptr;
    std::span<const Index> marked;
    const RunHistory* history = nullptr;
};

using LevelObserver = std::function<void(const LevelState&)>;

struct RunResult
{
    OptimalityTriplet triplet;
    RunHistory history;
    TriMesh mesh;
};

/// A failure inside the loop, tagged with the iteration and the history so far.
class LoopFailure : public NumericalError
{
public:
    LoopFailure(int iteration, const std::string& what, RunHistory history)
        : NumericalError("iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration),
          history_(std::move(history))
    {
    }

    int iteration() const noexcept { return iteration_; }
    const RunHistory& history() const noexcept { return history_; }

private:
    int iteration_;
    RunHistory history_;
};

namespace detail {

struct LevelOutcome
{
    OptimalityTriplet triplet;
    EstimateResult estimate;
};

inline LevelOutcome solve_and_estimate(const TriMesh& mesh, const ReconstructionSetup& setup, NodalField u0,
                                       std::span<const NodalField> y0, CombineMode mode)
{
    const FemSpace space(mesh);
    InverseProblem prob{&space, setup.sources, setup.ydeltas, setup.coeffs, setup.reg,
                        AdmissibleSet(boundary_band(mesh, setup.d0))};
    LevelOutcome out;
    out.triplet = minimize(prob, std::move(u0), setup.optimizer, y0);
    out.estimate = estimate(space, out.triplet.u, out.triplet.states, out.triplet.adjoints, setup.sources,
                            setup.ydeltas, setup.coeffs, setup.reg, mode);
    return out;
}

inline HistoryRow make_row(int k, const TriMesh& mesh, const LevelOutcome& lvl, Index marked, double seconds)
{
    HistoryRow row;
    row.k = k;
    row.nodes = mesh.num_vertices();
    row.triangles = mesh.num_triangles();
    row.objective = lvl.triplet.objective;
    row.eta1_sq = lvl.estimate.combined.totals[0];
    row.eta2_sq = lvl.estimate.combined.totals[1];
    row.eta3_sq = lvl.estimate.combined.totals[2];
    row.marked = marked;
    row.dominant = lvl.estimate.combined.dominant;
    row.optimizer_iterations = lvl.triplet.iterations;
    row.stationarity = lvl.triplet.stationarity;
    row.converged = lvl.triplet.converged;
    row.wall_time = seconds;
    return row;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void check_setup(const ReconstructionSetup& setup)
{
    if (setup.sources.empty()) throw InvalidArgument("at least one source is required");
    if (setup.sources.size() != setup.ydeltas.size()) throw InvalidArgument("one data set per source is required");
    if (!(setup.d0 >= 0.0)) throw InvalidArgument("d0 must be nonnegative");
    setup.reg.validate();
}

} // namespace detail

/**
 * Adaptive loop SOLVE -> ESTIMATE -> MARK -> REFINE, starting from u = 0.
 *
 * Each level is warm-started from the transferred control and states of the
 * previous one. The loop stops when eta_1^2 + eta_2^2 + eta_3^2 <= TOL or
 * after K solves; the mesh of the last solve is returned.
 */
inline RunResult run(const TriMesh& initial, const ReconstructionSetup& setup, const LoopConfig& cfg,
                     const LevelObserver& observer = {})
{
    cfg.validate();
    detail::check_setup(setup);
    RunHistory history;
    history.mode = "adaptive";
    TriMesh mesh = initial;
    NodalField u0(mesh, 0.0);
    std::vector<NodalField> y0;
    for (int k = 0; k < cfg.max_iterations; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto lvl = detail::solve_and_estimate(mesh, setup, std::move(u0), y0, cfg.combine);
            const bool done = lvl.estimate.combined.sum() <= cfg.tol;
            std::vector<Index> marked;
            if (!done) marked = mark(lvl.estimate.combined, cfg.theta, cfg.marking);
            history.rows.push_back(
                detail::make_row(k, mesh, lvl, static_cast<Index>(marked.size()), detail::seconds_since(t0)));
            if (observer) observer({k, &mesh, &lvl.triplet, &lvl.estimate, marked, &history});
            if (done || k + 1 == cfg.max_iterations) return {std::move(lvl.triplet), std::move(history), std::move(mesh)};

            TriMesh next = bisect(mesh, marked);
            u0 = transfer(lvl.triplet.u, mesh, next);
            y0.clear();
            for (const auto& y : lvl.triplet.states) y0.push_back(transfer(y, mesh, next));
            mesh = std::move(next);
        } catch (const LoopFailure&) {
            throw;
        } catch (const NumericalError& e) {
            throw LoopFailure(k, e.what(), history);
        }
    }
    throw LoopFailure(cfg.max_iterations, "loop ended without a solve", history);
}

enum class UniformStrategy {
    regrid,   // structured grids with `grid_step` more vertices per side each level
    bisect    // bisect every element (two bisections per level, as in a red refinement)
};

struct UniformConfig
{
    int levels = 3;
    UniformStrategy strategy = UniformStrategy::regrid;
    int initial_n = 26;
    int grid_step = 15;
    CombineMode combine = CombineMode::max;
};

/// The same pipeline on a sequence of uniformly refined meshes (levels + 1 solves).
inline RunResult run_uniform(const TriMesh& initial, const ReconstructionSetup& setup, const UniformConfig& cfg,
                             const LevelObserver& observer = {})
{
    if (cfg.levels < 0) throw InvalidArgument("levels must be nonnegative");
    if (cfg.strategy == UniformStrategy::regrid && (cfg.initial_n < 2 || cfg.grid_step < 1)) {
        throw InvalidArgument("regrid needs initial_n >= 2 and grid_step >= 1");
    }
    detail::check_setup(setup);
    RunHistory history;
    history.mode = "uniform";
    TriMesh mesh = initial;
    NodalField u0(mesh, 0.0);
    std::vector<NodalField> y0;
    for (int k = 0; k <= cfg.levels; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        try {
            auto lvl = detail::solve_and_estimate(mesh, setup, std::move(u0), y0, cfg.combine);
            const Index marked = k < cfg.levels ? mesh.num_triangles() : 0;
            history.rows.push_back(detail::make_row(k, mesh, lvl, marked, detail::seconds_since(t0)));
            if (observer) observer({k, &mesh, &lvl.triplet, &lvl.estimate, {}, &history});
            if (k == cfg.levels) return {std::move(lvl.triplet), std::move(history), std::move(mesh)};

            TriMesh next = cfg.strategy == UniformStrategy::regrid
                               ? build_structured(cfg.initial_n + (k + 1) * cfg.grid_step)
                               : bisect_all(bisect_all(mesh));
            const bool nested = next.parent_id() == mesh.id();
            u0 = nested ? transfer(lvl.triplet.u, mesh, next) : interpolate(lvl.triplet.u, mesh, next);
            y0.clear();
            for (const auto& y : lvl.triplet.states) {
                y0.push_back(nested ? transfer(y, mesh, next) : interpolate(y, mesh, next));
            }
            mesh = std::move(next);
        } catch (const LoopFailure&) {
            throw;
        } catch (const NumericalError& e) {
            throw LoopFailure(k, e.what(), history);
        }
    }
    throw LoopFailure(cfg.levels, "loop ended without a solve", history);
}

} // namespace afem
