#include "oracles.hpp"

#include <afem/data.hpp>
#include <afem/objective.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using namespace afem;

namespace {

const Coefficients kCoeffs{1e-4};

std::vector<Source> two_sources() { return {named_source("x1"), named_source("x2")}; }

/// Boundary data from the inclusion `shape` solved on a structured mesh of size n.
std::vector<BoundaryData> synthetic(const InclusionShape& shape, int n)
{
    DataSpec spec;
    spec.shape = shape;
    spec.sources = two_sources();
    spec.fine_n = n;
    return make_data(spec);
}

double reduced_objective(const FemSpace& space, const NodalField& u, std::span<const Source> sources,
                         std::span<const BoundaryData> data, const RegularizationParams& reg)
{
    NewtonOptions tight;
    tight.tolerance = 1e-13;
    std::vector<NodalField> ys;
    for (const auto& f : sources) ys.push_back(solve_state(space, u, f, kCoeffs, tight));
    return eval_objective(space, u, ys, data, reg);
}

/// Exact integrals of P1 fields: int u^2 and int u over the mesh, and |grad u|^2.
struct P1Integrals
{
    double u = 0.0, u2 = 0.0, grad2 = 0.0;
};

P1Integrals p1_integrals(const TriMesh& mesh, const NodalField& u)
{
    P1Integrals out;
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto c = mesh.corners(t);
        const auto v = oracle::values_on(mesh, t, u.values());
        const double a = mesh.area(t);
        out.u += a / 3.0 * (v[0] + v[1] + v[2]);
        out.u2 += a / 6.0 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] + v[0] * v[1] + v[1] * v[2] + v[0] * v[2]);
        const Point g = oracle::p1_gradient(c, v);
        out.grad2 += a * dot(g, g);
    }
    return out;
}

NodalField interior_random(const TriMesh& mesh, const AdmissibleSet& adm, std::mt19937_64& rng, double lo, double hi)
{
    NodalField u(mesh, oracle::random_values(static_cast<std::size_t>(mesh.num_vertices()), rng, lo, hi));
    for (Index v = 0; v < mesh.num_vertices(); ++v) {
        if (adm.pinned(v)) u[v] = 0.0;
    }
    return u;
}

} // namespace

TEST(AdmissibleSet, ProjectionIsIdempotentAndFeasible)
{
    std::mt19937_64 rng(1);
    const auto mesh = build_structured(11);
    const AdmissibleSet adm(boundary_band(mesh, 0.1));
    for (int trial = 0; trial < 20; ++trial) {
        NodalField u(mesh, oracle::random_values(static_cast<std::size_t>(mesh.num_vertices()), rng, -1.0, 2.0));
        adm.project(u);
        EXPECT_TRUE(adm.contains(u));
        NodalField again = u;
        adm.project(again);
        for (Index v = 0; v < mesh.num_vertices(); ++v) EXPECT_EQ(again[v], u[v]);
    }
}

TEST(EvalObjective, ZeroForMatchingDataAndZeroControl)
{
    const auto mesh = build_structured(9);
    const FemSpace space(mesh);
    const NodalField u(mesh, 0.0);
    const auto sources = two_sources();
    std::vector<NodalField> ys;
    std::vector<BoundaryData> data;
    for (const auto& f : sources) {
        ys.push_back(solve_state(space, u, f, kCoeffs));
        data.push_back(BoundaryData::from_nodal(mesh, ys.back().values()));
    }
    EXPECT_NEAR(eval_objective(space, u, ys, data, {}), 0.0, 1e-28);
}

TEST(EvalObjective, HalfControlGivesQuarterWell)
{
    const auto mesh = build_structured(7);
    const FemSpace space(mesh);
    const RegularizationParams reg{2e-3, 0.05};
    // u = 1/2 on the whole square (area 4): alpha * 4 / (4 epsilon).
    EXPECT_NEAR(regularization(space, NodalField(mesh, 0.5), reg), reg.alpha * 4.0 / (4.0 * reg.epsilon), 1e-14);
}

TEST(EvalObjective, MatchesExactP1Integrals)
{
    std::mt19937_64 rng(8);
    const auto mesh = bisect_all(build_structured(8));
    const FemSpace space(mesh);
    const RegularizationParams reg{1.5e-3, 1.0 / (16.0 * std::numbers::pi)};
    for (int trial = 0; trial < 5; ++trial) {
        const NodalField u(mesh, oracle::random_values(static_cast<std::size_t>(mesh.num_vertices()), rng));
        const auto ints = p1_integrals(mesh, u);
        const double ref = reg.alpha * (reg.epsilon * ints.grad2 + (ints.u - ints.u2) / reg.epsilon);
        EXPECT_NEAR(regularization(space, u, reg), ref, 1e-10 * std::abs(ref));
    }
}

TEST(EvalObjective, MisfitIsAdditiveOverSources)
{
    std::mt19937_64 rng(4);
    const auto mesh = build_structured(9);
    const FemSpace space(mesh);
    const NodalField u(mesh, oracle::random_values(81, rng));
    const auto sources = two_sources();
    const std::vector<BoundaryData> data{BoundaryData::constant(0.1), BoundaryData::constant(-0.2)};
    std::vector<NodalField> ys;
    for (const auto& f : sources) ys.push_back(solve_state(space, u, f, kCoeffs));
    const RegularizationParams reg;
    const double both = eval_objective(space, u, ys, data, reg) - regularization(space, u, reg);
    const double first = eval_objective(space, u, std::span(ys).first(1), std::span(data).first(1), reg);
    const double second = eval_objective(space, u, std::span(ys).last(1), std::span(data).last(1), reg);
    EXPECT_NEAR(both, first + second - 2.0 * regularization(space, u, reg), 1e-14);
    EXPECT_NEAR(both, boundary_misfit(mesh, ys[0], data[0]) + boundary_misfit(mesh, ys[1], data[1]), 1e-15);
}

// Central differences of the reduced functional (states re-solved) against
// the adjoint-based derivative on random interior points and directions.
TEST(ReducedGradient, MatchesFiniteDifferences)
{
    std::mt19937_64 rng(99);
    const auto mesh = build_structured(9);
    const FemSpace space(mesh);
    const AdmissibleSet adm(boundary_band(mesh, 0.1));
    const auto sources = two_sources();
    const auto data = synthetic(InclusionShape::circle({0.1, 0.0}, 0.35), 41);
    const RegularizationParams reg;
    NewtonOptions tight;
    tight.tolerance = 1e-13;

    for (int point = 0; point < 3; ++point) {
        const auto u = interior_random(mesh, adm, rng, 0.2, 0.8);
        std::vector<NodalField> ys, ps;
        for (std::size_t i = 0; i < sources.size(); ++i) {
            ys.push_back(solve_state(space, u, sources[i], kCoeffs, tight));
            ps.push_back(solve_adjoint(space, u, ys[i], data[i], kCoeffs));
        }
        const Vector d = objective_derivative(space, u, ys, ps, kCoeffs, reg);
        for (int dir = 0; dir < 20; ++dir) {
            const auto v = interior_random(mesh, adm, rng, -1.0, 1.0);
            const double h = 1e-5;
            NodalField up = u, um = u;
            up.vec() += h * v.vec();
            um.vec() -= h * v.vec();
            const double fd =
                (reduced_objective(space, up, sources, data, reg) - reduced_objective(space, um, sources, data, reg)) /
                (2.0 * h);
            const double exact = d.dot(v.vec());
            EXPECT_LE(std::abs(fd - exact), 1e-4 * std::abs(exact)) << "point " << point << " dir " << dir;
        }
    }
}

TEST(ReducedGradient, RegularizerOnlyWhenDataMatch)
{
    std::mt19937_64 rng(6);
    const auto mesh = build_structured(9);
    const FemSpace space(mesh);
    const AdmissibleSet adm(boundary_band(mesh, 0.1));
    const auto u = interior_random(mesh, adm, rng, 0.0, 1.0);
    const Source f = named_source("x1");
    const auto y = solve_state(space, u, f, kCoeffs);
    const auto data = BoundaryData::from_nodal(mesh, y.values());
    const auto p = solve_adjoint(space, u, y, data, kCoeffs);
    EXPECT_LE(p.vec().cwiseAbs().maxCoeff(), 1e-14);

    const RegularizationParams reg{1e-2, 0.1};
    const std::vector<NodalField> ys{y}, ps{p};
    const auto g = reduced_gradient(space, u, ys, ps, kCoeffs, reg, adm);
    // Independent: 2 alpha eps K u + alpha/eps M (1 - 2u), divided by the lumped mass.
    const auto k = oracle::dense_stiffness(mesh, [](Point) { return 1.0; });
    const auto m = oracle::dense_mass(mesh, [](Point) { return 1.0; });
    for (Index j = 0; j < mesh.num_vertices(); ++j) {
        const auto jj = static_cast<std::size_t>(j);
        double ku = 0.0, mw = 0.0, lump = 0.0;
        for (Index l = 0; l < mesh.num_vertices(); ++l) {
            const auto ll = static_cast<std::size_t>(l);
            ku += k[jj][ll] * u[l];
            mw += m[jj][ll] * (1.0 - 2.0 * u[l]);
            lump += m[jj][ll];
        }
        const double ref = adm.pinned(j) ? 0.0 : (2.0 * reg.alpha * reg.epsilon * ku + reg.alpha / reg.epsilon * mw) / lump;
        EXPECT_NEAR(g[j], ref, 1e-12 * (1.0 + std::abs(ref)));
    }
}

TEST(ReducedGradient, CouplingScalesWithContrast)
{
    std::mt19937_64 rng(12);
    const auto mesh = build_structured(7);
    const FemSpace space(mesh);
    const std::vector<NodalField> ys{NodalField(mesh, oracle::random_values(49, rng, -1, 1))};
    const std::vector<NodalField> ps{NodalField(mesh, oracle::random_values(49, rng, -1, 1))};
    const NodalField u(mesh, oracle::random_values(49, rng));
    const RegularizationParams reg;
    const Vector d1 = objective_derivative(space, u, ys, ps, Coefficients{1.0}, reg);
    const Vector dh = objective_derivative(space, u, ys, ps, Coefficients{0.5}, reg);
    // (grad y . grad p, phi_j) assembled directly.
    Vector c = Vector::Zero(49);
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto corners = mesh.corners(t);
        const double gg = dot(oracle::p1_gradient(corners, oracle::values_on(mesh, t, ys[0].values())),
                              oracle::p1_gradient(corners, oracle::values_on(mesh, t, ps[0].values())));
        for (Index v : mesh.triangle(t).v) c[v] += gg * mesh.area(t) / 3.0;
    }
    EXPECT_LE((dh - d1 - 0.5 * c).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(Minimize, ExactDataFromZeroControlStopsImmediately)
{
    const auto mesh = build_structured(13);
    const FemSpace space(mesh);
    const auto sources = two_sources();
    const auto data = synthetic(InclusionShape::union_of({}), 41);
    const InverseProblem prob{&space, sources, data, kCoeffs, {}, AdmissibleSet(boundary_band(mesh, 0.1))};
    const auto res = minimize(prob, NodalField(mesh, 0.0));
    EXPECT_LE(res.iterations, 1);
    EXPECT_LE(res.stationarity, 1e-6);
    EXPECT_TRUE(res.converged);
    EXPECT_LE(res.u.vec().cwiseAbs().maxCoeff(), 1e-8);
}

class CircleMinimize : public ::testing::Test
{
protected:
    static void SetUpTestSuite()
    {
        mesh_ = new TriMesh(build_structured(17));
        space_ = new FemSpace(*mesh_);
        sources_ = new std::vector<Source>(two_sources());
        data_ = new std::vector<BoundaryData>(synthetic(InclusionShape::circle({0.0, 0.0}, 0.4), 61));
    }
    static void TearDownTestSuite()
    {
        delete data_;
        delete sources_;
        delete space_;
        delete mesh_;
    }
    static InverseProblem problem(RegularizationParams reg = {})
    {
        return {space_, *sources_, *data_, kCoeffs, reg, AdmissibleSet(boundary_band(*mesh_, 0.1))};
    }

    static TriMesh* mesh_;
    static FemSpace* space_;
    static std::vector<Source>* sources_;
    static std::vector<BoundaryData>* data_;
};

TriMesh* CircleMinimize::mesh_ = nullptr;
FemSpace* CircleMinimize::space_ = nullptr;
std::vector<Source>* CircleMinimize::sources_ = nullptr;
std::vector<BoundaryData>* CircleMinimize::data_ = nullptr;

TEST_F(CircleMinimize, ObjectiveNeverIncreases)
{
    const auto res = minimize(problem(), NodalField(*mesh_, 0.0));
    ASSERT_FALSE(res.trace.empty());
    for (std::size_t k = 1; k < res.trace.size(); ++k) EXPECT_LE(res.trace[k].objective, res.trace[k - 1].objective);
    EXPECT_TRUE(problem().admissible.contains(res.u));
    EXPECT_GT(res.u.vec().maxCoeff(), 0.5);
}

TEST_F(CircleMinimize, VariationalInequalityAtSolution)
{
    const auto prob = problem();
    const auto res = minimize(prob, NodalField(*mesh_, 0.0));
    ASSERT_TRUE(res.converged);
    const auto g = reduced_gradient(*space_, res.u, res.states, res.adjoints, kCoeffs, prob.reg, prob.admissible);
    std::mt19937_64 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        NodalField v(*mesh_, oracle::random_values(static_cast<std::size_t>(mesh_->num_vertices()), rng));
        prob.admissible.project(v);
        NodalField diff = v;
        diff.vec() -= res.u.vec();
        const double pairing = lumped_dot(*space_, g.values(), diff.values());
        const double dist = std::sqrt(lumped_dot(*space_, diff.values(), diff.values()));
        EXPECT_GE(pairing, -1e-6 * dist) << "trial " << trial;
    }
}

TEST_F(CircleMinimize, LargeAlphaKeepsZeroControl)
{
    const auto res = minimize(problem({1e3, 1.0 / (16.0 * std::numbers::pi)}), NodalField(*mesh_, 0.0));
    EXPECT_EQ(res.u.vec().cwiseAbs().maxCoeff(), 0.0);
    EXPECT_TRUE(res.converged);
}

TEST_F(CircleMinimize, MisfitTradesOffAgainstAlpha)
{
    double prev_misfit = -1.0;
    for (double alpha : {1e-2, 1e-3, 1e-4}) {
        const auto prob = problem({alpha, 1.0 / (16.0 * std::numbers::pi)});
        const auto res = minimize(prob, NodalField(*mesh_, 0.0));
        const double misfit = res.objective - regularization(*space_, res.u, prob.reg);
        if (prev_misfit >= 0.0) EXPECT_LE(misfit, prev_misfit * (1.0 + 1e-9)) << "alpha " << alpha;
        prev_misfit = misfit;
    }
}
