#pragma once

#include <afem/boundary.hpp>
#include <afem/errors.hpp>
#include <afem/mesh.hpp>
#include <afem/quadrature.hpp>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace afem {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;

/// One value per mesh vertex of a continuous P1 function.
class NodalField
{
public:
    NodalField() = default;

    explicit NodalField(const TriMesh& mesh, double value = 0.0)
        : mesh_id_(mesh.id()), values_(static_cast<std::size_t>(mesh.num_vertices()), value)
    {
    }

    NodalField(const TriMesh& mesh, std::vector<double> values) : mesh_id_(mesh.id()), values_(std::move(values))
    {
        if (values_.size() != static_cast<std::size_t>(mesh.num_vertices())) {
            throw InvalidArgument("nodal field length " + std::to_string(values_.size()) +
                                  " does not match vertex count " + std::to_string(mesh.num_vertices()));
        }
        for (double v : values_) {
            if (!std::isfinite(v)) throw InvalidArgument("nodal field contains non-finite values");
        }
    }

    NodalField(const TriMesh& mesh, const Vector& values)
        : NodalField(mesh, std::vector<double>(values.data(), values.data() + values.size()))
    {
    }

    std::uint64_t mesh_id() const noexcept { return mesh_id_; }
    std::size_t size() const noexcept { return values_.size(); }
    double operator[](Index i) const { return values_[static_cast<std::size_t>(i)]; }
    double& operator[](Index i) { return values_[static_cast<std::size_t>(i)]; }
    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }

    Eigen::Map<const Vector> vec() const { return {values_.data(), static_cast<Eigen::Index>(values_.size())}; }
    Eigen::Map<Vector> vec() { return {values_.data(), static_cast<Eigen::Index>(values_.size())}; }

    bool belongs_to(const TriMesh& mesh) const noexcept { return mesh_id_ == mesh.id(); }

private:
    std::uint64_t mesh_id_ = 0;
    std::vector<double> values_;
};

inline NodalField interpolate_function(const TriMesh& mesh, const std::function<double(Point)>& fn)
{
    std::vector<double> v(static_cast<std::size_t>(mesh.num_vertices()));
    for (Index i = 0; i < mesh.num_vertices(); ++i) v[static_cast<std::size_t>(i)] = fn(mesh.vertex(i));
    return NodalField(mesh, std::move(v));
}

/// Conductivity a(u) = 1 - (1 - sigma) u and reaction weight b(u) = 1 - u.
struct Coefficients
{
    double sigma = 1e-4;

    double a(double u) const noexcept { return 1.0 - (1.0 - sigma) * u; }
    double b(double u) const noexcept { return 1.0 - u; }
};

/// Affine map data of one triangle: corners, area and gradients of the
/// barycentric coordinates.
struct ElementGeometry
{
    std::array<Point, 3> x{};
    double area = 0.0;
    std::array<Point, 3> grad{};

    Point map(const std::array<double, 3>& bary) const
    {
        return {bary[0] * x[0].x + bary[1] * x[1].x + bary[2] * x[2].x,
                bary[0] * x[0].y + bary[1] * x[1].y + bary[2] * x[2].y};
    }
};

inline ElementGeometry element_geometry(const TriMesh& mesh, Index t)
{
    ElementGeometry g;
    g.x = mesh.corners(t);
    const double two_area = cross(g.x[1] - g.x[0], g.x[2] - g.x[0]);
    g.area = 0.5 * two_area;
    for (int i = 0; i < 3; ++i) {
        const Point& p = g.x[static_cast<std::size_t>((i + 1) % 3)];
        const Point& q = g.x[static_cast<std::size_t>((i + 2) % 3)];
        g.grad[static_cast<std::size_t>(i)] = {(p.y - q.y) / two_area, (q.x - p.x) / two_area};
    }
    return g;
}

inline double interpolate_local(const std::array<double, 3>& nodal, const std::array<double, 3>& bary)
{
    return nodal[0] * bary[0] + nodal[1] * bary[1] + nodal[2] * bary[2];
}

inline std::array<double, 3> local_values(const TriMesh& mesh, Index t, std::span<const double> field)
{
    const auto& tri = mesh.triangle(t);
    return {field[static_cast<std::size_t>(tri.v[0])], field[static_cast<std::size_t>(tri.v[1])],
            field[static_cast<std::size_t>(tri.v[2])]};
}

inline Point local_gradient(const ElementGeometry& g, const std::array<double, 3>& nodal)
{
    return nodal[0] * g.grad[0] + nodal[1] * g.grad[1] + nodal[2] * g.grad[2];
}

/**
 * Right-hand side of the state equation: either an analytic function
 * evaluated at quadrature points, or a nodal field interpolated in P1.
 */
class Source
{
public:
    using Function = std::function<double(Point)>;

    Source(std::string name, Function fn) : name_(std::move(name)), fn_(std::move(fn)) {}

    static Source constant(double c)
    {
        return Source("const:" + std::to_string(c), [c](Point) { return c; });
    }

    static Source nodal(NodalField field)
    {
        Source s("nodal", {});
        s.nodal_ = std::make_shared<const NodalField>(std::move(field));
        return s;
    }

    const std::string& name() const noexcept { return name_; }

    double operator()(const TriMesh& mesh, Index t, const std::array<double, 3>& bary, Point x) const
    {
        if (nodal_) {
            if (!nodal_->belongs_to(mesh)) throw InvalidArgument("nodal source lives on a different mesh");
            return interpolate_local(local_values(mesh, t, nodal_->values()), bary);
        }
        return fn_(x);
    }

    double at_vertex(const TriMesh& mesh, Index v) const
    {
        if (nodal_) return (*nodal_)[v];
        return fn_(mesh.vertex(v));
    }

private:
    std::string name_;
    Function fn_;
    std::shared_ptr<const NodalField> nodal_;
};

/// Symmetric sparse matrix with its right-hand side.
struct SparseSpdSystem
{
    SparseMatrix matrix;
    Vector rhs;
};

/**
 * P1 space on one mesh. Caches element geometry, the sparsity pattern of the
 * global matrices and the lumped mass. Holds a reference to the mesh, which
 * must outlive it.
 */
class FemSpace
{
public:
    explicit FemSpace(const TriMesh& mesh) : mesh_(&mesh)
    {
        const auto nt = static_cast<std::size_t>(mesh.num_triangles());
        const auto nv = static_cast<Eigen::Index>(mesh.num_vertices());
        geometry_.reserve(nt);
        lumped_mass_.assign(static_cast<std::size_t>(nv), 0.0);
        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(9 * nt);
        for (Index t = 0; t < mesh.num_triangles(); ++t) {
            geometry_.push_back(element_geometry(mesh, t));
            const auto& tri = mesh.triangle(t);
            for (int i = 0; i < 3; ++i) {
                lumped_mass_[static_cast<std::size_t>(tri.v[i])] += geometry_.back().area / 3.0;
                for (int j = 0; j < 3; ++j) triplets.emplace_back(tri.v[i], tri.v[j], 0.0);
            }
        }
        pattern_.resize(nv, nv);
        pattern_.setFromTriplets(triplets.begin(), triplets.end());
        pattern_.makeCompressed();

        slots_.resize(nt);
        const auto* outer = pattern_.outerIndexPtr();
        const auto* inner = pattern_.innerIndexPtr();
        for (Index t = 0; t < mesh.num_triangles(); ++t) {
            const auto& tri = mesh.triangle(t);
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) {
                    const int col = tri.v[j];
                    const int row = tri.v[i];
                    const int* begin = inner + outer[col];
                    const int* end = inner + outer[col + 1];
                    const int* it = std::lower_bound(begin, end, row);
                    slots_[static_cast<std::size_t>(t)][static_cast<std::size_t>(3 * i + j)] =
                        static_cast<int>(it - inner);
                }
            }
        }
    }

    const TriMesh& mesh() const noexcept { return *mesh_; }
    Index num_dofs() const noexcept { return mesh_->num_vertices(); }
    const ElementGeometry& geometry(Index t) const { return geometry_[static_cast<std::size_t>(t)]; }
    const SparseMatrix& pattern() const noexcept { return pattern_; }
    std::span<const double> lumped_mass() const noexcept { return lumped_mass_; }

    SparseMatrix zero_matrix() const
    {
        SparseMatrix m = pattern_;
        std::fill(m.valuePtr(), m.valuePtr() + m.nonZeros(), 0.0);
        return m;
    }

    void add_local(SparseMatrix& m, Index t, const std::array<std::array<double, 3>, 3>& local) const
    {
        double* values = m.valuePtr();
        const auto& slot = slots_[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) values[slot[3 * i + j]] += local[i][j];
        }
    }

private:
    const TriMesh* mesh_;
    std::vector<ElementGeometry> geometry_;
    SparseMatrix pattern_;
    std::vector<std::array<int, 9>> slots_;
    std::vector<double> lumped_mass_;
};

/// Sparse LDL^T with singularity detection on the pivots.
class SpdSolver
{
public:
    explicit SpdSolver(const SparseMatrix& pattern) { ldlt_.analyzePattern(pattern); }

    void factorize(const SparseMatrix& a)
    {
        ldlt_.factorize(a);
        if (ldlt_.info() != Eigen::Success) throw SingularSystem("sparse LDL^T factorization failed");
        const Vector d = ldlt_.vectorD();
        const double dmax = d.cwiseAbs().maxCoeff();
        if (!(d.minCoeff() > 1e-13 * dmax)) {
            throw SingularSystem("matrix is singular or indefinite (pivot ratio " +
                                 std::to_string(d.minCoeff() / dmax) + ")");
        }
    }

    /// Solves a x = b aiming at the given relative residual, with iterative
    /// refinement. Ill-conditioning may leave the result slightly above the
    /// target; only a residual above `kStallTolerance` is an error.
    Vector solve(const SparseMatrix& a, const Vector& b, double rel_tol = 1e-10) const
    {
        static constexpr double kStallTolerance = 1e-6;
        const double bnorm = b.norm();
        if (bnorm == 0.0) return Vector::Zero(b.size());
        Vector x = ldlt_.solve(b);
        double best = (b - a * x).norm();
        for (int sweep = 0; sweep < 5 && best > rel_tol * bnorm; ++sweep) {
            const Vector trial = x + ldlt_.solve(b - a * x);
            const double rn = (b - a * trial).norm();
            if (!(rn < best)) break;
            x = trial;
            best = rn;
        }
        const double rel = best / bnorm;
        if (!(rel <= std::max(rel_tol, kStallTolerance))) {
            throw NumericalError("linear solve stalled at relative residual " + std::to_string(rel));
        }
        return x;
    }

private:
    Eigen::SimplicialLDLT<SparseMatrix> ldlt_;
};

/// Galerkin residual F(y)_i = (a(u) grad y, grad phi_i) + (b(u) y^3, phi_i) - (f, phi_i).
inline Vector state_residual(const FemSpace& space, const NodalField& u, const NodalField& y, const Source& f,
                             const Coefficients& coeffs)
{
    const auto& mesh = space.mesh();
    const auto& rule = triangle_rule_degree5();
    Vector r = Vector::Zero(space.num_dofs());
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& g = space.geometry(t);
        const auto& tri = mesh.triangle(t);
        const auto ul = local_values(mesh, t, u.values());
        const auto yl = local_values(mesh, t, y.values());
        const double a_mean = coeffs.a((ul[0] + ul[1] + ul[2]) / 3.0);
        const Point grad_y = local_gradient(g, yl);
        std::array<double, 3> local{};
        for (std::size_t i = 0; i < 3; ++i) local[i] = g.area * a_mean * dot(grad_y, g.grad[i]);
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const auto& lam = rule.points[q];
            const double w = 2.0 * g.area * rule.weights[q];
            const double uq = interpolate_local(ul, lam);
            const double yq = interpolate_local(yl, lam);
            const double fq = f(mesh, t, lam, g.map(lam));
            const double val = w * (coeffs.b(uq) * yq * yq * yq - fq);
            for (std::size_t i = 0; i < 3; ++i) local[i] += val * lam[i];
        }
        for (std::size_t i = 0; i < 3; ++i) r[tri.v[i]] += local[i];
    }
    return r;
}

/// Derivative of the state residual in y: stiffness with a(u) plus the mass
/// matrix weighted by 3 b(u) y^2. This is also the adjoint operator.
inline SparseMatrix assemble_state_jacobian(const FemSpace& space, const NodalField& u, const NodalField& y,
                                            const Coefficients& coeffs)
{
    const auto& mesh = space.mesh();
    const auto& rule = triangle_rule_degree5();
    SparseMatrix m = space.zero_matrix();
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& g = space.geometry(t);
        const auto ul = local_values(mesh, t, u.values());
        const auto yl = local_values(mesh, t, y.values());
        const double a_mean = coeffs.a((ul[0] + ul[1] + ul[2]) / 3.0);
        std::array<std::array<double, 3>, 3> local{};
        for (std::size_t i = 0; i < 3; ++i) {
            for (std::size_t j = 0; j < 3; ++j) local[i][j] = g.area * a_mean * dot(g.grad[i], g.grad[j]);
        }
        for (std::size_t q = 0; q < rule.size(); ++q) {
            const auto& lam = rule.points[q];
            const double yq = interpolate_local(yl, lam);
            const double c = 2.0 * g.area * rule.weights[q] * 3.0 * coeffs.b(interpolate_local(ul, lam)) * yq * yq;
            for (std::size_t i = 0; i < 3; ++i) {
                for (std::size_t j = 0; j < 3; ++j) local[i][j] += c * lam[i] * lam[j];
            }
        }
        space.add_local(m, t, local);
    }
    return m;
}

struct NewtonOptions
{
    double tolerance = 1e-10; // max-norm of the Galerkin residual
    int max_iterations = 50;
    int max_halvings = 30;
};

struct NewtonReport
{
    int iterations = 0;
    double residual = 0.0;
};

namespace detail {

inline double integral_of_b(const FemSpace& space, const NodalField& u, const Coefficients& coeffs)
{
    double total = 0.0, area = 0.0;
    for (Index t = 0; t < space.mesh().num_triangles(); ++t) {
        const auto ul = local_values(space.mesh(), t, u.values());
        const double a = space.geometry(t).area;
        total += a * coeffs.b((ul[0] + ul[1] + ul[2]) / 3.0);
        area += a;
    }
    return total / area;
}

inline void check_field(const FemSpace& space, const NodalField& field, const char* name)
{
    if (!field.belongs_to(space.mesh())) {
        throw InvalidArgument(std::string(name) + " does not belong to the mesh of the FE space");
    }
}

} // namespace detail

/// Default Newton start: nodal cube root of the source, clamped to [-10, 10].
inline NodalField initial_state_guess(const TriMesh& mesh, const Source& f)
{
    NodalField y(mesh);
    for (Index v = 0; v < mesh.num_vertices(); ++v) y[v] = std::clamp(std::cbrt(f.at_vertex(mesh, v)), -10.0, 10.0);
    return y;
}

/**
 * Solves the discrete semilinear state problem by damped Newton iteration.
 * Step halving enforces a decrease of the Euclidean residual norm;
 * convergence is declared on the residual max-norm.
 */
inline NodalField solve_state(const FemSpace& space, const NodalField& u, const Source& f,
                              const Coefficients& coeffs, const NewtonOptions& options = {},
                              const NodalField* initial = nullptr, NewtonReport* report = nullptr)
{
    const auto& mesh = space.mesh();
    detail::check_field(space, u, "control");
    if (detail::integral_of_b(space, u, coeffs) <= 1e-14) {
        throw SingularSystem("b(u) vanishes identically: pure Neumann operator without reaction term");
    }
    NodalField y = initial != nullptr ? *initial : initial_state_guess(mesh, f);
    detail::check_field(space, y, "initial state");

    SpdSolver solver(space.pattern());
    Vector r = state_residual(space, u, y, f, coeffs);
    double rnorm = r.norm();
    for (int it = 0; it <= options.max_iterations; ++it) {
        const double rmax = r.cwiseAbs().maxCoeff();
        if (report != nullptr) *report = {it, rmax};
        if (rmax <= options.tolerance) return y;
        if (it == options.max_iterations) break;

        const SparseMatrix jac = assemble_state_jacobian(space, u, y, coeffs);
        solver.factorize(jac);
        const Vector step = solver.solve(jac, -r, 1e-12);

        double lambda = 1.0;
        bool accepted = false;
        NodalField trial = y;
        for (int h = 0; h <= options.max_halvings; ++h) {
            trial.vec() = y.vec() + lambda * step;
            Vector rt = state_residual(space, u, trial, f, coeffs);
            const double tnorm = rt.norm();
            if (std::isfinite(tnorm) && tnorm < rnorm) {
                y = trial;
                r = std::move(rt);
                rnorm = tnorm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            throw SolverDiverged("Newton line search failed to reduce the state residual",
                                 r.cwiseAbs().maxCoeff());
        }
    }
    throw SolverDiverged("Newton iteration did not converge in " + std::to_string(options.max_iterations) +
                             " iterations",
                         r.cwiseAbs().maxCoeff());
}

/// Boundary load vector (g, psi_j)_{L2(boundary)} for g = y - y^delta.
inline Vector boundary_load(const FemSpace& space, const NodalField& y, const BoundaryData& ydelta)
{
    const auto& mesh = space.mesh();
    Vector b = Vector::Zero(space.num_dofs());
    for_each_boundary_gauss_point(mesh, &ydelta, [&](std::size_t, Index va, Index vb, double t, double s, double w) {
        const double diff = (1.0 - t) * y[va] + t * y[vb] - ydelta.at(s);
        b[va] += w * diff * (1.0 - t);
        b[vb] += w * diff * t;
    });
    return b;
}

/// Adjoint: (a(u) grad p, grad psi) + 3 (b(u) y^2 p, psi) = (y - y^delta, psi)_{L2(boundary)}.
inline NodalField solve_adjoint(const FemSpace& space, const NodalField& u, const NodalField& y,
                                const BoundaryData& ydelta, const Coefficients& coeffs)
{
    const auto& mesh = space.mesh();
    detail::check_field(space, u, "control");
    detail::check_field(space, y, "state");
    const Vector rhs = boundary_load(space, y, ydelta);
    if (rhs.norm() == 0.0) return NodalField(mesh, 0.0);
    const SparseMatrix a = assemble_state_jacobian(space, u, y, coeffs);
    SpdSolver solver(space.pattern());
    solver.factorize(a);
    return NodalField(mesh, solver.solve(a, rhs, 1e-10));
}

/// Half the squared L2(boundary) distance between the trace of y and the data.
inline double boundary_misfit(const TriMesh& mesh, const NodalField& y, const BoundaryData& ydelta)
{
    double total = 0.0;
    for_each_boundary_gauss_point(mesh, &ydelta, [&](std::size_t, Index va, Index vb, double t, double s, double w) {
        const double diff = (1.0 - t) * y[va] + t * y[vb] - ydelta.at(s);
        total += w * diff * diff;
    });
    return 0.5 * total;
}

/// Exact P1 prolongation onto a mesh produced by bisect(from, ...).
inline NodalField transfer(const NodalField& field, const TriMesh& from, const TriMesh& to)
{
    if (!field.belongs_to(from)) throw InvalidArgument("field does not belong to the source mesh");
    if (to.parent_id() != from.id()) throw InvalidArgument("target mesh is not a refinement of the source mesh");
    std::vector<double> v(static_cast<std::size_t>(to.num_vertices()));
    std::copy(field.values().begin(), field.values().end(), v.begin());
    const auto parents = to.new_vertex_parents();
    for (std::size_t k = 0; k < parents.size(); ++k) {
        v[static_cast<std::size_t>(to.num_inherited_vertices()) + k] =
            0.5 * (field[parents[k][0]] + field[parents[k][1]]);
    }
    return NodalField(to, std::move(v));
}

/// Locates points in a mesh via a uniform bucket grid over triangle bounding boxes.
class PointLocator
{
public:
    explicit PointLocator(const TriMesh& mesh) : mesh_(&mesh)
    {
        lo_ = hi_ = mesh.num_vertices() > 0 ? mesh.vertex(0) : Point{};
        for (const auto& p : mesh.vertices()) {
            lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y)};
            hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y)};
        }
        cells_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.num_triangles()))));
        buckets_.resize(static_cast<std::size_t>(cells_ * cells_));
        for (Index t = 0; t < mesh.num_triangles(); ++t) {
            const auto c = mesh.corners(t);
            const auto [i0, j0] = cell_of({std::min({c[0].x, c[1].x, c[2].x}), std::min({c[0].y, c[1].y, c[2].y})});
            const auto [i1, j1] = cell_of({std::max({c[0].x, c[1].x, c[2].x}), std::max({c[0].y, c[1].y, c[2].y})});
            for (int j = j0; j <= j1; ++j) {
                for (int i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j * cells_ + i)].push_back(t);
            }
        }
    }

    /// Triangle containing p and its barycentric coordinates.
    std::pair<Index, std::array<double, 3>> locate(Point p) const
    {
        const auto [i, j] = cell_of(p);
        Index best = -1;
        double best_min = -std::numeric_limits<double>::infinity();
        std::array<double, 3> best_bary{};
        for (Index t : buckets_[static_cast<std::size_t>(j * cells_ + i)]) {
            const auto c = mesh_->corners(t);
            const double area2 = cross(c[1] - c[0], c[2] - c[0]);
            const std::array<double, 3> bary = {cross(c[1] - p, c[2] - p) / area2, cross(c[2] - p, c[0] - p) / area2,
                                                cross(c[0] - p, c[1] - p) / area2};
            const double m = std::min({bary[0], bary[1], bary[2]});
            if (m > best_min) {
                best_min = m;
                best = t;
                best_bary = bary;
            }
            if (m >= 0.0) break;
        }
        if (best < 0 || best_min < -1e-9) throw InvalidArgument("point lies outside the mesh");
        return {best, best_bary};
    }

private:
    std::pair<int, int> cell_of(Point p) const
    {
        auto idx = [this](double v, double lo, double hi) {
            const double span = hi - lo;
            int k = span > 0.0 ? static_cast<int>((v - lo) / span * cells_) : 0;
            return std::clamp(k, 0, cells_ - 1);
        };
        return {idx(p.x, lo_.x, hi_.x), idx(p.y, lo_.y, hi_.y)};
    }

    const TriMesh* mesh_;
    Point lo_{}, hi_{};
    int cells_ = 1;
    std::vector<std::vector<Index>> buckets_;
};

/// P1 interpolation of a field onto the vertices of an unrelated mesh of the same domain.
inline NodalField interpolate(const NodalField& field, const TriMesh& from, const TriMesh& to)
{
    if (!field.belongs_to(from)) throw InvalidArgument("field does not belong to the source mesh");
    if (to.parent_id() == from.id()) return transfer(field, from, to);
    const PointLocator locator(from);
    std::vector<double> v(static_cast<std::size_t>(to.num_vertices()));
    for (Index i = 0; i < to.num_vertices(); ++i) {
        const auto [t, bary] = locator.locate(to.vertex(i));
        v[static_cast<std::size_t>(i)] = interpolate_local(local_values(from, t, field.values()), bary);
    }
    return NodalField(to, std::move(v));
}

} // namespace afem
