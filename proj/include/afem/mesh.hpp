#pragma once

#include <afem/errors.hpp>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace afem {

using Index = std::int32_t;

struct Point
{
    double x = 0.0;
    double y = 0.0;

    friend Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
    friend Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
    friend Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
    friend bool operator==(const Point&, const Point&) = default;
};

inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double norm(Point a) { return std::sqrt(dot(a, a)); }
inline Point midpoint(Point a, Point b) { return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y)}; }

/// A triangle with counter-clockwise vertices. Local edge `e` joins
/// v[(e + 1) % 3] and v[(e + 2) % 3], i.e. it is the edge opposite v[e].
/// The refinement edge is the one bisected by newest vertex bisection; the
/// vertex opposite it is the newest vertex.
struct Triangle
{
    std::array<Index, 3> v{};
    int refinement_edge = 0;
};

inline std::array<Index, 2> local_edge(const Triangle& t, int e)
{
    return {t.v[(e + 1) % 3], t.v[(e + 2) % 3]};
}

namespace detail {

inline std::uint64_t next_mesh_id()
{
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

inline std::uint64_t edge_key(Index a, Index b)
{
    if (a > b) std::swap(a, b);
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

} // namespace detail

/**
 * Conforming triangulation of a polygonal domain, immutable after
 * construction.
 *
 * Meshes produced by bisect() remember the mesh they were refined from:
 * `parent()` maps each triangle to the triangle of the previous mesh that
 * contains it, and `new_vertex_parents()` lists, for every vertex created by
 * the refinement, the endpoints of the old edge it bisects. Vertices
 * [0, num_inherited_vertices()) coincide with the previous mesh's vertices.
 */
class TriMesh
{
public:
    TriMesh() = default;

    /// Builds an initial (root) mesh. Triangles must be counter-clockwise.
    static TriMesh from_triangles(std::vector<Point> vertices, std::vector<Triangle> triangles)
    {
        TriMesh m;
        m.vertices_ = std::move(vertices);
        m.triangles_ = std::move(triangles);
        const auto nt = static_cast<Index>(m.triangles_.size());
        m.generation_.assign(m.triangles_.size(), 0);
        m.parent_.resize(m.triangles_.size());
        m.root_.resize(m.triangles_.size());
        for (Index t = 0; t < nt; ++t) {
            m.parent_[t] = t;
            m.root_[t] = t;
            const auto& tri = m.triangles_[t];
            for (Index v : tri.v) {
                if (v < 0 || v >= static_cast<Index>(m.vertices_.size())) {
                    throw InvalidArgument("triangle " + std::to_string(t) + " references vertex out of range");
                }
            }
            if (tri.refinement_edge < 0 || tri.refinement_edge > 2) {
                throw InvalidArgument("refinement edge index must lie in 0..2");
            }
            if (m.signed_area(t) <= 0.0) {
                throw InvalidArgument("triangle " + std::to_string(t) + " is not counter-clockwise");
            }
        }
        m.inherited_vertices_ = static_cast<Index>(m.vertices_.size());
        m.finalize();
        return m;
    }

    std::uint64_t id() const noexcept { return id_; }
    /// Id of the mesh this one was refined from, 0 for root meshes.
    std::uint64_t parent_id() const noexcept { return parent_id_; }

    Index num_vertices() const noexcept { return static_cast<Index>(vertices_.size()); }
    Index num_triangles() const noexcept { return static_cast<Index>(triangles_.size()); }

    std::span<const Point> vertices() const noexcept { return vertices_; }
    std::span<const Triangle> triangles() const noexcept { return triangles_; }
    const Point& vertex(Index i) const { return vertices_[static_cast<std::size_t>(i)]; }
    const Triangle& triangle(Index t) const { return triangles_[static_cast<std::size_t>(t)]; }

    /// Bisection depth of each triangle relative to the initial mesh.
    std::span<const int> generation() const noexcept { return generation_; }
    std::span<const Index> parent() const noexcept { return parent_; }
    std::span<const Index> root() const noexcept { return root_; }

    Index num_inherited_vertices() const noexcept { return inherited_vertices_; }
    std::span<const std::array<Index, 2>> new_vertex_parents() const noexcept { return new_vertex_parents_; }

    /// Edges (vertex pairs, smaller id first) with exactly one incident triangle.
    std::span<const std::array<Index, 2>> boundary_edges() const noexcept { return boundary_edges_; }

    std::array<Point, 3> corners(Index t) const
    {
        const auto& tri = triangle(t);
        return {vertex(tri.v[0]), vertex(tri.v[1]), vertex(tri.v[2])};
    }

    double signed_area(Index t) const
    {
        const auto c = corners(t);
        return 0.5 * cross(c[1] - c[0], c[2] - c[0]);
    }

    double area(Index t) const { return std::abs(signed_area(t)); }

    /// Children (triangle ids in this mesh) of every triangle of the parent mesh.
    std::vector<std::vector<Index>> children_by_parent(Index num_parent_triangles) const
    {
        std::vector<std::vector<Index>> out(static_cast<std::size_t>(num_parent_triangles));
        for (Index t = 0; t < num_triangles(); ++t) {
            out[static_cast<std::size_t>(parent_[t])].push_back(t);
        }
        return out;
    }

private:
    friend TriMesh bisect(const TriMesh&, std::span<const Index>);

    void finalize()
    {
        id_ = detail::next_mesh_id();
        std::unordered_map<std::uint64_t, int> count;
        count.reserve(triangles_.size() * 2);
        for (const auto& tri : triangles_) {
            for (int e = 0; e < 3; ++e) {
                auto [a, b] = local_edge(tri, e);
                ++count[detail::edge_key(a, b)];
            }
        }
        boundary_edges_.clear();
        for (const auto& tri : triangles_) {
            for (int e = 0; e < 3; ++e) {
                auto [a, b] = local_edge(tri, e);
                const int c = count[detail::edge_key(a, b)];
                if (c > 2) throw InvalidArgument("edge shared by more than two triangles");
                if (c == 1) boundary_edges_.push_back({std::min(a, b), std::max(a, b)});
            }
        }
    }

    std::vector<Point> vertices_;
    std::vector<Triangle> triangles_;
    std::vector<int> generation_;
    std::vector<Index> parent_;
    std::vector<Index> root_;
    std::vector<std::array<Index, 2>> new_vertex_parents_;
    std::vector<std::array<Index, 2>> boundary_edges_;
    Index inherited_vertices_ = 0;
    std::uint64_t id_ = 0;
    std::uint64_t parent_id_ = 0;
};

/**
 * Structured triangulation of (-1,1)^2 with n vertices per axis.
 *
 * Each grid cell is split along its (-1,-1)->(1,1) diagonal; the diagonal is
 * the refinement edge of both halves, which makes the initial labelling
 * compatible for newest vertex bisection. Vertex (i, j) has id j * n + i.
 */
inline TriMesh build_structured(int n)
{
    if (n < 2) throw InvalidArgument("structured mesh needs n >= 2, got " + std::to_string(n));
    std::vector<Point> vertices;
    vertices.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
    const double m = n - 1;
    for (int j = 0; j < n; ++j) {
        for (int i = 0; i < n; ++i) {
            vertices.push_back({(2.0 * i - m) / m, (2.0 * j - m) / m});
        }
    }
    std::vector<Triangle> triangles;
    triangles.reserve(2 * static_cast<std::size_t>(n - 1) * static_cast<std::size_t>(n - 1));
    auto id = [n](int i, int j) { return static_cast<Index>(j * n + i); };
    for (int j = 0; j + 1 < n; ++j) {
        for (int i = 0; i + 1 < n; ++i) {
            const Index a = id(i, j), b = id(i + 1, j), c = id(i + 1, j + 1), d = id(i, j + 1);
            triangles.push_back({{a, b, c}, 1}); // right angle at b
            triangles.push_back({{a, c, d}, 2}); // right angle at d
        }
    }
    return TriMesh::from_triangles(std::move(vertices), std::move(triangles));
}

/// Per-edge adjacency: each interior edge knows both incident triangles and a
/// fixed unit normal pointing out of `t_plus`; boundary edges have
/// `t_minus == -1` and the outward normal.
struct Edge
{
    std::array<Index, 2> v{};
    Index t_plus = -1;
    Index t_minus = -1;
    Point normal{};
    double length = 0.0;

    bool on_boundary() const noexcept { return t_minus < 0; }
};

struct EdgeTable
{
    std::vector<Edge> edges;
    /// tri_edges[t][e] is the edge id of local edge e of triangle t.
    std::vector<std::array<Index, 3>> tri_edges;
    Index num_interior = 0;
    Index num_boundary = 0;
};

inline EdgeTable edge_tables(const TriMesh& mesh)
{
    EdgeTable table;
    table.tri_edges.resize(static_cast<std::size_t>(mesh.num_triangles()));
    std::unordered_map<std::uint64_t, Index> lookup;
    lookup.reserve(static_cast<std::size_t>(mesh.num_triangles()) * 2);
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        const auto& tri = mesh.triangle(t);
        for (int e = 0; e < 3; ++e) {
            auto [a, b] = local_edge(tri, e);
            auto [it, inserted] = lookup.try_emplace(detail::edge_key(a, b), static_cast<Index>(table.edges.size()));
            if (inserted) {
                Edge edge;
                edge.v = {a, b};
                edge.t_plus = t;
                const Point d = mesh.vertex(b) - mesh.vertex(a);
                edge.length = norm(d);
                // Counter-clockwise traversal keeps the interior on the left.
                edge.normal = (1.0 / edge.length) * Point{d.y, -d.x};
                table.edges.push_back(edge);
            } else {
                table.edges[static_cast<std::size_t>(it->second)].t_minus = t;
            }
            table.tri_edges[static_cast<std::size_t>(t)][static_cast<std::size_t>(e)] = it->second;
        }
    }
    for (const auto& e : table.edges) {
        if (e.on_boundary()) ++table.num_boundary;
        else ++table.num_interior;
    }
    return table;
}

/**
 * Newest vertex bisection of the marked triangles plus the closure needed to
 * keep the mesh conforming.
 *
 * The closure is computed on edges: marking a triangle marks its refinement
 * edge, and any triangle that owns a marked edge must also have its own
 * refinement edge marked. Each triangle is then bisected recursively along
 * marked refinement edges, so it is split into 2, 3 or 4 children. New
 * vertices are always midpoints of edges of the input mesh.
 */
inline TriMesh bisect(const TriMesh& mesh, std::span<const Index> marked)
{
    const auto table = edge_tables(mesh);
    const auto num_edges = table.edges.size();
    std::vector<char> edge_marked(num_edges, 0);
    std::vector<Index> stack;

    auto refinement_edge_of = [&](Index t) {
        const auto& tri = mesh.triangle(t);
        return table.tri_edges[static_cast<std::size_t>(t)][static_cast<std::size_t>(tri.refinement_edge)];
    };
    auto mark_edge = [&](Index e) {
        if (edge_marked[static_cast<std::size_t>(e)]) return;
        edge_marked[static_cast<std::size_t>(e)] = 1;
        stack.push_back(e);
    };

    for (Index t : marked) {
        if (t < 0 || t >= mesh.num_triangles()) {
            throw InvalidArgument("marked triangle id " + std::to_string(t) + " out of range");
        }
        mark_edge(refinement_edge_of(t));
    }
    while (!stack.empty()) {
        const Index e = stack.back();
        stack.pop_back();
        const auto& edge = table.edges[static_cast<std::size_t>(e)];
        for (Index t : {edge.t_plus, edge.t_minus}) {
            if (t >= 0) mark_edge(refinement_edge_of(t));
        }
    }

    TriMesh out;
    out.vertices_.assign(mesh.vertices().begin(), mesh.vertices().end());
    out.inherited_vertices_ = mesh.num_vertices();
    std::unordered_map<std::uint64_t, Index> midpoint_of;
    for (std::size_t e = 0; e < num_edges; ++e) {
        if (!edge_marked[e]) continue;
        const auto [a, b] = table.edges[e].v;
        const auto id = static_cast<Index>(out.vertices_.size());
        out.vertices_.push_back(midpoint(mesh.vertex(a), mesh.vertex(b)));
        out.new_vertex_parents_.push_back({std::min(a, b), std::max(a, b)});
        midpoint_of.emplace(detail::edge_key(a, b), id);
    }

    out.triangles_.reserve(mesh.triangles().size() + 2 * midpoint_of.size());
    // Recursion depth is at most 2: children only inherit edges of the parent.
    auto split = [&](auto&& self, const Triangle& tri, Index parent, int generation) -> void {
        const int e = tri.refinement_edge;
        const Index apex = tri.v[static_cast<std::size_t>(e)];
        const Index p = tri.v[static_cast<std::size_t>((e + 1) % 3)];
        const Index q = tri.v[static_cast<std::size_t>((e + 2) % 3)];
        const auto it = midpoint_of.find(detail::edge_key(p, q));
        if (it == midpoint_of.end()) {
            out.triangles_.push_back(tri);
            out.generation_.push_back(generation);
            out.parent_.push_back(parent);
            out.root_.push_back(mesh.root()[static_cast<std::size_t>(parent)]);
            return;
        }
        const Index m = it->second;
        self(self, Triangle{{m, apex, p}, 0}, parent, generation + 1);
        self(self, Triangle{{m, q, apex}, 0}, parent, generation + 1);
    };
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        split(split, mesh.triangle(t), t, mesh.generation()[static_cast<std::size_t>(t)]);
    }
    out.parent_id_ = mesh.id();
    out.finalize();
    return out;
}

/// Bisects every triangle once.
inline TriMesh bisect_all(const TriMesh& mesh)
{
    std::vector<Index> all(static_cast<std::size_t>(mesh.num_triangles()));
    for (Index t = 0; t < mesh.num_triangles(); ++t) all[static_cast<std::size_t>(t)] = t;
    return bisect(mesh, all);
}

/// Piecewise constant meshsize h_T = |T|^{1/2}.
struct MeshSizeMap
{
    std::vector<double> h;
};

inline MeshSizeMap meshsize(const TriMesh& mesh)
{
    MeshSizeMap map;
    map.h.resize(static_cast<std::size_t>(mesh.num_triangles()));
    for (Index t = 0; t < mesh.num_triangles(); ++t) map.h[static_cast<std::size_t>(t)] = std::sqrt(mesh.area(t));
    return map;
}

/// Distance from a point of the closed square (-1,1)^2 to its boundary.
inline double distance_to_boundary(Point p)
{
    return std::max(0.0, std::min(1.0 - std::abs(p.x), 1.0 - std::abs(p.y)));
}

/// Vertices within distance d0 of the boundary, where the control is pinned to 0.
struct BandMask
{
    std::vector<Index> zero_nodes;
    std::vector<std::uint8_t> is_zero;

    bool contains(Index v) const { return is_zero[static_cast<std::size_t>(v)] != 0; }
};

inline BandMask boundary_band(const TriMesh& mesh, double d0)
{
    if (!(d0 >= 0.0)) throw InvalidArgument("band width d0 must be nonnegative");
    // Absorbs the rounding of grid coordinates such as 1 - 0.9.
    constexpr double slack = 1e-12;
    BandMask band;
    band.is_zero.assign(static_cast<std::size_t>(mesh.num_vertices()), 0);
    for (Index v = 0; v < mesh.num_vertices(); ++v) {
        if (distance_to_boundary(mesh.vertex(v)) <= d0 + slack) {
            band.is_zero[static_cast<std::size_t>(v)] = 1;
            band.zero_nodes.push_back(v);
        }
    }
    return band;
}

} // namespace afem
