#include "oracles.hpp"

#include <afem/mesh.hpp>

#include <gtest/gtest.h>

#include <map>
#include <numeric>
#include <random>
#include <set>

using namespace afem;

namespace {

TriMesh unit_right_triangle()
{
    // Right angle at the origin (local vertex 2); the hypotenuse is the refinement edge.
    return TriMesh::from_triangles({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}, {{{1, 2, 0}, 2}});
}

std::map<Index, std::set<std::array<long, 3>>> classes_by_root(const TriMesh& mesh)
{
    std::map<Index, std::set<std::array<long, 3>>> out;
    for (Index t = 0; t < mesh.num_triangles(); ++t) {
        out[mesh.root()[static_cast<std::size_t>(t)]].insert(oracle::shape_key(mesh.corners(t)));
    }
    return out;
}

} // namespace

TEST(BuildStructured, TwoByTwoIsOneSplitSquare)
{
    const auto m = build_structured(2);
    EXPECT_EQ(m.num_vertices(), 4);
    ASSERT_EQ(m.num_triangles(), 2);
    for (Index t = 0; t < 2; ++t) EXPECT_DOUBLE_EQ(m.area(t), 2.0);
}

TEST(BuildStructured, Counts)
{
    const auto m = build_structured(21);
    EXPECT_EQ(m.num_vertices(), 441);
    EXPECT_EQ(m.num_triangles(), 800);
    EXPECT_EQ(build_structured(401).num_vertices(), 160801);
}

TEST(BuildStructured, RejectsTinyGrids)
{
    EXPECT_THROW(build_structured(1), InvalidArgument);
    EXPECT_THROW(build_structured(-3), InvalidArgument);
}

TEST(BuildStructured, RefinementEdgeIsHypotenuse)
{
    const auto m = build_structured(6);
    for (Index t = 0; t < m.num_triangles(); ++t) {
        const auto& tri = m.triangle(t);
        const auto [a, b] = local_edge(tri, tri.refinement_edge);
        const double hyp = norm(m.vertex(a) - m.vertex(b));
        for (int e = 0; e < 3; ++e) {
            const auto [p, q] = local_edge(tri, e);
            EXPECT_LE(norm(m.vertex(p) - m.vertex(q)), hyp + 1e-15);
        }
        EXPECT_GT(m.signed_area(t), 0.0);
    }
}

TEST(Bisect, MarkedRightTriangleHalves)
{
    const auto m = unit_right_triangle();
    const std::vector<Index> marked{0};
    const auto r = bisect(m, marked);
    ASSERT_EQ(r.num_triangles(), 2);
    EXPECT_EQ(r.num_vertices(), 4);
    for (Index t = 0; t < 2; ++t) EXPECT_DOUBLE_EQ(r.area(t), 0.25);
    EXPECT_EQ(r.vertex(3), (Point{0.5, 0.5}));
}

TEST(Bisect, ClosureRefinesNeighbour)
{
    const auto m = build_structured(3);
    ASSERT_EQ(m.num_triangles(), 8);
    const std::vector<Index> marked{0};
    const auto r = bisect(m, marked);
    EXPECT_TRUE(oracle::conforming(r));
    // Triangle 0 shares its diagonal with triangle 1, so both are split.
    const auto kids = r.children_by_parent(m.num_triangles());
    EXPECT_GE(kids[0].size(), 2u);
    EXPECT_GE(kids[1].size(), 2u);
    EXPECT_EQ(kids[5].size(), 1u);
}

TEST(Bisect, RejectsOutOfRangeIds)
{
    const auto m = build_structured(3);
    const std::vector<Index> bad{8};
    EXPECT_THROW(bisect(m, bad), InvalidArgument);
}

TEST(Bisect, TenUniformLevelsKeepFourShapes)
{
    TriMesh m = unit_right_triangle();
    std::set<std::array<long, 3>> shapes;
    for (int level = 0; level < 10; ++level) {
        m = bisect_all(m);
        for (Index t = 0; t < m.num_triangles(); ++t) shapes.insert(oracle::shape_key(m.corners(t)));
    }
    EXPECT_LE(shapes.size(), 4u);
    EXPECT_EQ(m.num_triangles(), 1024);
}

TEST(Bisect, ProvenanceRecordsMidpoints)
{
    const auto m = build_structured(4);
    const std::vector<Index> marked{3, 7, 11};
    const auto r = bisect(m, marked);
    ASSERT_EQ(r.num_inherited_vertices(), m.num_vertices());
    for (Index v = 0; v < m.num_vertices(); ++v) EXPECT_EQ(r.vertex(v), m.vertex(v));
    const auto parents = r.new_vertex_parents();
    ASSERT_EQ(static_cast<Index>(parents.size()), r.num_vertices() - m.num_vertices());
    for (std::size_t k = 0; k < parents.size(); ++k) {
        const Point mid = midpoint(m.vertex(parents[k][0]), m.vertex(parents[k][1]));
        EXPECT_EQ(r.vertex(m.num_vertices() + static_cast<Index>(k)), mid);
    }
    EXPECT_EQ(r.parent_id(), m.id());
}

TEST(Meshsize, Definition)
{
    const auto m = build_structured(2);
    for (double h : meshsize(m).h) EXPECT_DOUBLE_EQ(h, std::sqrt(2.0));
    const auto tri = TriMesh::from_triangles({{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}}, {{{0, 1, 2}, 0}});
    EXPECT_DOUBLE_EQ(meshsize(tri).h[0], std::sqrt(0.5));
}

TEST(Meshsize, ChildHasHalfTheSquare)
{
    const auto m = build_structured(5);
    const auto r = bisect_all(m);
    const auto hp = meshsize(m).h;
    const auto hc = meshsize(r).h;
    for (Index t = 0; t < r.num_triangles(); ++t) {
        const double parent = hp[static_cast<std::size_t>(r.parent()[static_cast<std::size_t>(t)])];
        EXPECT_NEAR(hc[static_cast<std::size_t>(t)] * hc[static_cast<std::size_t>(t)], 0.5 * parent * parent, 1e-15);
        EXPECT_NEAR(hc[static_cast<std::size_t>(t)] * hc[static_cast<std::size_t>(t)], r.area(t), 1e-12 * r.area(t));
    }
}

TEST(BoundaryBand, ZeroWidthIsTheBoundary)
{
    const auto m = build_structured(7);
    const auto band = boundary_band(m, 0.0);
    EXPECT_EQ(band.zero_nodes.size(), 24u);
    for (Index v : band.zero_nodes) EXPECT_TRUE(oracle::on_square_boundary(m.vertex(v)));
}

TEST(BoundaryBand, WideBandCoversEverything)
{
    const auto m = build_structured(9);
    EXPECT_EQ(boundary_band(m, 2.0).zero_nodes.size(), 81u);
}

TEST(BoundaryBand, TwoRingsOnTwentyOneGrid)
{
    const auto m = build_structured(21);
    const auto band = boundary_band(m, 0.1);
    // Interior 17 x 17 block stays free.
    EXPECT_EQ(band.zero_nodes.size(), 441u - 289u);
    for (Index v = 0; v < m.num_vertices(); ++v) {
        const int i = v % 21, j = v / 21;
        const bool ring = std::min({i, j, 20 - i, 20 - j}) <= 1;
        EXPECT_EQ(band.contains(v), ring) << "vertex " << v;
    }
}

TEST(BoundaryBand, MonotoneInWidth)
{
    const auto m = build_structured(13);
    std::size_t prev = 0;
    for (double d0 : {0.0, 0.05, 0.1, 0.2, 0.5, 1.0}) {
        const auto band = boundary_band(m, d0);
        EXPECT_GE(band.zero_nodes.size(), prev);
        prev = band.zero_nodes.size();
    }
    EXPECT_THROW(boundary_band(m, -0.1), InvalidArgument);
}

TEST(EdgeTables, TwoTriangleSquare)
{
    const auto t = edge_tables(build_structured(2));
    EXPECT_EQ(t.num_interior, 1);
    EXPECT_EQ(t.num_boundary, 4);
}

TEST(EdgeTables, ThreeByThreeHasEightInteriorEdges)
{
    const auto m = build_structured(3);
    const auto t = edge_tables(m);
    EXPECT_EQ(m.num_triangles(), 8);
    EXPECT_EQ(t.num_interior, 8);
}

TEST(EdgeTables, HandshakeAndNormals)
{
    std::mt19937_64 rng(3);
    TriMesh m = build_structured(5);
    for (int k = 0; k < 4; ++k) {
        std::vector<Index> marked;
        for (Index t = 0; t < m.num_triangles(); ++t) {
            if (rng() % 3 == 0) marked.push_back(t);
        }
        m = bisect(m, marked);
    }
    const auto t = edge_tables(m);
    EXPECT_EQ(3 * m.num_triangles(), 2 * t.num_interior + t.num_boundary);
    auto centroid = [&](Index tri) {
        const auto c = m.corners(tri);
        return (1.0 / 3.0) * (c[0] + c[1] + c[2]);
    };
    for (const auto& e : t.edges) {
        EXPECT_NEAR(norm(e.normal), 1.0, 1e-14);
        const Point mid = midpoint(m.vertex(e.v[0]), m.vertex(e.v[1]));
        EXPECT_GT(dot(e.normal, mid - centroid(e.t_plus)), 0.0);
        if (e.on_boundary()) {
            EXPECT_TRUE(oracle::on_square_boundary(mid));
        } else {
            EXPECT_LT(dot(e.normal, mid - centroid(e.t_minus)), 0.0);
        }
    }
}

// Random refinement sequences: conformity, positive areas, area bookkeeping,
// at most four shapes per root and the minimum angle of the first two generations.
// Odd trials start from jittered, non-isosceles roots.
TEST(BisectProperty, RandomSequences)
{
    std::mt19937_64 rng(20240611);
    std::size_t max_classes = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng() % 5);
        TriMesh m = trial % 2 == 0 ? build_structured(n) : oracle::jittered_structured(n + 1, rng);
        const auto root = m;
        double angle_floor = 10.0;
        {
            const auto two = bisect_all(bisect_all(root));
            for (Index t = 0; t < root.num_triangles(); ++t) angle_floor = std::min(angle_floor, oracle::min_angle(root.corners(t)));
            for (Index t = 0; t < two.num_triangles(); ++t) angle_floor = std::min(angle_floor, oracle::min_angle(two.corners(t)));
        }
        const int steps = 1 + static_cast<int>(rng() % 8);
        for (int s = 0; s < steps; ++s) {
            std::vector<Index> marked;
            const double p = std::uniform_real_distribution<double>(0.05, 0.5)(rng);
            for (Index t = 0; t < m.num_triangles(); ++t) {
                if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p) marked.push_back(t);
            }
            if (marked.empty()) marked.push_back(static_cast<Index>(rng() % static_cast<std::uint64_t>(m.num_triangles())));
            const TriMesh next = bisect(m, marked);

            ASSERT_TRUE(oracle::conforming(next)) << "trial " << trial << " step " << s;
            const auto kids = next.children_by_parent(m.num_triangles());
            for (Index t : marked) ASSERT_GE(kids[static_cast<std::size_t>(t)].size(), 2u);
            for (Index t = 0; t < m.num_triangles(); ++t) {
                double sum = 0.0;
                for (Index c : kids[static_cast<std::size_t>(t)]) sum += next.area(c);
                ASSERT_NEAR(sum, m.area(t), 1e-14 * m.area(t));
            }
            for (Index t = 0; t < next.num_triangles(); ++t) {
                ASSERT_GT(next.signed_area(t), 0.0);
                ASSERT_GE(oracle::min_angle(next.corners(t)), angle_floor - 1e-12);
            }
            m = next;
        }
        for (const auto& [r, shapes] : classes_by_root(m)) {
            ASSERT_LE(shapes.size(), 4u) << "root " << r;
            max_classes = std::max(max_classes, shapes.size());
        }
    }
    // The jittered roots do reach more than one class.
    EXPECT_GT(max_classes, 1u);
}
