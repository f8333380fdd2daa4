#include "homoglab/geometry.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

using namespace homoglab;

namespace {

const double kPi = std::numbers::pi;

double total_area(const Mesh& m) {
    double a = 0.0;
    for (std::size_t t = 0; t < m.triangle_count(); ++t) a += m.area(t);
    return a;
}

DomainConfig config(double eps, double r = 0.25, int sides = 32, double h_ref = 0.125) {
    DomainConfig c;
    c.eps = eps;
    c.hole_radius = r;
    c.hole_sides = sides;
    c.h_ref = h_ref;
    return c;
}

} // namespace

TEST(CellMesh, EmptyPerforation) {
    const auto cell = build_cell_mesh(0.0, 8, 0.125);
    EXPECT_EQ(cell.mesh.region_area(Region::Hole), 0.0);
    for (const auto& t : cell.mesh.triangles) EXPECT_EQ(t.region, Region::Fluid);
    EXPECT_NEAR(cell.fluid_area(), 1.0, 1e-14);
    EXPECT_EQ(cell.hole_perimeter(), 0.0);
    EXPECT_EQ(cell.mesh.count_edges(EdgeTag::HoleBoundary), 0u);
}

TEST(CellMesh, PolygonAreaAndPerimeter) {
    const auto cell = build_cell_mesh(0.25, 32, 1.0 / 16);
    const double y = 1.0 - 16.0 * 0.0625 * std::sin(2.0 * kPi / 32);
    const double sigma = 2.0 * 32 * 0.25 * std::sin(kPi / 32);
    EXPECT_NEAR(cell.fluid_area(), y, 1e-12);
    EXPECT_NEAR(cell.hole_perimeter(), sigma, 1e-14);
    EXPECT_NEAR(y, 0.804909678, 1e-9);
    EXPECT_NEAR(sigma, 1.568274, 1e-6);
    double edges = 0.0;
    for (const auto& e : cell.mesh.edges)
        if (e.tag == EdgeTag::HoleBoundary) edges += cell.mesh.edge_length(e);
    EXPECT_NEAR(edges, sigma, 1e-13);
}

TEST(CellMesh, Conforming) {
    for (double h : {1.0 / 8, 1.0 / 16, 1.0 / 32}) {
        const auto cell = build_cell_mesh(0.25, 32, h);
        const auto audit = audit_conformity(cell.mesh);
        EXPECT_TRUE(audit.ok) << audit.problem;
        for (std::size_t t = 0; t < cell.mesh.triangle_count(); ++t) EXPECT_GT(cell.mesh.area(t), 0.0);
        EXPECT_NEAR(total_area(cell.mesh), 1.0, 1e-13);
    }
}

TEST(CellMesh, HoleEdgesSeparateFluidFromHole) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    std::map<std::pair<int, int>, std::multiset<Region>> owner;
    for (const auto& t : cell.mesh.triangles)
        for (int a = 0; a < 3; ++a) {
            const int u = t.v[a], v = t.v[(a + 1) % 3];
            owner[{std::min(u, v), std::max(u, v)}].insert(t.region);
        }
    for (const auto& e : cell.mesh.edges) {
        if (e.tag != EdgeTag::HoleBoundary) continue;
        const auto& r = owner[{std::min(e.v[0], e.v[1]), std::max(e.v[0], e.v[1])}];
        EXPECT_EQ(r.count(Region::Fluid), 1u);
        EXPECT_EQ(r.count(Region::Hole), 1u);
    }
}

TEST(CellMesh, PeriodicFaceMatching) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    std::set<double> left, right, bottom, top;
    for (const auto& p : cell.mesh.nodes) {
        if (p.x == 0.0) left.insert(p.y);
        if (p.x == 1.0) right.insert(p.y);
        if (p.y == 0.0) bottom.insert(p.x);
        if (p.y == 1.0) top.insert(p.x);
    }
    EXPECT_EQ(left, right);
    EXPECT_EQ(bottom, top);
    EXPECT_EQ(left.size(), static_cast<std::size_t>(cell.divisions + 1));
}

TEST(CellMesh, RejectsHoleTouchingFace) {
    EXPECT_THROW(build_cell_mesh(0.4, 32, 0.125), GeometryError);
    EXPECT_THROW(build_cell_mesh(0.25, 6, 0.125), GeometryError);
}

TEST(PerforatedMesh, SixteenHoles) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    std::set<LatticeIndex> holes;
    for (const auto& e : mesh.edges)
        if (e.tag == EdgeTag::HoleBoundary) holes.insert(e.cell);
    EXPECT_EQ(holes.size(), 16u);
    EXPECT_EQ(mesh.count_edges(EdgeTag::HoleBoundary), 16u * 32u);
    for (const auto& t : mesh.triangles) EXPECT_EQ(t.region, Region::Fluid);
}

TEST(PerforatedMesh, NoHolesWithZeroRadius) {
    const auto cell = build_cell_mesh(0.0, 8, 0.125);
    const auto mesh = build_perforated_mesh(config(0.5, 0.0, 8), cell);
    EXPECT_EQ(mesh.count_edges(EdgeTag::HoleBoundary), 0u);
    EXPECT_NEAR(total_area(mesh), 1.0, 1e-13);
    EXPECT_TRUE(audit_conformity(mesh).ok);
    // Euler characteristic 1: simply connected.
    std::set<std::pair<int, int>> edges;
    for (const auto& t : mesh.triangles)
        for (int a = 0; a < 3; ++a) edges.insert({std::min(t.v[a], t.v[(a + 1) % 3]), std::max(t.v[a], t.v[(a + 1) % 3])});
    const long chi = static_cast<long>(mesh.node_count()) - static_cast<long>(edges.size()) +
                     static_cast<long>(mesh.triangle_count());
    EXPECT_EQ(chi, 1);
}

TEST(PerforatedMesh, FluidAreaEqualsCellArea) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    for (double eps : {0.25, 0.125}) {
        const auto mesh = build_perforated_mesh(config(eps), cell);
        const double n = 1.0 / eps;
        const double expected = 1.0 - n * n * eps * eps * cell.hole.area();
        EXPECT_NEAR(total_area(mesh), expected, 1e-12 * expected);
        EXPECT_NEAR(total_area(mesh), cell.fluid_area(), 1e-12);
    }
}

TEST(PerforatedMesh, ConformingAndOuterEdgesOnBoundary) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.125), cell);
    const auto audit = audit_conformity(mesh);
    EXPECT_TRUE(audit.ok) << audit.problem;
    for (const auto& e : mesh.edges) {
        if (e.tag != EdgeTag::Outer) continue;
        for (int v : e.v) {
            const Point p = mesh.nodes[v];
            EXPECT_TRUE(p.x == 0.0 || p.x == 1.0 || p.y == 0.0 || p.y == 1.0);
        }
    }
    EXPECT_EQ(mesh.count_edges(EdgeTag::Outer), 4u * 8u * static_cast<std::size_t>(cell.divisions));
}

TEST(PerforatedMesh, NodeCountMinusSharedFaces) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const int N = cell.divisions;
    const auto tiled = tile_cell_mesh(config(0.25), cell);
    const std::size_t tn = cell.mesh.node_count();
    const std::size_t n = 4;
    const std::size_t interior = tn - static_cast<std::size_t>(4 * N);
    // Face-lattice points (i, j) with i or j a multiple of N.
    const std::size_t side = n * N + 1, off = n * (N - 1);
    const std::size_t lattice = side * side - off * off;
    EXPECT_EQ(tiled.full.node_count(), n * n * interior + lattice);
}

TEST(PerforatedMesh, TilingConsistency) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto cfg = config(0.125);
    const auto tiled = tile_cell_mesh(cfg, cell);
    const int n = cfg.cells_per_side();
    const std::size_t nt = cell.mesh.triangle_count();
    ASSERT_EQ(tiled.full.triangle_count(), nt * static_cast<std::size_t>(n * n));
    for (std::size_t t = 0; t < tiled.full.triangle_count(); ++t) {
        const auto& tri = tiled.full.triangles[t];
        const auto& tmpl = cell.mesh.triangles[t % nt];
        for (int a = 0; a < 3; ++a) {
            const Point y = cell.mesh.nodes[tmpl.v[a]];
            const Point x = tiled.full.nodes[tri.v[a]];
            EXPECT_EQ(x.x, (tri.cell.ix + y.x) / n);
            EXPECT_EQ(x.y, (tri.cell.iy + y.y) / n);
        }
    }
    // Fluid nodes first.
    for (const auto& tri : tiled.perforated.triangles)
        for (int v : tri.v) EXPECT_LT(static_cast<std::size_t>(v), tiled.perforated.node_count());
}

TEST(PerforatedMesh, RejectsNonIntegerReciprocal) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    EXPECT_THROW(build_perforated_mesh(config(0.3), cell), ConfigError);
    EXPECT_THROW(config(0.3).validate(), ConfigError);
    EXPECT_THROW(config(1.0).validate(), ConfigError);
}

TEST(DomainMesh, StructuredCounts) {
    const auto m = build_domain_mesh({0, 0, 1, 1}, 0.25);
    EXPECT_EQ(m.triangle_count(), 32u);
    EXPECT_EQ(m.node_count(), 25u);
    EXPECT_TRUE(audit_conformity(m).ok);
}

TEST(DomainMesh, RectangleOfA) {
    const Rect a{0.25, 0.25, 0.75, 0.75};
    const auto m = build_domain_mesh(a, 0.125);
    EXPECT_NEAR(total_area(m), 0.25, 1e-12);
    for (const auto& e : m.edges) {
        EXPECT_EQ(e.tag, EdgeTag::Outer);
        for (int v : e.v) {
            const Point p = m.nodes[v];
            EXPECT_TRUE(p.x == a.x0 || p.x == a.x1 || p.y == a.y0 || p.y == a.y1);
        }
    }
    EXPECT_THROW(build_domain_mesh({0.5, 0, 0.5, 1}, 0.1), GeometryError);
}

TEST(Locate, Vertex) {
    const auto m = build_domain_mesh({0, 0, 1, 1}, 0.25);
    const int node = 6;
    const auto loc = locate_point(m, m.nodes[node]);
    ASSERT_TRUE(loc);
    int lowest = -1;
    for (std::size_t t = 0; t < m.triangle_count() && lowest < 0; ++t)
        for (int v : m.triangles[t].v)
            if (v == node) lowest = static_cast<int>(t);
    EXPECT_EQ(loc->triangle, lowest);
    const auto& v = m.triangles[loc->triangle].v;
    for (int a = 0; a < 3; ++a) EXPECT_DOUBLE_EQ(loc->bary[a], v[a] == node ? 1.0 : 0.0);
}

TEST(Locate, Centroid) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const PointLocator loc(cell.mesh);
    for (std::size_t t = 0; t < cell.mesh.triangle_count(); ++t) {
        if (cell.mesh.triangles[t].region != Region::Fluid) continue;
        const auto r = loc.locate(cell.mesh.centroid(t));
        ASSERT_TRUE(r);
        EXPECT_EQ(r->triangle, static_cast<int>(t));
        for (double b : r->bary) EXPECT_NEAR(b, 1.0 / 3.0, 1e-12);
    }
}

TEST(Locate, HoleCenterIsOutside) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    EXPECT_FALSE(locate_point(cell.mesh, {0.5, 0.5}));
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    EXPECT_FALSE(locate_point(mesh, {0.125, 0.375}));
    EXPECT_FALSE(locate_point(mesh, {1.5, 0.5}));
    EXPECT_TRUE(locate_point(mesh, {0.01, 0.01}));
}

TEST(MeshIo, RoundTrip) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.5), cell);
    std::stringstream ss;
    write_mesh(ss, mesh);
    const auto back = read_mesh(ss);
    ASSERT_EQ(back.node_count(), mesh.node_count());
    ASSERT_EQ(back.triangle_count(), mesh.triangle_count());
    ASSERT_EQ(back.edges.size(), mesh.edges.size());
    for (std::size_t i = 0; i < mesh.node_count(); ++i) EXPECT_EQ(back.nodes[i], mesh.nodes[i]);
    for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
        EXPECT_EQ(back.triangles[t].v, mesh.triangles[t].v);
        EXPECT_EQ(back.triangles[t].cell, mesh.triangles[t].cell);
    }
    for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
        EXPECT_EQ(back.edges[e].tag, mesh.edges[e].tag);
        EXPECT_EQ(back.edges[e].cell, mesh.edges[e].cell);
    }
    std::stringstream bad("3 nodes 1 triangles\n");
    EXPECT_THROW(read_mesh(bad), IoError);
}
