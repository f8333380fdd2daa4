#include "homoglab/cell.hpp"
#include "homoglab/fem.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace homoglab;

namespace {

Mesh single_triangle(Point a = {0, 0}, Point b = {1, 0}, Point c = {0, 1}) {
    Mesh m;
    m.nodes = {a, b, c};
    m.triangles.push_back({{0, 1, 2}, Region::Fluid, {}});
    return m;
}

Mesh unit_square() {
    Mesh m;
    m.nodes = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    m.triangles.push_back({{0, 1, 2}, Region::Fluid, {}});
    m.triangles.push_back({{0, 2, 3}, Region::Fluid, {}});
    return m;
}

DomainConfig config(double eps) {
    DomainConfig c;
    c.eps = eps;
    return c;
}

Vector random_vector(Eigen::Index n, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d;
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = d(gen);
    return v;
}

} // namespace

TEST(Stiffness, ReferenceElement) {
    const Eigen::MatrixXd s = Eigen::MatrixXd(assemble_stiffness(single_triangle()));
    Eigen::Matrix3d expected;
    expected << 2, -1, -1, -1, 1, 0, -1, 0, 1;
    expected *= 0.5;
    EXPECT_LT((s - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Stiffness, ConstantsInKernel) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    const SparseMatrix s = assemble_stiffness(mesh);
    const Vector one = Vector::Ones(s.rows());
    EXPECT_LT((s * one).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Stiffness, LinearFieldExact) {
    const Mesh m = unit_square();
    const Vector u = interpolate(m, [](Point p) { return p.x; });
    EXPECT_NEAR(u.dot(assemble_stiffness(m) * u), 1.0, 1e-15);
    const auto cell = build_cell_mesh(0.0, 8, 0.125);
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    const Vector w = interpolate(mesh, [](Point p) { return 2.0 * p.x - 3.0 * p.y; });
    EXPECT_NEAR(w.dot(assemble_stiffness(mesh) * w), 13.0, 1e-11);
}

TEST(Stiffness, DegenerateTriangle) {
    EXPECT_THROW(assemble_stiffness(single_triangle({0, 0}, {1, 0}, {2, 0})), AssemblyError);
    EXPECT_THROW(assemble_mass(single_triangle({0, 0}, {1e-8, 0}, {0, 1e-8})), AssemblyError);
}

TEST(Mass, ReferenceElement) {
    const Mesh m = single_triangle({0, 0}, {2, 0}, {0, 3});
    const double a = 3.0;
    Eigen::Matrix3d expected;
    expected << 2, 1, 1, 1, 2, 1, 1, 1, 2;
    expected *= a / 12.0;
    EXPECT_LT((Eigen::MatrixXd(assemble_mass(m)) - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Mass, AreaIdentity) {
    const SparseMatrix m = assemble_mass(unit_square());
    const Vector one = Vector::Ones(4);
    EXPECT_NEAR(one.dot(m * one), 1.0, 1e-15);

    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    const SparseMatrix mp = assemble_mass(mesh);
    const Vector o = Vector::Ones(mp.rows());
    EXPECT_NEAR(o.dot(mp * o), cell.fluid_area(), 1e-12);
    EXPECT_NEAR(o.dot(mp * o), 0.804909677984, 1e-11);
}

TEST(Forms, SymmetryAndDefiniteness) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.125), cell);
    const SparseMatrix s = assemble_stiffness(mesh), m = assemble_mass(mesh);
    const SparseMatrix r = assemble_robin_mass(mesh, {0.25, 0.25, 0.75, 0.75});
    EXPECT_TRUE(is_exactly_symmetric(s));
    EXPECT_TRUE(is_exactly_symmetric(m));
    EXPECT_TRUE(is_exactly_symmetric(r));
    Eigen::SimplicialLLT<SparseMatrix> llt(m);
    EXPECT_EQ(llt.info(), Eigen::Success);
    for (unsigned seed = 1; seed <= 20; ++seed) {
        const Vector v = random_vector(s.rows(), seed);
        EXPECT_GE(v.dot(s * v), 0.0);
        EXPECT_GE(v.dot(r * v), 0.0);
        EXPECT_GT(v.dot(m * v), 0.0);
    }
}

TEST(Robin, AllHolesInsideK) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    const SparseMatrix r = assemble_robin_mass(mesh, {0.0, 0.0, 1.0, 1.0});
    EXPECT_EQ(r.norm(), 0.0);
}

TEST(Robin, SingleEdge) {
    Mesh m = single_triangle({0, 0}, {3, 0}, {0, 4});
    m.edges.push_back({{0, 1}, EdgeTag::HoleBoundary, {0, 0}});
    const SparseMatrix r = assemble_robin_mass(m, {10, 10, 11, 11});
    const Vector one = Vector::Ones(3);
    EXPECT_NEAR(one.dot(r * one), 3.0, 1e-15);
    EXPECT_NEAR(r.coeff(0, 0), 1.0, 1e-15);
    EXPECT_NEAR(r.coeff(0, 1), 0.5, 1e-15);
    EXPECT_EQ(assemble_robin_mass(m, {-1, -1, 5, 5}).norm(), 0.0);
}

TEST(Robin, TwelveBoundaryHoles) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto tiled = tile_cell_mesh(config(0.25), cell);
    const Mesh& mesh = tiled.perforated;
    const Rect k{0.25, 0.25, 0.75, 0.75};
    const SparseMatrix r = assemble_robin_mass(mesh, k);
    const double per_hole = 0.25 * cell.hole_perimeter();
    int contributing = 0;
    for (int j = 0; j < 4; ++j)
        for (int i = 0; i < 4; ++i) {
            // Hole of cell (i, j) as a closed set: inside K iff its bounding box is.
            const double cx = (i + 0.5) / 4, cy = (j + 0.5) / 4, rad = 0.25 * 0.25;
            const bool inside = k.contains_closed({cx - rad, cy - rad}) && k.contains_closed({cx + rad, cy + rad});
            Vector u = Vector::Zero(r.rows());
            for (const auto& e : mesh.edges)
                if (e.tag == EdgeTag::HoleBoundary && e.cell == LatticeIndex{i, j}) u[e.v[0]] = u[e.v[1]] = 1.0;
            const double q = u.dot(r * u);
            if (inside) {
                EXPECT_EQ(q, 0.0) << i << "," << j;
            } else {
                EXPECT_NEAR(q, per_hole, 1e-13) << i << "," << j;
                ++contributing;
            }
        }
    EXPECT_EQ(contributing, 12);
}

TEST(Robin, SupportOnOutsideHoleNodes) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.125), cell);
    const Rect k{0.25, 0.25, 0.75, 0.75};
    const SparseMatrix r = assemble_robin_mass(mesh, k);
    std::vector<char> allowed(mesh.node_count(), 0);
    for (const auto& e : mesh.edges)
        if (e.tag == EdgeTag::HoleBoundary && !k.contains_closed(0.5 * (mesh.nodes[e.v[0]] + mesh.nodes[e.v[1]])))
            allowed[e.v[0]] = allowed[e.v[1]] = 1;
    for (int c = 0; c < r.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(r, c); it; ++it) {
            EXPECT_TRUE(allowed[it.row()]);
            EXPECT_TRUE(allowed[it.col()]);
        }
}

TEST(Constraints, EmptyIsIdentity) {
    const Mesh m = unit_square();
    const SparseMatrix s = assemble_stiffness(m), ms = assemble_mass(m);
    const auto sys = apply_constraints(s, ms, SparseMatrix(), {});
    EXPECT_EQ(Eigen::MatrixXd(sys.S), Eigen::MatrixXd(s));
    EXPECT_EQ(Eigen::MatrixXd(sys.M), Eigen::MatrixXd(ms));
    EXPECT_EQ(sys.R.rows(), 4);
    EXPECT_EQ(sys.R.nonZeros(), 0);
    const Vector u = random_vector(4, 3);
    EXPECT_EQ(sys.map.expand(u), u);
}

TEST(Constraints, AllDirichletIsDegenerate) {
    const Mesh m = unit_square();
    EXPECT_THROW(apply_constraints(assemble_stiffness(m), assemble_mass(m), SparseMatrix(),
                                   ConstraintMap::dirichlet_on({0, 1, 2, 3})),
                 ConstraintError);
}

TEST(Constraints, Conflicts) {
    ConstraintMap c;
    c.dirichlet = {0};
    c.periodic = {{0, 1}};
    EXPECT_THROW(Reduction(4, c), ConstraintError);
    c.dirichlet.clear();
    c.periodic = {{0, 1}, {1, 2}};
    EXPECT_THROW(Reduction(4, c), ConstraintError);
    c.periodic = {{0, 1}, {0, 2}};
    EXPECT_THROW(Reduction(4, c), ConstraintError);
    c.periodic = {{2, 2}};
    EXPECT_THROW(Reduction(4, c), ConstraintError);
    EXPECT_THROW(Reduction(4, ConstraintMap::dirichlet_on({7})), ConstraintError);
}

TEST(Constraints, DirichletDeletesRows) {
    const auto m = build_domain_mesh({0, 0, 1, 1}, 0.25);
    const SparseMatrix s = assemble_stiffness(m), ms = assemble_mass(m);
    const auto outer = outer_nodes(m);
    EXPECT_EQ(outer.size(), 16u);
    const auto sys = apply_constraints(s, ms, SparseMatrix(), ConstraintMap::dirichlet_on(outer));
    EXPECT_EQ(sys.S.rows(), 9);
    const auto& r2f = sys.map.reduced_to_full();
    for (int a = 0; a < 9; ++a)
        for (int b = 0; b < 9; ++b) EXPECT_EQ(sys.S.coeff(a, b), s.coeff(r2f[a], r2f[b]));
    const Vector u = sys.map.expand(Vector(Vector::Ones(9)));
    for (int d : outer) EXPECT_EQ(u[d], 0.0);
}

TEST(Constraints, PeriodicKeepsConstantsInKernel) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const SparseMatrix s = assemble_stiffness(cell.mesh, Eigen::Matrix2d::Identity(), TriangleSet::Fluid);
    const SparseMatrix m = assemble_mass(cell.mesh, TriangleSet::Fluid);
    ConstraintMap c;
    c.periodic = periodic_pairs(cell);
    const auto fluid = fluid_nodes(cell.mesh);
    for (std::size_t i = 0; i < fluid.size(); ++i)
        if (!fluid[i]) c.dirichlet.push_back(static_cast<int>(i));
    const auto sys = apply_constraints(s, m, SparseMatrix(), c);
    EXPECT_LT(sys.S.rows(), s.rows());
    EXPECT_TRUE(is_exactly_symmetric(sys.S));
    const Vector one = Vector::Ones(sys.S.rows());
    EXPECT_LT((sys.S * one).cwiseAbs().maxCoeff(), 1e-12);
    // The folded mass still measures |Y|.
    EXPECT_NEAR(one.dot(sys.M * one), cell.fluid_area(), 1e-12);
}

TEST(Constraints, LoadRestrictionIsTranspose) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    ConstraintMap c;
    c.periodic = periodic_pairs(cell);
    const Reduction red(cell.mesh.node_count(), c);
    const Vector f = random_vector(static_cast<Eigen::Index>(cell.mesh.node_count()), 5);
    const Vector r = random_vector(static_cast<Eigen::Index>(red.reduced_size()), 6);
    EXPECT_NEAR(red.restrict_load(f).dot(r), f.dot(red.expand(r)), 1e-12);
    EXPECT_EQ(red.restrict_field(red.expand(r)), r);
}

TEST(Norms, ZeroAndLinear) {
    const Mesh m = unit_square();
    const SparseMatrix s = assemble_stiffness(m), ms = assemble_mass(m);
    const auto z = norms(s, ms, SparseMatrix(), Vector::Zero(4));
    EXPECT_EQ(z.l2, 0.0);
    EXPECT_EQ(z.h1_semi, 0.0);
    EXPECT_EQ(z.eps_norm_sq, 0.0);
    const auto n = norms(s, ms, SparseMatrix(), interpolate(m, [](Point p) { return p.x; }));
    EXPECT_NEAR(n.h1_semi, 1.0, 1e-15);
    EXPECT_NEAR(n.l2, 1.0 / 3.0, 1e-15);
    EXPECT_THROW(norms(s, ms, SparseMatrix(), Vector::Zero(3)), AssemblyError);
}

TEST(Norms, EpsNormDominatesSemi) {
    const auto cell = build_cell_mesh(0.25, 32, 0.125);
    const auto mesh = build_perforated_mesh(config(0.25), cell);
    const SparseMatrix s = assemble_stiffness(mesh), m = assemble_mass(mesh);
    const SparseMatrix r = assemble_robin_mass(mesh, {0.25, 0.25, 0.75, 0.75});
    for (unsigned seed = 1; seed <= 10; ++seed) {
        const auto n = norms(s, m, r, random_vector(s.rows(), seed));
        EXPECT_GE(n.eps_norm_sq, n.h1_semi);
    }
}

TEST(Gradient, RecoveryExactForLinear) {
    const auto m = build_domain_mesh({0, 0, 1, 1}, 0.125);
    const auto g = recover_gradient(m, interpolate(m, [](Point p) { return 3.0 * p.x + 0.5 * p.y; }));
    for (const auto& p : g) {
        EXPECT_NEAR(p.x, 3.0, 1e-12);
        EXPECT_NEAR(p.y, 0.5, 1e-12);
    }
}

TEST(Dump, CooFormat) {
    std::ostringstream os;
    dump_coo(os, assemble_mass(single_triangle({0, 0}, {2, 0}, {0, 3})));
    std::istringstream is(os.str());
    std::string tag;
    int rows = 0, cols = 0, nnz = 0;
    is >> tag >> rows >> cols >> nnz;
    EXPECT_EQ(tag, "%%coo");
    EXPECT_EQ(rows, 3);
    EXPECT_EQ(cols, 3);
    EXPECT_EQ(nnz, 9);
    int i = 0, j = 0;
    double v = 0.0;
    is >> i >> j >> v;
    EXPECT_EQ(i, 1);
    EXPECT_EQ(j, 1);
    EXPECT_DOUBLE_EQ(v, 0.5);
}
