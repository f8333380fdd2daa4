#include "homoglab/corrector.hpp"

#include <gtest/gtest.h>

#include <map>
#include <numbers>
#include <random>

using namespace homoglab;

namespace {

const Rect kA{0.25, 0.25, 0.75, 0.75};
const double kPi = std::numbers::pi;

struct Cell {
    std::shared_ptr<const CellMesh> mesh;
    std::shared_ptr<const CellSolution> sol;
};

const Cell& cell(double r = 0.25) {
    static std::map<double, Cell> cache;
    auto it = cache.find(r);
    if (it == cache.end()) {
        auto m = std::make_shared<const CellMesh>(build_cell_mesh(r, r > 0 ? 32 : 8, 0.125));
        it = cache.emplace(r, Cell{m, std::make_shared<const CellSolution>(solve_cell_problem(*m))}).first;
    }
    return it->second;
}

OperatorBundle bundle(double eps, double r = 0.25) {
    DomainConfig c;
    c.eps = eps;
    c.hole_radius = r;
    return make_perforated_bundle(c, cell(r).mesh);
}

/// Smooth field on A vanishing on its boundary.
const DomainField& smooth_field() {
    static const auto mesh = std::make_shared<const Mesh>(build_domain_mesh(kA, 1.0 / 128));
    static const DomainField f(mesh, interpolate(*mesh, [](Point p) {
        return std::sin(2 * kPi * (p.x - 0.25)) * std::sin(2 * kPi * (p.y - 0.25));
    }));
    return f;
}

double norm_in(const SparseMatrix& m, const Vector& v) { return std::sqrt(v.dot(m * v)); }

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, unsigned seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> d;
    Eigen::MatrixXd x(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) x(i, j) = d(gen);
    return x;
}

Eigen::Matrix2d rotation(double t) {
    Eigen::Matrix2d r;
    r << std::cos(t), -std::sin(t), std::sin(t), std::cos(t);
    return r;
}

} // namespace

TEST(Corrector, NoHoleIsInterpolant) {
    const auto b = bundle(0.25, 0.0);
    const ChiEvaluator chi(cell(0.0).sol, cell(0.0).mesh);
    const auto& u = smooth_field();
    const auto c = build_corrector(u, chi, 0.25, *b.mesh, kA, false);
    EXPECT_LT((c.values - u.transfer(*b.mesh)).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_FALSE(c.cutoff_applied);
    EXPECT_EQ(c.eps, 0.25);
}

TEST(Corrector, TemplatePathMatchesLocation) {
    const auto b = bundle(0.125);
    const ChiEvaluator chi(cell().sol, cell().mesh);
    const auto& u = smooth_field();
    const auto fast = build_corrector(u, chi, 0.125, *b.mesh, kA, true, &b.template_node, 3);
    const auto slow = build_corrector(u, chi, 0.125, *b.mesh, kA, true);
    EXPECT_LT((fast.values - slow.values).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_EQ(fast.source_index, 3);
}

TEST(Corrector, VanishesOutsideAAndOnDirichletNodes) {
    const auto b = bundle(0.125);
    const ChiEvaluator chi(cell().sol, cell().mesh);
    const auto c = build_corrector(smooth_field(), chi, 0.125, *b.mesh, kA, false, &b.template_node);
    for (std::size_t i = 0; i < b.mesh->node_count(); ++i)
        if (!kA.contains_open(b.mesh->nodes[i])) {
            EXPECT_EQ(c.values[static_cast<Eigen::Index>(i)], 0.0);
        }
    for (int d : b.constraints.dirichlet) EXPECT_EQ(c.values[d], 0.0);
}

TEST(Corrector, CutoffOnlyActsNearBoundaryOfA) {
    const double eps = 0.0625;
    const auto b = bundle(eps);
    const ChiEvaluator chi(cell().sol, cell().mesh);
    const auto off = build_corrector(smooth_field(), chi, eps, *b.mesh, kA, false, &b.template_node);
    const auto on = build_corrector(smooth_field(), chi, eps, *b.mesh, kA, true, &b.template_node);
    EXPECT_TRUE(on.cutoff_applied);
    int near = 0;
    for (std::size_t i = 0; i < b.mesh->node_count(); ++i) {
        const Point x = b.mesh->nodes[i];
        const auto k = static_cast<Eigen::Index>(i);
        if (kA.interior_distance(x) > 2 * eps) {
            EXPECT_EQ(on.values[k], off.values[k]);
        } else if (on.values[k] != off.values[k]) {
            ++near;
        }
    }
    EXPECT_GT(near, 0);
}

TEST(Corrector, CutoffWeight) {
    const double eps = 0.1;
    EXPECT_EQ(cutoff_weight({0.5, 0.5}, kA, eps), 1.0);
    EXPECT_EQ(cutoff_weight({0.1, 0.5}, kA, eps), 0.0);
    EXPECT_EQ(cutoff_weight({0.25, 0.5}, kA, eps), 0.0);
    EXPECT_NEAR(cutoff_weight({0.3, 0.5}, kA, eps), 0.25, 1e-12);
    // Lipschitz constant 1/(2 eps) along a ray into A.
    for (double t = 0.25; t < 0.5; t += 0.01)
        EXPECT_LE(std::abs(cutoff_weight({t + 0.01, 0.5}, kA, eps) - cutoff_weight({t, 0.5}, kA, eps)),
                  0.01 / (2 * eps) + 1e-12);
}

TEST(Corrector, AmplitudeScalesWithEps) {
    std::vector<double> l2;
    for (double eps : {0.25, 0.125, 0.0625, 0.03125}) {
        const auto b = bundle(eps);
        const ChiEvaluator chi(cell().sol, cell().mesh);
        const auto& u = smooth_field();
        const auto c = build_corrector(u, chi, eps, *b.mesh, kA, false, &b.template_node);
        l2.push_back(norm_in(b.M, c.values - u.transfer(*b.mesh)));
    }
    for (std::size_t i = 1; i < l2.size(); ++i) {
        EXPECT_GE(l2[i - 1], l2[i] - 1e-12);
        EXPECT_GE(l2[i - 1] / l2[i], 1.5);
        EXPECT_LE(l2[i - 1] / l2[i], 2.5);
    }
}

// ||U - u|| in the eps-norm against the order-eps claim. The corrector term
// eps chi(x/eps) grad u has an O(1) gradient, so the measured ratio is ~1.
TEST(Corrector, EnergyConsistencyOrderEps) {
    std::vector<double> e;
    for (double eps : {0.25, 0.125, 0.0625, 0.03125}) {
        const auto b = bundle(eps);
        const ChiEvaluator chi(cell().sol, cell().mesh);
        const auto& u = smooth_field();
        const auto c = build_corrector(u, chi, eps, *b.mesh, kA, false, &b.template_node);
        const Vector d = c.values - u.transfer(*b.mesh);
        e.push_back(std::sqrt(energy_product(b, d, d)));
    }
    for (std::size_t i = 1; i < e.size(); ++i) {
        EXPECT_GE(e[i - 1] / e[i], 1.5) << "eps index " << i;
        EXPECT_LE(e[i - 1] / e[i], 2.5) << "eps index " << i;
    }
}

TEST(Corrector, CutoffProximity) {
    std::vector<double> q;
    for (double eps : {0.25, 0.125, 0.0625, 0.03125}) {
        const auto b = bundle(eps);
        const ChiEvaluator chi(cell().sol, cell().mesh);
        const auto on = build_corrector(smooth_field(), chi, eps, *b.mesh, kA, true, &b.template_node);
        const auto off = build_corrector(smooth_field(), chi, eps, *b.mesh, kA, false, &b.template_node);
        q.push_back(norm_in(b.M, on.values - off.values) / std::pow(eps, 1.5));
    }
    const auto [lo, hi] = std::minmax_element(q.begin(), q.end());
    EXPECT_GT(*lo, 0.0);
    EXPECT_LE(*hi / *lo, 4.0);
}

TEST(Alignment, IdentityAndSignFlip) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 3);
    const SparseMatrix energy = b.S + b.R;
    const auto id = align_eigenspaces(s.vectors, s.vectors, b.M, energy);
    EXPECT_LT((id.m - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
    for (std::size_t l = 0; l < 3; ++l) {
        EXPECT_LT(id.l2_err[l], 1e-10);
        EXPECT_LT(id.heps_err[l], 1e-8);
    }
    const auto flip = align_eigenspaces(s.vectors, -s.vectors, b.M, energy);
    EXPECT_LT((flip.m + Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
    for (double e : flip.l2_err) EXPECT_LT(e, 1e-10);
}

TEST(Alignment, RecoversRotation) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 2);
    const Eigen::Matrix2d r = rotation(0.7);
    const Eigen::MatrixXd u = s.vectors;
    const Eigen::MatrixXd U = u * r.transpose();
    const auto al = align_eigenspaces(u, U, b.M, b.S + b.R);
    EXPECT_LT((al.m - r).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((al.m.transpose() * al.m - Eigen::MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-10);
    for (double e : al.l2_err) EXPECT_LE(e, 1e-10);
    for (double e : al.heps_err) EXPECT_LE(e, 1e-8);
}

TEST(Alignment, ProcrustesNeverHurts) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 3);
    const Eigen::Index n = s.vectors.rows();
    for (unsigned seed = 0; seed < 5; ++seed) {
        const Eigen::MatrixXd U = s.vectors + 0.3 * random_matrix(n, 3, seed) / std::sqrt(double(n));
        const auto al = align_eigenspaces(s.vectors, U, b.M);
        EXPECT_TRUE(al.heps_err.empty());
        EXPECT_LT((al.m.transpose() * al.m - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
        double sum = 0.0, sum_id = 0.0;
        for (Eigen::Index l = 0; l < 3; ++l) {
            EXPECT_GE(al.l2_err[static_cast<std::size_t>(l)], 0.0);
            sum += al.l2_err[static_cast<std::size_t>(l)] * al.l2_err[static_cast<std::size_t>(l)];
            const Vector d = U.col(l) - s.vectors.col(l);
            sum_id += d.dot(b.M * d);
        }
        EXPECT_LE(sum, sum_id + 1e-12);
    }
}

TEST(Alignment, Errors) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 2);
    Eigen::MatrixXd U = s.vectors;
    U.col(1).setZero();
    EXPECT_THROW(align_eigenspaces(s.vectors, U, b.M), AlignmentError);
    EXPECT_THROW(align_eigenspaces(s.vectors, s.vectors.leftCols(1), b.M), AlignmentError);
}

TEST(Gap, Examples) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 4);
    const Eigen::MatrixXd a = s.vectors.leftCols(2), c = s.vectors.rightCols(2);
    EXPECT_LT(eigenspace_gap(a, a, b.M), 1e-7);
    EXPECT_NEAR(eigenspace_gap(a, c, b.M), 1.0, 1e-12);
    Eigen::Matrix2d mix;
    mix << 2.0, 1.0, -0.5, 3.0;
    EXPECT_LT(eigenspace_gap(a, a * mix, b.M), 1e-7);
    EXPECT_LT(eigenspace_gap(a, a * rotation(1.1), b.M), 1e-7);
    EXPECT_THROW(eigenspace_gap(a, s.vectors.leftCols(3), b.M), AlignmentError);
}

TEST(Gap, SymmetricAndBounded) {
    const auto b = bundle(0.25);
    const Eigen::Index n = static_cast<Eigen::Index>(b.node_count());
    for (unsigned seed = 0; seed < 5; ++seed) {
        const Eigen::MatrixXd x = random_matrix(n, 2, 2 * seed), y = random_matrix(n, 2, 2 * seed + 1);
        const double g = eigenspace_gap(x, y, b.M);
        EXPECT_GE(g, 0.0);
        EXPECT_LE(g, 1.0);
        EXPECT_NEAR(g, eigenspace_gap(y, x, b.M), 1e-12);
    }
}

TEST(Visik, EigenfunctionIsExact) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 3);
    for (std::size_t j = 0; j < 3; ++j) {
        const auto v = visik_check(b, s.vector(j), 1.0 / s.values[j], s);
        EXPECT_LT(v.alpha, 1e-8 / s.values[j]);
        EXPECT_NEAR(v.distance, 0.0, 1e-15);
        EXPECT_TRUE(v.certificate);
        EXPECT_FALSE(v.searched);
    }
}

TEST(Visik, RandomFieldAtZero) {
    const auto b = bundle(0.25);
    const auto s = solve_bundle_evp(b, 3);
    const Eigen::Index n = static_cast<Eigen::Index>(b.node_count());
    for (unsigned seed = 0; seed < 3; ++seed) {
        Vector u = random_matrix(n, 1, seed).col(0);
        for (int d : b.constraints.dirichlet) u[d] = 0.0;
        const auto v = visik_check(b, u, 0.0, s);
        EXPECT_TRUE(v.certificate);
        EXPECT_GE(v.alpha * (1 + 1e-8), v.distance);
        EXPECT_TRUE(v.searched);
        // Scale invariance of the trial field.
        EXPECT_NEAR(visik_check(b, 3.0 * u, 0.0, s).alpha, v.alpha, 1e-12 * v.alpha);
    }
    EXPECT_THROW(visik_check(b, Vector::Zero(n), 0.0, s), AssemblyError);
}

TEST(Visik, CorrectorOfFirstHomogenizedMode) {
    const auto& cs = *cell().sol;
    const auto a_mesh = std::make_shared<const Mesh>(build_domain_mesh(kA, 1.0 / 64));
    const auto hom = solve_homogenized_evp(a_mesh, cs.a_hom, cs.cell_area, 1);
    const DomainField u(a_mesh, hom.spectrum.vector(0));
    const ChiEvaluator chi(cell().sol, cell().mesh);
    for (double eps : {0.25, 0.125, 0.0625}) {
        const auto b = bundle(eps);
        const auto s = solve_bundle_evp(b, 2);
        const auto c = build_corrector(u, chi, eps, *b.mesh, kA, false, &b.template_node);
        const auto v = visik_check(b, c.values, 1.0 / hom.spectrum.values[0], s);
        EXPECT_TRUE(v.certificate) << "eps=" << eps;
        EXPECT_GT(v.alpha, 0.0);
        EXPECT_LE(v.distance, v.alpha * (1 + 1e-8));
    }
}
