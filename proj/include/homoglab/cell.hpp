/**
 * @file cell.hpp
 * @brief Periodic cell problem: corrector chi, effective tensor a_hom, f_hom
 *        and evaluation of chi(x/eps) on the perforated domain.
 */
#pragma once

#include "homoglab/eigensolve.hpp"
#include "homoglab/error.hpp"
#include "homoglab/fem.hpp"
#include "homoglab/geometry.hpp"

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace homoglab {

struct CellSolution {
    std::array<Vector, 2> chi;   ///< nodal values on the template mesh, 0 at hole-interior nodes
    Eigen::Matrix2d a_hom = Eigen::Matrix2d::Identity();
    double cell_area = 1.0;      ///< |Y|
    double hole_perimeter = 0.0; ///< |Sigma^0|
    double c_star = 0.0;         ///< |Sigma^0| / |Y|
    double c_star_full = 0.0;    ///< (4 + |Sigma^0|) / |Y|, the whole of dY

    /// chi_1 e_1 + chi_2 e_2 evaluated at template node i.
    Eigen::Vector2d at_node(int i) const { return {chi[0][i], chi[1][i]}; }
};

/// Nodes that touch at least one FLUID triangle.
inline std::vector<bool> fluid_nodes(const Mesh& mesh) {
    std::vector<bool> active(mesh.node_count(), false);
    for (const auto& t : mesh.triangles)
        if (t.region == Region::Fluid)
            for (int v : t.v) active[v] = true;
    return active;
}

/// Periodic pairs (slave, master) of the template: a face node with lattice key
/// (i, j) is identified with (i mod N, j mod N).
inline std::vector<std::pair<int, int>> periodic_pairs(const CellMesh& cell) {
    const int N = cell.divisions;
    std::vector<int> lattice((N + 1) * (N + 1), -1);
    for (std::size_t n = 0; n < cell.boundary_key.size(); ++n) {
        const auto& k = cell.boundary_key[n];
        if (!k.valid()) continue;
        if (k.i < 0 || k.i > N || k.j < 0 || k.j > N) throw GeometryError("face lattice key out of range");
        lattice[k.j * (N + 1) + k.i] = static_cast<int>(n);
    }
    std::vector<std::pair<int, int>> pairs;
    for (std::size_t n = 0; n < cell.boundary_key.size(); ++n) {
        const auto& k = cell.boundary_key[n];
        if (!k.valid() || (k.i < N && k.j < N)) continue;
        const int m = lattice[(k.j % N) * (N + 1) + (k.i % N)];
        if (m < 0) throw GeometryError("periodic face node without a matching master");
        const Point shift = cell.mesh.nodes[n] - cell.mesh.nodes[m];
        if (std::abs(shift.x - std::round(shift.x)) > 1e-12 || std::abs(shift.y - std::round(shift.y)) > 1e-12)
            throw GeometryError("periodic pair does not match up to a face shift");
        pairs.emplace_back(static_cast<int>(n), m);
    }
    return pairs;
}

/// a_kl = sum_T |T| (e_k + grad chi^k).(e_l + grad chi^l) over FLUID triangles.
inline Eigen::Matrix2d compute_ahom(const CellSolution& sol, const CellMesh& cell) {
    const Mesh& mesh = cell.mesh;
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (mesh.triangles[t].region != Region::Fluid) continue;
        const double area = mesh.area(t);
        const Point g0 = element_gradient(mesh, t, sol.chi[0]);
        const Point g1 = element_gradient(mesh, t, sol.chi[1]);
        const Point w0{1.0 + g0.x, g0.y}, w1{g1.x, 1.0 + g1.y};
        a(0, 0) += area * dot(w0, w0);
        a(1, 1) += area * dot(w1, w1);
        a(0, 1) += area * dot(w0, w1);
    }
    a(1, 0) = a(0, 1);
    return a;
}

/// Solves int_Y (e_i + grad chi^i).grad v = 0 for all periodic v, i = 1, 2.
inline CellSolution solve_cell_problem(const CellMesh& cell) {
    const Mesh& mesh = cell.mesh;
    const auto active = fluid_nodes(mesh);

    ConstraintMap cmap;
    cmap.periodic = periodic_pairs(cell);
    int pin = -1;
    for (std::size_t n = 0; n < mesh.node_count(); ++n) {
        if (!active[n]) {
            cmap.dirichlet.push_back(static_cast<int>(n));
        } else if (pin < 0 && !cell.boundary_key[n].valid()) {
            pin = static_cast<int>(n);
        }
    }
    if (pin < 0) throw GeometryError("cell mesh has no interior fluid node to pin");
    cmap.dirichlet.push_back(pin);

    const SparseMatrix S = assemble_stiffness(mesh);
    const SparseMatrix M = assemble_mass(mesh);
    const auto sys = apply_constraints(S, M, SparseMatrix(), cmap);
    const LinearSolver solver(sys.S);

    CellSolution sol;
    sol.cell_area = cell.fluid_area();
    sol.hole_perimeter = cell.hole_perimeter();
    sol.c_star = sol.hole_perimeter / sol.cell_area;
    sol.c_star_full = (4.0 + sol.hole_perimeter) / sol.cell_area;

    const Vector ones = Vector::Ones(static_cast<Eigen::Index>(mesh.node_count()));
    for (int i = 0; i < 2; ++i) {
        Vector load = Vector::Zero(static_cast<Eigen::Index>(mesh.node_count()));
        for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
            if (mesh.triangles[t].region != Region::Fluid) continue;
            const double area = mesh.area(t);
            const auto g = basis_gradients(mesh, t);
            for (int a = 0; a < 3; ++a) load[mesh.triangles[t].v[a]] -= area * (i == 0 ? g[a].x : g[a].y);
        }
        Vector chi = sys.map.expand(solver.solve(sys.map.restrict_load(load)));
        chi[pin] = 0.0;
        const double mean = ones.dot(M * chi) / sol.cell_area;
        for (std::size_t n = 0; n < mesh.node_count(); ++n)
            if (active[n]) chi[static_cast<Eigen::Index>(n)] -= mean;
        sol.chi[static_cast<std::size_t>(i)] = std::move(chi);
    }
    sol.a_hom = compute_ahom(sol, cell);
    return sol;
}

/// xi^T a_hom xi.
inline double fhom(const Eigen::Vector2d& xi, const CellSolution& sol) { return xi.dot(sol.a_hom * xi); }

/// int_Y |xi + grad(xi . chi)|^2 evaluated element by element.
inline double fhom_direct(const Eigen::Vector2d& xi, const CellSolution& sol, const CellMesh& cell) {
    const Mesh& mesh = cell.mesh;
    const Vector w = xi[0] * sol.chi[0] + xi[1] * sol.chi[1];
    double total = 0.0;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (mesh.triangles[t].region != Region::Fluid) continue;
        const Point g = element_gradient(mesh, t, w);
        const Point v{xi[0] + g.x, xi[1] + g.y};
        total += mesh.area(t) * dot(v, v);
    }
    return total;
}

struct ChiValue {
    Eigen::Vector2d value = Eigen::Vector2d::Zero();
    Eigen::Matrix2d grad_y = Eigen::Matrix2d::Zero(); ///< row i = grad_y chi^i
};

/// Evaluates chi(x/eps) through point location on the template cell.
/// Immutable after construction.
class ChiEvaluator {
public:
    ChiEvaluator(std::shared_ptr<const CellSolution> sol, std::shared_ptr<const CellMesh> cell)
        : sol_(std::move(sol)), cell_(std::move(cell)), locator_(cell_->mesh) {}

    /// Template point y = x/eps mod 1 for x in the perforated domain.
    static Point reduce(Point x, double eps) {
        const double yx = x.x / eps, yy = x.y / eps;
        auto wrap = [](double v) {
            double f = v - std::floor(v);
            const double r = std::round(v);
            if (std::abs(v - r) < 1e-12) f = 0.0;
            return f;
        };
        return {wrap(yx), wrap(yy)};
    }

    ChiValue eval_template(Point y) const {
        const auto loc = locator_.locate(y);
        if (!loc) {
            throw LocateError("chi evaluation point (" + std::to_string(y.x) + ", " + std::to_string(y.y) +
                              ") is outside the fluid part of the cell");
        }
        const auto& v = cell_->mesh.triangles[static_cast<std::size_t>(loc->triangle)].v;
        ChiValue out;
        int vertex = -1;
        for (int a = 0; a < 3; ++a)
            if (loc->bary[a] > 1.0 - 1e-12) vertex = v[a];
        for (int i = 0; i < 2; ++i) {
            const Vector& c = sol_->chi[static_cast<std::size_t>(i)];
            out.value[i] = vertex >= 0 ? c[vertex]
                                       : loc->bary[0] * c[v[0]] + loc->bary[1] * c[v[1]] + loc->bary[2] * c[v[2]];
            const Point g = element_gradient(cell_->mesh, static_cast<std::size_t>(loc->triangle), c);
            out.grad_y(i, 0) = g.x;
            out.grad_y(i, 1) = g.y;
        }
        return out;
    }

    ChiValue eval(Point x, double eps) const { return eval_template(reduce(x, eps)); }

    /// Exact nodal value for a template node (no location round-off).
    Eigen::Vector2d node_value(int template_node) const { return sol_->at_node(template_node); }

    const CellSolution& solution() const { return *sol_; }
    const CellMesh& cell() const { return *cell_; }

private:
    std::shared_ptr<const CellSolution> sol_;
    std::shared_ptr<const CellMesh> cell_;
    PointLocator locator_;
};

inline ChiValue eval_chi(const ChiEvaluator& chi, Point x, double eps) { return chi.eval(x, eps); }

} // namespace homoglab
