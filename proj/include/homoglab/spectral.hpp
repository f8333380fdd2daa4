/**
 * @file spectral.hpp
 * @brief The perforated Neumann-Robin eigenproblem, the homogenized and plain
 *        Dirichlet problems on A, the source operator K_eps and the extension
 *        T_eps into the holes.
 */
#pragma once

#include "homoglab/cell.hpp"
#include "homoglab/eigensolve.hpp"
#include "homoglab/error.hpp"
#include "homoglab/fem.hpp"
#include "homoglab/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace homoglab {

enum class ProblemKind { Perforated, Homogenized, DirichletLaplacian, Cell };

inline const char* to_string(ProblemKind k) {
    switch (k) {
    case ProblemKind::Perforated: return "PERFORATED";
    case ProblemKind::Homogenized: return "HOMOGENIZED";
    case ProblemKind::DirichletLaplacian: return "DIRICHLET_LAPLACIAN";
    case ProblemKind::Cell: return "CELL";
    }
    return "?";
}

/// Discrete harmonic fill of the hole-interior nodes of the unperforated mesh.
class HoleExtension {
public:
    HoleExtension(const Mesh& full, std::size_t fluid_count) : full_count_(full.node_count()), fluid_count_(fluid_count) {
        stiffness_all_ = assemble_stiffness(full, Eigen::Matrix2d::Identity(), TriangleSet::All);
        mass_all_ = assemble_mass(full, TriangleSet::All);
        const auto ni = static_cast<Eigen::Index>(full_count_ - fluid_count_);
        if (ni == 0) return;
        const SparseMatrix hole = assemble_stiffness(full, Eigen::Matrix2d::Identity(), TriangleSet::Hole);
        const auto nf = static_cast<Eigen::Index>(fluid_count_);
        const SparseMatrix s_ii = hole.bottomRightCorner(ni, ni);
        s_ib_ = hole.bottomLeftCorner(ni, nf);
        interior_ = std::make_shared<LinearSolver>(s_ii);
    }

    /// Keeps the fluid values and solves the hole Laplacian for the rest.
    Vector extend(const Vector& u) const {
        if (static_cast<std::size_t>(u.size()) != fluid_count_) throw AssemblyError("extension input size mismatch");
        Vector out(static_cast<Eigen::Index>(full_count_));
        out.head(u.size()) = u;
        if (interior_) out.tail(static_cast<Eigen::Index>(full_count_ - fluid_count_)) = interior_->solve(Vector(-(s_ib_ * u)));
        return out;
    }

    const SparseMatrix& stiffness_all() const { return stiffness_all_; }
    const SparseMatrix& mass_all() const { return mass_all_; }

private:
    std::size_t full_count_, fluid_count_;
    SparseMatrix stiffness_all_, mass_all_, s_ib_;
    std::shared_ptr<LinearSolver> interior_;
};

/// Assembled and constrained operators of one problem. Immutable once built.
struct OperatorBundle {
    ProblemKind kind = ProblemKind::Perforated;
    std::shared_ptr<const Mesh> mesh;
    ConstraintMap constraints;
    SparseMatrix S, M, R;   ///< node-space forms (R empty unless perforated)
    ReducedSystem system;   ///< constrained forms
    std::shared_ptr<const LinearSolver> energy; ///< factorization of the reduced S + R

    // Perforated problems only.
    double eps = 1.0;
    Rect k_rect{};
    std::shared_ptr<const CellMesh> cell;
    std::shared_ptr<const Mesh> full_mesh;
    std::vector<int> template_node;
    std::shared_ptr<const HoleExtension> extension;
    SparseMatrix sigma_mass; ///< q = 1 on all of Sigma_eps

    std::size_t node_count() const { return mesh->node_count(); }

    SparseMatrix reduced_energy() const {
        SparseMatrix a = system.S + system.R;
        a.makeCompressed();
        return a;
    }
};

struct EigenSolution {
    OperatorBundle bundle;
    Spectrum spectrum; ///< eigenvectors expanded to node space
};

namespace detail {

inline void finish_bundle(OperatorBundle& b) {
    b.system = apply_constraints(b.S, b.M, b.R, b.constraints);
    b.energy = std::make_shared<LinearSolver>(b.reduced_energy());
}

inline Spectrum solve_bundle(const OperatorBundle& b, int k, const EigenOptions& opt) {
    Spectrum s = solve_gevp(b.reduced_energy(), b.system.M, k, opt);
    s.vectors = b.system.map.expand(s.vectors);
    return s;
}

} // namespace detail

/// Assembles Omega_eps with Dirichlet OUTER nodes and the Robin mass outside K.
inline OperatorBundle make_perforated_bundle(const DomainConfig& cfg, std::shared_ptr<const CellMesh> cell) {
    cfg.validate();
    auto tiled = tile_cell_mesh(cfg, *cell);
    OperatorBundle b;
    b.kind = ProblemKind::Perforated;
    b.eps = 1.0 / cfg.cells_per_side();
    b.k_rect = cfg.k_rect;
    b.cell = std::move(cell);
    b.extension = std::make_shared<HoleExtension>(tiled.full, tiled.perforated.node_count());
    b.template_node = std::move(tiled.template_node);
    b.full_mesh = std::make_shared<Mesh>(std::move(tiled.full));
    auto mesh = std::make_shared<Mesh>(std::move(tiled.perforated));
    b.S = assemble_stiffness(*mesh);
    b.M = assemble_mass(*mesh);
    b.R = assemble_robin_mass(*mesh, cfg.k_rect);
    b.sigma_mass = assemble_hole_boundary_mass(*mesh);
    b.constraints = ConstraintMap::dirichlet_on(outer_nodes(*mesh));
    b.mesh = std::move(mesh);
    detail::finish_bundle(b);
    return b;
}

inline OperatorBundle make_perforated_bundle(const DomainConfig& cfg) {
    cfg.validate();
    return make_perforated_bundle(
        cfg, std::make_shared<const CellMesh>(build_cell_mesh(cfg.hole_radius, cfg.hole_sides, cfg.h_ref)));
}

/// Dirichlet problem for -div(tensor grad u) on a mesh of A.
inline OperatorBundle make_domain_bundle(std::shared_ptr<const Mesh> mesh, const Eigen::Matrix2d& tensor,
                                         ProblemKind kind) {
    OperatorBundle b;
    b.kind = kind;
    b.S = assemble_stiffness(*mesh, tensor, TriangleSet::All);
    b.M = assemble_mass(*mesh, TriangleSet::All);
    b.constraints = ConstraintMap::dirichlet_on(outer_nodes(*mesh));
    b.mesh = std::move(mesh);
    detail::finish_bundle(b);
    return b;
}

inline EigenSolution solve_perforated_evp(const DomainConfig& cfg, int k, std::shared_ptr<const CellMesh> cell = nullptr,
                                          const EigenOptions& opt = {}) {
    EigenSolution out;
    out.bundle = cell ? make_perforated_bundle(cfg, std::move(cell)) : make_perforated_bundle(cfg);
    out.spectrum = detail::solve_bundle(out.bundle, k, opt);
    return out;
}

/// Same operators with the Robin term dropped (Neumann holes).
inline OperatorBundle without_robin(const OperatorBundle& b) {
    OperatorBundle n = b;
    n.R = SparseMatrix(b.R.rows(), b.R.cols());
    detail::finish_bundle(n);
    return n;
}

inline Spectrum solve_bundle_evp(const OperatorBundle& b, int k, const EigenOptions& opt = {}) {
    return detail::solve_bundle(b, k, opt);
}

/// -div(a_hom grad u) = |Y| lambda u on A, Dirichlet on dA. Eigenvalues are
/// reported as lambda = mu / |Y| and eigenfunctions satisfy int_A u^2 = 1/|Y|.
inline EigenSolution solve_homogenized_evp(std::shared_ptr<const Mesh> a_mesh, const Eigen::Matrix2d& a_hom,
                                           double cell_area, int k, const EigenOptions& opt = {}) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(0.5 * (a_hom + a_hom.transpose()));
    if (!(es.eigenvalues()[0] > 0.0)) throw SolverError("a_hom is not positive definite");
    if (!(cell_area > 0.0)) throw ConfigError("cell area must be positive");
    EigenSolution out;
    out.bundle = make_domain_bundle(std::move(a_mesh), a_hom, ProblemKind::Homogenized);
    out.spectrum = detail::solve_bundle(out.bundle, k, opt);
    for (auto& v : out.spectrum.values) v /= cell_area;
    for (auto& r : out.spectrum.residuals) r /= cell_area * std::sqrt(cell_area);
    out.spectrum.vectors /= std::sqrt(cell_area);
    return out;
}

inline EigenSolution solve_dirichlet_laplacian(std::shared_ptr<const Mesh> a_mesh, int k, const EigenOptions& opt = {}) {
    EigenSolution out;
    out.bundle = make_domain_bundle(std::move(a_mesh), Eigen::Matrix2d::Identity(), ProblemKind::DirichletLaplacian);
    out.spectrum = detail::solve_bundle(out.bundle, k, opt);
    return out;
}

/// a_eps(u, v) = int grad u . grad v + int_{Sigma \ K} u v for node-space fields.
inline double energy_product(const OperatorBundle& b, const Vector& u, const Vector& v) {
    if (u.size() != b.S.rows() || v.size() != b.S.rows()) throw AssemblyError("field size does not match the bundle");
    return u.dot(b.S * v) + (b.R.rows() ? u.dot(b.R * v) : 0.0);
}

inline double mass_product(const OperatorBundle& b, const Vector& u, const Vector& v) {
    if (u.size() != b.M.rows() || v.size() != b.M.rows()) throw AssemblyError("field size does not match the bundle");
    return u.dot(b.M * v);
}

/// Discrete K_eps f: the constrained solve of (S + R) u = M f.
inline Vector apply_Keps(const OperatorBundle& b, const Vector& f) {
    if (f.size() != b.M.rows()) throw AssemblyError("field size does not match the bundle");
    const Vector rhs = b.system.map.restrict_load(b.M * f);
    return b.system.map.expand(b.energy->solve(rhs));
}

/// T_eps u: the field on the unperforated mesh, harmonic inside each hole.
inline Vector extend_Teps(const OperatorBundle& b, const Vector& u) {
    if (!b.extension) throw AssemblyError("extension requires a perforated bundle");
    return b.extension->extend(u);
}

inline double rayleigh_quotient(const OperatorBundle& b, const Vector& u) {
    const double den = mass_product(b, u, u);
    if (!(den > 0.0)) throw AssemblyError("Rayleigh quotient of a zero field");
    return energy_product(b, u, u) / den;
}

/// A P1 field on a mesh that can be sampled, with its recovered gradient, at
/// arbitrary points. Points outside the closed mesh region sample as zero.
class DomainField {
public:
    DomainField(std::shared_ptr<const Mesh> mesh, Vector values)
        : mesh_(std::move(mesh)), values_(std::move(values)), locator_(*mesh_) {
        if (static_cast<std::size_t>(values_.size()) != mesh_->node_count())
            throw AssemblyError("field size does not match the mesh");
        const auto g = recover_gradient(*mesh_, values_, TriangleSet::All);
        gx_.resize(values_.size());
        gy_.resize(values_.size());
        for (std::size_t i = 0; i < g.size(); ++i) {
            gx_[static_cast<Eigen::Index>(i)] = g[i].x;
            gy_[static_cast<Eigen::Index>(i)] = g[i].y;
        }
    }

    struct Sample {
        bool inside = false;
        double value = 0.0;
        Eigen::Vector2d grad = Eigen::Vector2d::Zero();
    };

    Sample sample(Point x) const {
        Sample s;
        const auto loc = locator_.locate(x);
        if (!loc) return s;
        const auto& v = mesh_->triangles[static_cast<std::size_t>(loc->triangle)].v;
        s.inside = true;
        for (int a = 0; a < 3; ++a) {
            s.value += loc->bary[a] * values_[v[a]];
            s.grad[0] += loc->bary[a] * gx_[v[a]];
            s.grad[1] += loc->bary[a] * gy_[v[a]];
        }
        return s;
    }

    /// Nodal interpolant on another mesh, zero where the point is outside.
    Vector transfer(const Mesh& target) const {
        Vector out(static_cast<Eigen::Index>(target.node_count()));
        for (std::size_t i = 0; i < target.node_count(); ++i)
            out[static_cast<Eigen::Index>(i)] = sample(target.nodes[i]).value;
        return out;
    }

    const Mesh& mesh() const { return *mesh_; }
    const Vector& values() const { return values_; }

private:
    std::shared_ptr<const Mesh> mesh_;
    Vector values_, gx_, gy_;
    PointLocator locator_;
};

} // namespace homoglab
