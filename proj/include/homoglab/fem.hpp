/**
 * @file fem.hpp
 * @brief P1 bilinear forms, constraint elimination and the norms used by the
 *        perforated and homogenized problems.
 */
#pragma once

#include "homoglab/error.hpp"
#include "homoglab/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <algorithm>
#include <array>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace homoglab {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;
using Triplets = std::vector<Eigen::Triplet<double>>;

enum class TriangleSet { Fluid, Hole, All };

inline bool selected(const Triangle& t, TriangleSet which) {
    switch (which) {
    case TriangleSet::Fluid: return t.region == Region::Fluid;
    case TriangleSet::Hole: return t.region == Region::Hole;
    case TriangleSet::All: return true;
    }
    return false;
}

/// Gradients of the three barycentric basis functions of triangle t.
inline std::array<Point, 3> basis_gradients(const Mesh& mesh, std::size_t t) {
    const auto& v = mesh.triangles[t].v;
    const Point p0 = mesh.nodes[v[0]], p1 = mesh.nodes[v[1]], p2 = mesh.nodes[v[2]];
    const double a2 = orient(p0, p1, p2);
    return {Point{(p1.y - p2.y) / a2, (p2.x - p1.x) / a2}, Point{(p2.y - p0.y) / a2, (p0.x - p2.x) / a2},
            Point{(p0.y - p1.y) / a2, (p1.x - p0.x) / a2}};
}

namespace detail {

inline double checked_area(const Mesh& mesh, std::size_t t) {
    const double a = mesh.area(t);
    if (!(a >= 1e-14)) {
        const Point c = mesh.centroid(t);
        throw AssemblyError("degenerate triangle " + std::to_string(t) + " near (" + std::to_string(c.x) + ", " +
                            std::to_string(c.y) + ")");
    }
    return a;
}

inline SparseMatrix from_triplets(std::size_t n, const Triplets& trips) {
    SparseMatrix m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    m.setFromTriplets(trips.begin(), trips.end());
    m.makeCompressed();
    return m;
}

} // namespace detail

/// Stiffness of  int  (T grad u) . grad v  over the selected triangles.
/// Rows of nodes outside the selection stay empty.
inline SparseMatrix assemble_stiffness(const Mesh& mesh, const Eigen::Matrix2d& tensor = Eigen::Matrix2d::Identity(),
                                       TriangleSet which = TriangleSet::Fluid) {
    Triplets trips;
    trips.reserve(mesh.triangles.size() * 9);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        if (!selected(tri, which)) continue;
        const double area = detail::checked_area(mesh, t);
        const auto g = basis_gradients(mesh, t);
        std::array<std::array<double, 3>, 3> k{};
        for (int a = 0; a < 3; ++a) {
            const double tx = tensor(0, 0) * g[a].x + tensor(0, 1) * g[a].y;
            const double ty = tensor(1, 0) * g[a].x + tensor(1, 1) * g[a].y;
            for (int b = a; b < 3; ++b) k[a][b] = k[b][a] = area * (tx * g[b].x + ty * g[b].y);
        }
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) trips.emplace_back(tri.v[a], tri.v[b], k[a][b]);
    }
    return detail::from_triplets(mesh.node_count(), trips);
}

/// Consistent P1 mass matrix.
inline SparseMatrix assemble_mass(const Mesh& mesh, TriangleSet which = TriangleSet::Fluid) {
    Triplets trips;
    trips.reserve(mesh.triangles.size() * 9);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        if (!selected(tri, which)) continue;
        const double area = detail::checked_area(mesh, t);
        const double diag = area / 6.0, off = area / 12.0;
        for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) trips.emplace_back(tri.v[a], tri.v[b], a == b ? diag : off);
    }
    return detail::from_triplets(mesh.node_count(), trips);
}

/// 1-D P1 mass over the boundary edges accepted by `keep`.
inline SparseMatrix assemble_boundary_mass(const Mesh& mesh, const std::function<bool(const BoundaryEdge&)>& keep) {
    Triplets trips;
    for (const auto& e : mesh.edges) {
        if (!keep(e)) continue;
        const double len = mesh.edge_length(e);
        const double diag = len / 3.0, off = len / 6.0;
        trips.emplace_back(e.v[0], e.v[0], diag);
        trips.emplace_back(e.v[1], e.v[1], diag);
        trips.emplace_back(e.v[0], e.v[1], off);
        trips.emplace_back(e.v[1], e.v[0], off);
    }
    return detail::from_triplets(mesh.node_count(), trips);
}

/// Hole-boundary mass weighted by q: q = 0 on edges whose midpoint lies in the
/// closed rectangle K, q = 1 elsewhere.
inline SparseMatrix assemble_robin_mass(const Mesh& mesh, const Rect& k_rect) {
    return assemble_boundary_mass(mesh, [&](const BoundaryEdge& e) {
        if (e.tag != EdgeTag::HoleBoundary) return false;
        const Point mid = 0.5 * (mesh.nodes[e.v[0]] + mesh.nodes[e.v[1]]);
        return !k_rect.contains_closed(mid);
    });
}

/// Mass over every hole-boundary edge (q = 1 on all of Sigma_eps).
inline SparseMatrix assemble_hole_boundary_mass(const Mesh& mesh) {
    return assemble_boundary_mass(mesh, [](const BoundaryEdge& e) { return e.tag == EdgeTag::HoleBoundary; });
}

inline bool is_exactly_symmetric(const SparseMatrix& m) {
    const SparseMatrix t = m.transpose();
    if (t.nonZeros() != m.nonZeros()) return false;
    for (int k = 0; k < m.outerSize(); ++k) {
        SparseMatrix::InnerIterator a(m, k), b(t, k);
        for (; a && b; ++a, ++b)
            if (a.index() != b.index() || a.value() != b.value()) return false;
        if (a || b) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Constraints
// ---------------------------------------------------------------------------

enum class ConstraintKind { Dirichlet, Periodic };

/// Dirichlet nodes (value 0) and periodic (slave, master) pairs.
struct ConstraintMap {
    std::vector<int> dirichlet;
    std::vector<std::pair<int, int>> periodic;

    bool empty() const { return dirichlet.empty() && periodic.empty(); }

    static ConstraintMap dirichlet_on(std::vector<int> nodes) {
        ConstraintMap c;
        c.dirichlet = std::move(nodes);
        return c;
    }
};

/// Nodes of all OUTER edges, ascending.
inline std::vector<int> outer_nodes(const Mesh& mesh) {
    std::vector<int> out;
    for (const auto& e : mesh.edges)
        if (e.tag == EdgeTag::Outer) {
            out.push_back(e.v[0]);
            out.push_back(e.v[1]);
        }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

/// Index maps between full node vectors and retained degrees of freedom.
/// Expansion is full = P * reduced, where P has one unit entry per
/// non-Dirichlet node (slaves copy their master).
class Reduction {
public:
    Reduction() = default;

    Reduction(std::size_t n, const ConstraintMap& cmap) : n_(n) {
        std::vector<int> role(n, 0); // 0 free, 1 dirichlet, 2 slave, 3 master
        std::vector<int> master_of(n, -1);
        auto check = [n](int i) {
            if (i < 0 || static_cast<std::size_t>(i) >= n)
                throw ConstraintError("constraint index " + std::to_string(i) + " out of range");
        };
        for (int d : cmap.dirichlet) {
            check(d);
            role[d] = 1;
        }
        for (auto [s, m] : cmap.periodic) {
            check(s);
            check(m);
            if (s == m) throw ConstraintError("node paired with itself");
            if (role[s] == 1 || role[m] == 1) throw ConstraintError("node both Dirichlet and periodic");
            if (role[s] == 3 || role[m] == 2) throw ConstraintError("node both master and slave");
            if (role[s] == 2 && master_of[s] != m) throw ConstraintError("slave paired with two masters");
            role[s] = 2;
            role[m] = 3;
            master_of[s] = m;
        }
        full_to_reduced_.assign(n, -1);
        for (std::size_t i = 0; i < n; ++i)
            if (role[i] == 0 || role[i] == 3) {
                full_to_reduced_[i] = static_cast<int>(reduced_to_full_.size());
                reduced_to_full_.push_back(static_cast<int>(i));
            }
        for (std::size_t i = 0; i < n; ++i)
            if (role[i] == 2) full_to_reduced_[i] = full_to_reduced_[master_of[i]];
        if (reduced_to_full_.empty()) throw ConstraintError("degenerate constraint set: no degrees of freedom left");
    }

    std::size_t full_size() const { return n_; }
    std::size_t reduced_size() const { return reduced_to_full_.size(); }
    const std::vector<int>& full_to_reduced() const { return full_to_reduced_; }
    const std::vector<int>& reduced_to_full() const { return reduced_to_full_; }

    /// P^T A P, symmetrised so the result is symmetric to the last bit.
    SparseMatrix reduce(const SparseMatrix& a) const {
        const auto m = static_cast<Eigen::Index>(reduced_size());
        if (a.rows() == 0) return SparseMatrix(m, m);
        if (static_cast<std::size_t>(a.rows()) != n_ || a.rows() != a.cols())
            throw ConstraintError("matrix size does not match the constraint map");
        Triplets trips;
        trips.reserve(static_cast<std::size_t>(a.nonZeros()));
        for (int k = 0; k < a.outerSize(); ++k)
            for (SparseMatrix::InnerIterator it(a, k); it; ++it) {
                const int r = full_to_reduced_[it.row()], c = full_to_reduced_[it.col()];
                if (r >= 0 && c >= 0) trips.emplace_back(r, c, it.value());
            }
        SparseMatrix out(m, m);
        out.setFromTriplets(trips.begin(), trips.end());
        SparseMatrix sym = 0.5 * (out + SparseMatrix(out.transpose()));
        sym.makeCompressed();
        return sym;
    }

    /// P^T f: sums slave contributions into their masters.
    Vector restrict_load(const Vector& f) const {
        check_full(f);
        Vector out = Vector::Zero(static_cast<Eigen::Index>(reduced_size()));
        for (std::size_t i = 0; i < n_; ++i)
            if (full_to_reduced_[i] >= 0) out[full_to_reduced_[i]] += f[static_cast<Eigen::Index>(i)];
        return out;
    }

    /// Values at the retained nodes.
    Vector restrict_field(const Vector& u) const {
        check_full(u);
        Vector out(static_cast<Eigen::Index>(reduced_size()));
        for (std::size_t r = 0; r < reduced_size(); ++r) out[static_cast<Eigen::Index>(r)] = u[reduced_to_full_[r]];
        return out;
    }

    Vector expand(const Vector& r) const {
        if (static_cast<std::size_t>(r.size()) != reduced_size()) throw ConstraintError("reduced vector size mismatch");
        Vector out = Vector::Zero(static_cast<Eigen::Index>(n_));
        for (std::size_t i = 0; i < n_; ++i)
            if (full_to_reduced_[i] >= 0) out[static_cast<Eigen::Index>(i)] = r[full_to_reduced_[i]];
        return out;
    }

    Eigen::MatrixXd expand(const Eigen::MatrixXd& r) const {
        Eigen::MatrixXd out(static_cast<Eigen::Index>(n_), r.cols());
        for (Eigen::Index c = 0; c < r.cols(); ++c) out.col(c) = expand(Vector(r.col(c)));
        return out;
    }

private:
    void check_full(const Vector& v) const {
        if (static_cast<std::size_t>(v.size()) != n_) throw ConstraintError("full vector size mismatch");
    }

    std::size_t n_ = 0;
    std::vector<int> full_to_reduced_;
    std::vector<int> reduced_to_full_;
};

struct ReducedSystem {
    Reduction map;
    SparseMatrix S, M, R;
};

/// Eliminates Dirichlet rows/columns and folds periodic slaves into masters.
/// R may be an empty (0 x 0) matrix, in which case a zero reduced R is returned.
inline ReducedSystem apply_constraints(const SparseMatrix& S, const SparseMatrix& M, const SparseMatrix& R,
                                       const ConstraintMap& cmap) {
    if (S.rows() != M.rows() || (R.rows() != 0 && R.rows() != S.rows()))
        throw ConstraintError("operator sizes disagree");
    ReducedSystem sys;
    sys.map = Reduction(static_cast<std::size_t>(S.rows()), cmap);
    sys.S = sys.map.reduce(S);
    sys.M = sys.map.reduce(M);
    sys.R = sys.map.reduce(R);
    return sys;
}

struct Norms {
    double l2 = 0.0;          ///< int u^2
    double h1_semi = 0.0;     ///< int |grad u|^2
    double eps_norm_sq = 0.0; ///< int |grad u|^2 + int_{Sigma \ K} u^2
};

inline Norms norms(const SparseMatrix& S, const SparseMatrix& M, const SparseMatrix& R, const Vector& u) {
    if (u.size() != S.rows() || u.size() != M.rows() || (R.rows() != 0 && u.size() != R.rows()))
        throw AssemblyError("field size does not match the operators");
    Norms n;
    n.l2 = u.dot(M * u);
    n.h1_semi = u.dot(S * u);
    n.eps_norm_sq = n.h1_semi + (R.rows() ? u.dot(R * u) : 0.0);
    return n;
}

// ---------------------------------------------------------------------------
// Field helpers
// ---------------------------------------------------------------------------

template <class F>
Vector interpolate(const Mesh& mesh, F&& f) {
    Vector u(static_cast<Eigen::Index>(mesh.node_count()));
    for (std::size_t i = 0; i < mesh.node_count(); ++i) u[static_cast<Eigen::Index>(i)] = f(mesh.nodes[i]);
    return u;
}

/// Piecewise-constant gradient of a P1 field on triangle t.
inline Point element_gradient(const Mesh& mesh, std::size_t t, const Vector& u) {
    const auto g = basis_gradients(mesh, t);
    const auto& v = mesh.triangles[t].v;
    Point out{};
    for (int a = 0; a < 3; ++a) out = out + u[v[a]] * g[a];
    return out;
}

/// Area-weighted average of adjacent element gradients at every node.
inline std::vector<Point> recover_gradient(const Mesh& mesh, const Vector& u, TriangleSet which = TriangleSet::Fluid) {
    std::vector<Point> grad(mesh.node_count());
    std::vector<double> weight(mesh.node_count(), 0.0);
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (!selected(mesh.triangles[t], which)) continue;
        const double area = mesh.area(t);
        const Point g = element_gradient(mesh, t, u);
        for (int v : mesh.triangles[t].v) {
            grad[v] = grad[v] + area * g;
            weight[v] += area;
        }
    }
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (weight[i] > 0.0) grad[i] = (1.0 / weight[i]) * grad[i];
    return grad;
}

/// Writes a matrix as 1-based (row col value) triplets behind a size line.
inline void dump_coo(std::ostream& os, const SparseMatrix& m) {
    os << "%%coo " << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n' << std::setprecision(17);
    for (int k = 0; k < m.outerSize(); ++k)
        for (SparseMatrix::InnerIterator it(m, k); it; ++it)
            os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

} // namespace homoglab
