/**
 * @file corrector.hpp
 * @brief First-order corrector U = u + eps psi chi(x/eps).grad u, orthogonal
 *        alignment of eigenspaces, principal-angle gap and the Visik check.
 */
#pragma once

#include "homoglab/cell.hpp"
#include "homoglab/eigensolve.hpp"
#include "homoglab/error.hpp"
#include "homoglab/fem.hpp"
#include "homoglab/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <vector>

namespace homoglab {

struct CorrectorField {
    Vector values;
    bool cutoff_applied = false;
    int source_index = 0;
    double eps = 1.0;
};

/// psi(x) = clamp(dist(x, dA) / (2 eps), 0, 1) inside A, 0 outside.
inline double cutoff_weight(Point x, const Rect& a, double eps) {
    return std::clamp(a.interior_distance(x) / (2.0 * eps), 0.0, 1.0);
}

/// Corrector at every node of `target`. `template_node` (optional, per target
/// node) lets chi be read from the cell solution without point location.
inline CorrectorField build_corrector(const DomainField& u_hom, const ChiEvaluator& chi, double eps, const Mesh& target,
                                      const Rect& a, bool cutoff, const std::vector<int>* template_node = nullptr,
                                      int source_index = 0) {
    CorrectorField out;
    out.cutoff_applied = cutoff;
    out.source_index = source_index;
    out.eps = eps;
    out.values = Vector::Zero(static_cast<Eigen::Index>(target.node_count()));
    std::vector<std::size_t> failed;
    for (std::size_t i = 0; i < target.node_count(); ++i) {
        const Point x = target.nodes[i];
        if (!a.contains_open(x)) continue;
        const auto s = u_hom.sample(x);
        if (!s.inside) {
            failed.push_back(i);
            continue;
        }
        Eigen::Vector2d c;
        if (template_node) {
            c = chi.node_value((*template_node)[i]);
        } else {
            try {
                c = chi.eval(x, eps).value;
            } catch (const LocateError&) {
                failed.push_back(i);
                continue;
            }
        }
        const double psi = cutoff ? cutoff_weight(x, a, eps) : 1.0;
        out.values[static_cast<Eigen::Index>(i)] = s.value + eps * psi * c.dot(s.grad);
    }
    if (!failed.empty()) {
        std::ostringstream os;
        os << "point location failed at " << failed.size() << " node(s):";
        for (std::size_t k = 0; k < std::min<std::size_t>(failed.size(), 8); ++k) os << ' ' << failed[k];
        throw LocateError(os.str());
    }
    return out;
}

struct AlignmentResult {
    Eigen::MatrixXd m;                 ///< orthogonal m_j x m_j aligner
    std::vector<double> heps_err;      ///< ||U^l - sum_k m_lk u^k||_eps
    std::vector<double> l2_err;        ///< same in L^2
    std::vector<double> singular_values;
    double gap = 0.0;                  ///< filled by the caller when computed
};

/// Orthogonal Procrustes: with G_lk = <U^l, u^k>_M = W S V^T, M_eps = W V^T.
/// `energy` may be empty, in which case heps_err stays empty.
inline AlignmentResult align_eigenspaces(const Eigen::MatrixXd& u_eps, const Eigen::MatrixXd& U, const SparseMatrix& mass,
                                         const SparseMatrix& energy = SparseMatrix()) {
    if (u_eps.cols() != U.cols() || u_eps.rows() != U.rows() || u_eps.rows() != mass.rows())
        throw AlignmentError("eigenspace families differ in shape");
    const Eigen::MatrixXd g = U.transpose() * (mass * u_eps);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(g, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv.minCoeff() < 1e-12) throw AlignmentError("cross Gram matrix is rank deficient");
    AlignmentResult r;
    r.m = svd.matrixU() * svd.matrixV().transpose();
    r.singular_values.assign(sv.data(), sv.data() + sv.size());
    const Eigen::MatrixXd diff = U - u_eps * r.m.transpose();
    for (Eigen::Index l = 0; l < diff.cols(); ++l) {
        const Vector d = diff.col(l);
        r.l2_err.push_back(std::sqrt(std::max(0.0, d.dot(mass * d))));
        if (energy.rows()) r.heps_err.push_back(std::sqrt(std::max(0.0, d.dot(energy * d))));
    }
    return r;
}

namespace detail {

/// Columns spanning the same space, orthonormal in the mass inner product.
inline Eigen::MatrixXd mass_orthonormal_basis(const Eigen::MatrixXd& x, const SparseMatrix& mass) {
    Eigen::MatrixXd g = x.transpose() * (mass * x);
    g = 0.5 * (g + g.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g);
    const auto& ev = es.eigenvalues();
    if (ev.size() == 0 || !(ev.minCoeff() > 1e-14 * std::max(1.0, ev.maxCoeff())))
        throw AlignmentError("subspace basis is rank deficient");
    return x * es.eigenvectors() * ev.cwiseSqrt().cwiseInverse().asDiagonal();
}

} // namespace detail

/// Largest principal-angle sine between span(a) and span(b) in the mass inner product.
inline double eigenspace_gap(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const SparseMatrix& mass) {
    if (a.cols() != b.cols() || a.rows() != b.rows() || a.rows() != mass.rows())
        throw AlignmentError("eigenspace gap needs equal dimensions on a common mesh");
    const Eigen::MatrixXd qa = detail::mass_orthonormal_basis(a, mass);
    const Eigen::MatrixXd qb = detail::mass_orthonormal_basis(b, mass);
    const Eigen::MatrixXd c = qa.transpose() * (mass * qb);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(c);
    const double smin = std::min(1.0, svd.singularValues().minCoeff());
    return std::clamp(std::sqrt(std::max(0.0, 1.0 - smin * smin)), 0.0, 1.0);
}

struct VisikResult {
    double alpha = 0.0;        ///< ||K_eps U - mu U||_eps with ||U||_eps = 1
    double distance = 0.0;     ///< distance from mu to the discrete spectrum of K_eps
    double nearest_mu = 0.0;   ///< nearest computed mu_j = 1/lambda_j
    bool searched = false;     ///< full-spectrum search was needed
    bool certificate = false;
};

/// Residual of the trial pair (U, mu) for K_eps and the nearest eigenvalue test.
/// The computed spectrum is tried first; if none of its mu_j lies within alpha,
/// the full discrete spectrum is searched.
inline VisikResult visik_check(const OperatorBundle& b, const Vector& u, double mu, const Spectrum& spectrum) {
    const double nrm = std::sqrt(std::max(0.0, energy_product(b, u, u)));
    if (!(nrm > 0.0)) throw AssemblyError("Visik check needs a trial field with nonzero eps-norm");
    const Vector un = u / nrm;
    const Vector w = apply_Keps(b, un) - mu * un;
    VisikResult r;
    r.alpha = std::sqrt(std::max(0.0, energy_product(b, w, w)));
    r.distance = std::numeric_limits<double>::infinity();
    for (double lam : spectrum.values) {
        const double d = std::abs(1.0 / lam - mu);
        if (d < r.distance) {
            r.distance = d;
            r.nearest_mu = 1.0 / lam;
        }
    }
    const double slack = r.alpha * (1.0 + 1e-8);
    if (!(r.distance <= slack)) {
        r.searched = true;
        const auto near = nearest_eigenvalue_distance(b.reduced_energy(), b.system.M, mu, *b.energy);
        if (near.distance < r.distance) {
            r.distance = near.distance;
            r.nearest_mu = mu + near.ritz;
        }
    }
    r.certificate = r.distance <= slack;
    return r;
}

} // namespace homoglab
