/**
 * @file eigensolve.hpp
 * @brief Deterministic generalized symmetric eigensolver A u = lambda B u for
 *        the k smallest pairs, plus the source solve behind K_eps.
 */
#pragma once

#include "homoglab/error.hpp"
#include "homoglab/fem.hpp"

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

namespace homoglab {

enum class Normalization { BOrthonormal };

struct EigenOptions {
    double tol = 1e-9;           ///< residual tolerance relative to ||u||_B
    int max_iterations = 2000;
    int dense_threshold = 500;   ///< dense solve at or below this dimension
    int block = 0;               ///< subspace size, 0 = max(2k, k+8)
    std::uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

struct Spectrum {
    std::vector<double> values;  ///< ascending
    Eigen::MatrixXd vectors;     ///< one column per pair
    std::vector<double> residuals;
    Normalization normalization = Normalization::BOrthonormal;
    int iterations = 0;          ///< 0 for the dense path

    std::size_t size() const { return values.size(); }
    Vector vector(std::size_t j) const { return vectors.col(static_cast<Eigen::Index>(j)); }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Uniform entries in [-1, 1), reproducible across platforms.
inline Eigen::MatrixXd start_block(Eigen::Index n, Eigen::Index p, std::uint64_t seed) {
    Eigen::MatrixXd x(n, p);
    std::uint64_t s = seed;
    for (Eigen::Index c = 0; c < p; ++c)
        for (Eigen::Index r = 0; r < n; ++r)
            x(r, c) = static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-52 - 1.0;
    return x;
}

/// Makes the columns of x orthonormal in the inner product of `b` (two passes
/// of Cholesky QR).
inline bool orthonormalize(Eigen::MatrixXd& x, const SparseMatrix& b) {
    for (int pass = 0; pass < 2; ++pass) {
        const Eigen::MatrixXd bx = b * x;
        Eigen::MatrixXd g = x.transpose() * bx;
        g = 0.5 * (g + g.transpose()).eval();
        Eigen::LLT<Eigen::MatrixXd> llt(g);
        if (llt.info() != Eigen::Success) return false;
        x = llt.matrixU().solve<Eigen::OnTheRight>(x);
    }
    return true;
}

inline void apply_sign_convention(Eigen::MatrixXd& v) {
    for (Eigen::Index c = 0; c < v.cols(); ++c)
        for (Eigen::Index r = 0; r < v.rows(); ++r)
            if (std::abs(v(r, c)) > 1e-8) {
                if (v(r, c) < 0.0) v.col(c) *= -1.0;
                break;
            }
}

inline std::vector<double> residual_norms(const SparseMatrix& a, const SparseMatrix& b, const Eigen::MatrixXd& v,
                                          const std::vector<double>& lambda) {
    std::vector<double> out(lambda.size());
    for (std::size_t j = 0; j < lambda.size(); ++j) {
        const Vector x = v.col(static_cast<Eigen::Index>(j));
        const Vector bx = b * x;
        out[j] = (a * x - lambda[j] * bx).norm() / std::sqrt(std::max(x.dot(bx), 1e-300));
    }
    return out;
}

inline void check_pencil(const SparseMatrix& a, const SparseMatrix& b, int k) {
    if (a.rows() != a.cols() || b.rows() != b.cols() || a.rows() != b.rows())
        throw SolverError("pencil matrices must be square and of equal size");
    if (k < 1 || k >= a.rows())
        throw SolverError("need 1 <= k < dimension (k=" + std::to_string(k) + ", n=" + std::to_string(a.rows()) + ")");
}

} // namespace detail

/// Factorized symmetric positive definite operator with a residual-checked solve.
class LinearSolver {
public:
    explicit LinearSolver(const SparseMatrix& a) : a_(a) {
        if (a.rows() != a.cols()) throw SolverError("source operator must be square");
        llt_.compute(a_);
        if (llt_.info() != Eigen::Success) throw SolverError("operator is singular or not positive definite");
    }

    Vector solve(const Vector& rhs) const {
        if (rhs.size() != a_.rows()) throw SolverError("right-hand side size mismatch");
        const double rn = rhs.norm();
        if (rn == 0.0) return Vector::Zero(rhs.size());
        Vector u = llt_.solve(rhs);
        for (int refine = 0; refine < 3; ++refine) {
            const Vector r = rhs - a_ * u;
            if (r.norm() <= 1e-10 * rn) return u;
            u += llt_.solve(r);
        }
        const double res = (rhs - a_ * u).norm();
        if (!(res <= 1e-10 * rn))
            throw SolverError("source solve residual " + std::to_string(res / rn) + " above 1e-10", {res / rn});
        return u;
    }

    Eigen::MatrixXd solve_block(const Eigen::MatrixXd& rhs) const { return llt_.solve(rhs); }

    const SparseMatrix& matrix() const { return a_; }

private:
    SparseMatrix a_;
    Eigen::SimplicialLLT<SparseMatrix> llt_;
};

inline Vector solve_source(const SparseMatrix& a, const Vector& rhs) { return LinearSolver(a).solve(rhs); }

/// k smallest eigenpairs of A u = lambda B u, B-orthonormal, ascending.
inline Spectrum solve_gevp(const SparseMatrix& a, const SparseMatrix& b, int k, const EigenOptions& opt = {}) {
    detail::check_pencil(a, b, k);
    const Eigen::Index n = a.rows();
    {
        Eigen::SimplicialLLT<SparseMatrix> bllt(b);
        if (bllt.info() != Eigen::Success) throw SolverError("B is not positive definite");
    }

    Spectrum out;
    if (n <= opt.dense_threshold) {
        const Eigen::MatrixXd ad = Eigen::MatrixXd(a), bd = Eigen::MatrixXd(b);
        Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(ad, bd);
        if (es.info() != Eigen::Success) throw SolverError("dense generalized eigensolver failed");
        out.values.assign(es.eigenvalues().data(), es.eigenvalues().data() + k);
        out.vectors = es.eigenvectors().leftCols(k);
    } else {
        LinearSolver inv(a);
        const Eigen::Index p =
            std::min<Eigen::Index>(n, opt.block > 0 ? opt.block : std::max(2 * k, k + 8));
        Eigen::MatrixXd x = detail::start_block(n, p, opt.seed);
        if (!detail::orthonormalize(x, b)) throw SolverError("start block is rank deficient");
        std::vector<double> best(static_cast<std::size_t>(k), std::numeric_limits<double>::infinity());
        bool converged = false;
        for (int it = 1; it <= opt.max_iterations; ++it) {
            Eigen::MatrixXd y = inv.solve_block(Eigen::MatrixXd(b * x));
            if (!detail::orthonormalize(y, b)) throw SolverError("subspace collapsed during iteration", best);
            Eigen::MatrixXd h = y.transpose() * (a * y);
            h = 0.5 * (h + h.transpose()).eval();
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
            x = y * es.eigenvectors();
            out.values.assign(es.eigenvalues().data(), es.eigenvalues().data() + k);
            const auto res = detail::residual_norms(a, b, x.leftCols(k), out.values);
            for (std::size_t j = 0; j < res.size(); ++j) best[j] = std::min(best[j], res[j]);
            out.iterations = it;
            if (std::all_of(res.begin(), res.end(), [&](double r) { return r <= opt.tol; })) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw SolverError("eigensolver did not converge in " + std::to_string(opt.max_iterations) + " iterations",
                              best);
        out.vectors = x.leftCols(k);
    }
    detail::apply_sign_convention(out.vectors);
    out.residuals = detail::residual_norms(a, b, out.vectors, out.values);
    for (std::size_t j = 0; j < out.residuals.size(); ++j)
        if (!(out.residuals[j] <= std::max(opt.tol, 1e-9)))
            throw SolverError("eigenpair " + std::to_string(j) + " misses the residual tolerance", out.residuals);
    return out;
}

struct NearestEigenvalue {
    double distance = 0.0;  ///< upper bound on min_j |nu_j|, tight on convergence
    double ritz = 0.0;      ///< Ritz value attaining the bound
    int iterations = 0;
    bool converged = false;
};

/// Distance from mu to the spectrum of A^{-1}B (self-adjoint in the A inner
/// product). Works on the shifted pencil (B - mu A) x = nu A x with block
/// inverse iteration; each Ritz pair (nu, x) certifies an eigenvalue within
/// |nu| + ||(B - mu A)x - nu A x||_{A^{-1}} of mu, so the returned distance is
/// an upper bound at every iteration.
inline NearestEigenvalue nearest_eigenvalue_distance(const SparseMatrix& a, const SparseMatrix& b, double mu,
                                                     const LinearSolver& a_inv, int max_iterations = 400,
                                                     std::uint64_t seed = 0x243f6a8885a308d3ULL) {
    detail::check_pencil(a, b, 1);
    const Eigen::Index n = a.rows();
    SparseMatrix c = b - mu * a;
    c.makeCompressed();
    Eigen::SparseLU<SparseMatrix> lu;
    lu.analyzePattern(c);
    lu.factorize(c);
    NearestEigenvalue best;
    best.distance = std::numeric_limits<double>::infinity();
    if (lu.info() != Eigen::Success) {
        best.distance = 0.0;
        best.converged = true;
        return best;
    }
    const Eigen::Index p = std::min<Eigen::Index>(n, 6);
    Eigen::MatrixXd x = detail::start_block(n, p, seed);
    if (!detail::orthonormalize(x, a)) throw SolverError("start block is rank deficient");
    for (int it = 1; it <= max_iterations; ++it) {
        Eigen::MatrixXd y = lu.solve(Eigen::MatrixXd(a * x));
        if (!detail::orthonormalize(y, a)) break;
        Eigen::MatrixXd h = y.transpose() * (c * y);
        h = 0.5 * (h + h.transpose()).eval();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(h);
        x = y * es.eigenvectors();
        bool tight = false;
        for (Eigen::Index j = 0; j < p; ++j) {
            const Vector v = x.col(j);
            const double nu = es.eigenvalues()[j];
            const Vector r = c * v - nu * (a * v);
            const double rn = std::sqrt(std::max(0.0, r.dot(a_inv.solve(r))));
            const double bound = std::abs(nu) + rn;
            if (bound < best.distance) {
                best.distance = bound;
                best.ritz = nu;
            }
            if (bound <= best.distance && rn <= 1e-10 * std::max(std::abs(nu), 1e-300)) tight = true;
        }
        best.iterations = it;
        if (tight) {
            best.converged = true;
            break;
        }
    }
    return best;
}

} // namespace homoglab
