/**
 * @file lab.hpp
 * @brief Randomized stress checks of the trace, volume-surface, periodic
 *        oscillation, strip Poincare and eigenvalue-bound inequalities.
 *
 * Every check is a pure function of its inputs and seed. Gaussian draws come
 * from mt19937_64 through a local Box-Muller transform so reports reproduce
 * across standard libraries.
 */
#pragma once

#include "homoglab/cell.hpp"
#include "homoglab/error.hpp"
#include "homoglab/fem.hpp"
#include "homoglab/geometry.hpp"
#include "homoglab/spectral.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace homoglab {

struct LabRow {
    std::string check;
    double eps = 0.0;      ///< eps, or delta for the strip check
    double ratio = 0.0;    ///< worst ratio over the samples
    int samples = 0;
    int skipped = 0;       ///< samples with a vanishing denominator
    std::uint64_t seed = 0;
    bool pass = true;
};

struct LabSummary {
    std::string check;
    double spread = 0.0;   ///< max ratio / min ratio over the rows of the check
    double limit = 4.0;
    bool pass = true;
};

struct LabReport {
    std::vector<LabRow> rows;
    std::vector<LabSummary> summaries;

    bool pass() const {
        return std::all_of(rows.begin(), rows.end(), [](const LabRow& r) { return r.pass; }) &&
               std::all_of(summaries.begin(), summaries.end(), [](const LabSummary& s) { return s.pass; });
    }
};

/// Random field families for the volume-surface check.
enum class FieldModel { WhiteNoise, TwoScale };

class NormalSource {
public:
    explicit NormalSource(std::uint64_t seed) : gen_(seed) {}

    double operator()() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

private:
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    std::mt19937_64 gen_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// Seed for a named check (and sub-index) derived from the master seed.
inline std::uint64_t derive_seed(std::uint64_t master, const std::string& name, std::uint64_t index = 0) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) h = (h ^ c) * 0x100000001b3ULL;
    std::uint64_t s = master ^ h ^ (index * 0xd1b54a32d192ed03ULL);
    return detail::splitmix64(s);
}

/// Sum of a_mn sin(m pi x) sin(n pi y), m, n <= modes, over the unit square.
struct SineField {
    int modes = 4;
    std::vector<double> coeff;

    static SineField random(NormalSource& normal, int modes = 4) {
        SineField f;
        f.modes = modes;
        for (int m = 1; m <= modes; ++m)
            for (int n = 1; n <= modes; ++n) f.coeff.push_back(normal() / (m * m + n * n));
        return f;
    }

    double value(Point p) const { return eval(p).first; }

    std::pair<double, Eigen::Vector2d> eval(Point p) const {
        const double pi = std::numbers::pi;
        double v = 0.0;
        Eigen::Vector2d g = Eigen::Vector2d::Zero();
        std::size_t k = 0;
        for (int m = 1; m <= modes; ++m)
            for (int n = 1; n <= modes; ++n, ++k) {
                const double sx = std::sin(m * pi * p.x), cx = std::cos(m * pi * p.x);
                const double sy = std::sin(n * pi * p.y), cy = std::cos(n * pi * p.y);
                v += coeff[k] * sx * sy;
                g[0] += coeff[k] * m * pi * cx * sy;
                g[1] += coeff[k] * n * pi * sx * cy;
            }
        return {v, g};
    }
};

namespace detail {

inline double safe_ratio(double num, double den, double scale, int& skipped) {
    if (!(den > 1e-14 * std::max(scale, 1e-300))) {
        ++skipped;
        return -1.0;
    }
    return num / den;
}

inline Vector white_noise(NormalSource& normal, std::size_t n, const std::vector<int>& zero_nodes) {
    Vector u(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = normal();
    for (int z : zero_nodes) u[z] = 0.0;
    return u;
}

/// Periodic profile with different volume and hole-boundary averages.
inline double two_scale_profile(Point y) {
    return std::cos(2.0 * std::numbers::pi * y.x) + std::cos(2.0 * std::numbers::pi * y.y);
}

/// Element-local assembly restricted to the triangles accepted by `keep`.
template <class Keep>
std::pair<SparseMatrix, SparseMatrix> restricted_forms(const Mesh& mesh, Keep&& keep) {
    Mesh sub;
    sub.nodes = mesh.nodes;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t)
        if (keep(t)) sub.triangles.push_back(mesh.triangles[t]);
    return {assemble_mass(sub, TriangleSet::All), assemble_stiffness(sub, Eigen::Matrix2d::Identity(), TriangleSet::All)};
}

} // namespace detail

/// int_Sigma u^2 / (eps^-1 int u^2 + eps int |grad u|^2) over white-noise fields.
inline LabRow check_trace(const OperatorBundle& b, int n_samples, std::uint64_t seed) {
    if (b.kind != ProblemKind::Perforated) throw ConfigError("trace check needs a perforated bundle");
    LabRow row{"trace", b.eps, 0.0, n_samples, 0, seed, true};
    NormalSource normal(seed);
    for (int s = 0; s < n_samples; ++s) {
        const Vector u = detail::white_noise(normal, b.node_count(), b.constraints.dirichlet);
        const double num = u.dot(b.sigma_mass * u);
        const double l2 = u.dot(b.M * u), h1 = u.dot(b.S * u);
        const double den = l2 / b.eps + b.eps * h1;
        row.ratio = std::max(row.ratio, detail::safe_ratio(num, den, num, row.skipped));
    }
    row.pass = std::isfinite(row.ratio) && row.ratio >= 0.0;
    return row;
}

/// Cells Y_i (lattice index) with Y_i contained in the closure of Omega \ K.
inline bool cell_outside(const LatticeIndex& c, double eps, const Rect& k) {
    const double x0 = c.ix * eps, x1 = (c.ix + 1) * eps, y0 = c.iy * eps, y1 = (c.iy + 1) * eps;
    const double tol = 1e-12;
    return x1 <= k.x0 + tol || x0 >= k.x1 - tol || y1 <= k.y0 + tol || y0 >= k.y1 - tol;
}

/// |C*/eps int_{Om^K} w^2 - int_{Sigma^K} w^2| / int_{Om^K} |grad w|^2.
inline LabRow check_volsup(const OperatorBundle& b, const CellSolution& sol, const Rect& k_rect, int n_samples,
                           std::uint64_t seed, FieldModel model = FieldModel::TwoScale) {
    if (b.kind != ProblemKind::Perforated) throw ConfigError("volume-surface check needs a perforated bundle");
    const Mesh& mesh = *b.mesh;
    const auto [mk, sk] = detail::restricted_forms(mesh, [&](std::size_t t) {
        return mesh.triangles[t].region == Region::Fluid && !k_rect.contains_closed(mesh.centroid(t));
    });
    const SparseMatrix sigma = assemble_boundary_mass(mesh, [&](const BoundaryEdge& e) {
        return e.tag == EdgeTag::HoleBoundary && cell_outside(e.cell, b.eps, k_rect);
    });
    if (mk.nonZeros() == 0 || sigma.nonZeros() == 0)
        throw ConfigError("the set outside K holds no complete perforated cell");

    LabRow row{"volsup", b.eps, 0.0, n_samples, 0, seed, true};
    NormalSource normal(seed);
    for (int s = 0; s < n_samples; ++s) {
        Vector w;
        if (model == FieldModel::WhiteNoise) {
            w = detail::white_noise(normal, b.node_count(), b.constraints.dirichlet);
        } else {
            const SineField g = SineField::random(normal), h = SineField::random(normal);
            w.resize(static_cast<Eigen::Index>(b.node_count()));
            for (std::size_t i = 0; i < b.node_count(); ++i) {
                const Point x = mesh.nodes[i];
                w[static_cast<Eigen::Index>(i)] =
                    g.value(x) + b.eps * h.value(x) * detail::two_scale_profile(ChiEvaluator::reduce(x, b.eps));
            }
            for (int z : b.constraints.dirichlet) w[z] = 0.0;
        }
        const double vol = sol.c_star / b.eps * w.dot(mk * w);
        const double num = std::abs(vol - w.dot(sigma * w));
        const double den = w.dot(sk * w);
        row.ratio = std::max(row.ratio, detail::safe_ratio(num, den, vol, row.skipped));
    }
    row.pass = std::isfinite(row.ratio) && row.ratio >= 0.0;
    return row;
}

/// |int_{Omega_eps} chi^1(x/eps) u v| / (eps ||grad u|| ||grad v||) for node-space fields
/// on a tiled full mesh; u and v are given on all of Omega, chi on the fluid part.
inline double periodic_osc_ratio(const TiledMesh& tiled, const CellSolution& sol, double eps, const Vector& u,
                                 const Vector& v) {
    const Mesh& full = tiled.full;
    if (u.size() != static_cast<Eigen::Index>(full.node_count()) || v.size() != u.size())
        throw AssemblyError("field size does not match the tiled mesh");
    double integral = 0.0;
    for (std::size_t t = 0; t < full.triangles.size(); ++t) {
        const auto& tri = full.triangles[t];
        if (tri.region != Region::Fluid) continue;
        double c[3], a[3], w[3];
        for (int k = 0; k < 3; ++k) {
            c[k] = sol.chi[0][tiled.template_node[static_cast<std::size_t>(tri.v[k])]];
            a[k] = u[tri.v[k]];
            w[k] = v[tri.v[k]];
        }
        double q = 0.0;
        for (int k = 0; k < 3; ++k) {
            const int l = (k + 1) % 3;
            q += 0.25 * (c[k] + c[l]) * (a[k] + a[l]) * (w[k] + w[l]) * 0.5;
        }
        integral += full.area(t) * q / 3.0;
    }
    const SparseMatrix s = assemble_stiffness(full, Eigen::Matrix2d::Identity(), TriangleSet::All);
    const double nu = std::sqrt(std::max(0.0, u.dot(s * u))), nv = std::sqrt(std::max(0.0, v.dot(s * v)));
    if (nu == 0.0 || nv == 0.0) return 0.0;
    return std::abs(integral) / (eps * nu * nv);
}

/// Worst periodic-oscillation ratio per eps over random pairs: u a smooth sine
/// field, v = g + eps chi(x/eps).grad g with g smooth, extended harmonically
/// into the holes.
inline std::vector<LabRow> check_periodic_osc(std::shared_ptr<const CellMesh> cell, const CellSolution& sol,
                                              const std::vector<double>& eps_list, int n_samples, std::uint64_t seed) {
    std::vector<LabRow> rows;
    for (double eps : eps_list) {
        DomainConfig cfg;
        cfg.eps = eps;
        const TiledMesh tiled = tile_cell_mesh(cfg, *cell);
        const HoleExtension ext(tiled.full, tiled.perforated.node_count());
        const std::size_t nf = tiled.perforated.node_count();
        LabRow row{"periodic_osc", eps, 0.0, n_samples, 0, seed, true};
        NormalSource normal(seed);
        for (int s = 0; s < n_samples; ++s) {
            const SineField fu = SineField::random(normal), fg = SineField::random(normal);
            const Vector u = interpolate(tiled.full, [&](Point p) { return fu.value(p); });
            Vector vf(static_cast<Eigen::Index>(nf));
            for (std::size_t i = 0; i < nf; ++i) {
                const Point x = tiled.full.nodes[i];
                const auto [g, grad] = fg.eval(x);
                const Eigen::Vector2d c = sol.at_node(tiled.template_node[i]);
                vf[static_cast<Eigen::Index>(i)] = g + eps * c.dot(grad);
            }
            for (const auto& e : tiled.full.edges)
                if (e.tag == EdgeTag::Outer) vf[e.v[0]] = vf[e.v[1]] = 0.0;
            const Vector v = ext.extend(vf);
            const double r = periodic_osc_ratio(tiled, sol, eps, u, v);
            if (!std::isfinite(r)) {
                ++row.skipped;
                continue;
            }
            row.ratio = std::max(row.ratio, r);
        }
        row.pass = std::isfinite(row.ratio) && row.ratio >= 0.0;
        rows.push_back(row);
    }
    return rows;
}

/// int_strip u^2 / (delta^2 int_strip |grad u|^2) with strip = A \ A^delta,
/// membership by triangle centroid. Empty strips are skipped.
inline std::vector<LabRow> check_strip_poincare(const Mesh& a_mesh, const Vector& u, const std::vector<double>& deltas) {
    if (u.size() != static_cast<Eigen::Index>(a_mesh.node_count())) throw AssemblyError("field size does not match the mesh");
    Rect box{std::numeric_limits<double>::max(), std::numeric_limits<double>::max(), -std::numeric_limits<double>::max(),
             -std::numeric_limits<double>::max()};
    for (const auto& p : a_mesh.nodes) {
        box.x0 = std::min(box.x0, p.x);
        box.y0 = std::min(box.y0, p.y);
        box.x1 = std::max(box.x1, p.x);
        box.y1 = std::max(box.y1, p.y);
    }
    std::vector<LabRow> rows;
    for (double delta : deltas) {
        LabRow row{"strip_poincare", delta, 0.0, 1, 0, 0, true};
        const auto [m, s] = detail::restricted_forms(a_mesh, [&](std::size_t t) {
            return box.interior_distance(a_mesh.centroid(t)) <= delta;
        });
        if (m.nonZeros() == 0) {
            row.skipped = 1;
            rows.push_back(row);
            continue;
        }
        const double num = u.dot(m * u), grad = u.dot(s * u);
        const double r = detail::safe_ratio(num, delta * delta * grad, num, row.skipped);
        row.ratio = std::max(0.0, r);
        row.pass = std::isfinite(row.ratio);
        rows.push_back(row);
    }
    return rows;
}

/// Positivity and boundedness of lambda^j_eps over a sweep, and the upper bound
/// lambda^1_eps <= 1.05 alpha^1_h at the two smallest eps. One row per eps with
/// ratio = lambda^1_eps / alpha^1_h.
inline std::vector<LabRow> check_eigen_bounds(const std::vector<std::pair<double, Spectrum>>& sweep,
                                              const Spectrum& dirichlet) {
    if (sweep.size() < 2) throw ConfigError("eigenvalue bounds need at least two eps values");
    if (dirichlet.values.empty()) throw ConfigError("missing Dirichlet spectrum");
    const double alpha1 = dirichlet.values.front();
    std::vector<double> eps;
    for (const auto& [e, s] : sweep) eps.push_back(e);
    std::sort(eps.begin(), eps.end());
    const double second = eps[1];
    std::vector<LabRow> rows;
    for (const auto& [e, s] : sweep) {
        LabRow row{"eigen_bounds", e, s.values.front() / alpha1, 1, 0, 0, true};
        row.pass = s.values.front() > 0.0;
        for (double v : s.values) row.pass = row.pass && std::isfinite(v);
        if (e <= second) row.pass = row.pass && s.values.front() <= 1.05 * alpha1;
        rows.push_back(row);
    }
    return rows;
}

/// Adds max/min spread summaries for every named check present in the rows.
inline void summarize(LabReport& report, double limit = 4.0) {
    report.summaries.clear();
    std::vector<std::string> names;
    for (const auto& r : report.rows)
        if (std::find(names.begin(), names.end(), r.check) == names.end()) names.push_back(r.check);
    for (const auto& n : names) {
        if (n == "eigen_bounds") continue;
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (const auto& r : report.rows)
            if (r.check == n && r.skipped < r.samples) {
                lo = std::min(lo, r.ratio);
                hi = std::max(hi, r.ratio);
            }
        LabSummary s{n, 0.0, limit, false};
        if (lo > 0.0 && std::isfinite(lo)) {
            s.spread = hi / lo;
            s.pass = s.spread <= limit;
        } else {
            s.spread = std::numeric_limits<double>::infinity();
        }
        report.summaries.push_back(s);
    }
}

} // namespace homoglab
