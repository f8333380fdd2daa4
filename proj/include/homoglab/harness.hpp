/**
 * @file harness.hpp
 * @brief Epsilon sweeps, least-squares rate fits and report emission
 *        (JSON, CSV, SVG).
 */
#pragma once

#include "homoglab/cell.hpp"
#include "homoglab/corrector.hpp"
#include "homoglab/error.hpp"
#include "homoglab/lab.hpp"
#include "homoglab/spectral.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace homoglab {

using json = nlohmann::json;

enum class StudyMode { Eigenvalues, Corrector, Eigenspace, Visik, Lab };

inline const char* to_string(StudyMode m) {
    switch (m) {
    case StudyMode::Eigenvalues: return "EIGENVALUES";
    case StudyMode::Corrector: return "CORRECTOR";
    case StudyMode::Eigenspace: return "EIGENSPACE";
    case StudyMode::Visik: return "VISIK";
    case StudyMode::Lab: return "LAB";
    }
    return "?";
}

struct StudyConfig {
    DomainConfig domain;  ///< eps is taken from eps_list
    std::vector<double> eps_list{0.25, 0.125, 0.0625};
    int k = 4;
    double h_macro = 1.0 / 64;
    std::set<StudyMode> modes{StudyMode::Eigenvalues, StudyMode::Corrector, StudyMode::Eigenspace, StudyMode::Visik,
                              StudyMode::Lab};
    std::uint64_t seed = 1;
    int lab_samples = 100;
    std::vector<double> strip_deltas{0.2, 0.1, 0.05};
    bool cutoff = false;
    int threads = 1;
    std::string out_dir = ".";
    bool csv = false;
    bool svg = false;

    bool has(StudyMode m) const { return modes.count(m) != 0; }

    void validate() const {
        if (eps_list.size() < 2) throw ConfigError("eps_list needs at least two values for rate fitting");
        if (k < 1) throw ConfigError("k must be at least 1");
        if (!(h_macro > 0.0)) throw ConfigError("h_macro must be positive");
        if (lab_samples < 1) throw ConfigError("lab_samples must be at least 1");
        std::set<long> seen;
        for (double e : eps_list) {
            DomainConfig d = domain;
            d.eps = e;
            d.validate();
            if (!seen.insert(std::lround(1.0 / e)).second) throw ConfigError("eps_list contains duplicates");
        }
    }
};

/// HOMOGLAB_THREADS, default 1.
inline int threads_from_env() {
    if (const char* v = std::getenv("HOMOGLAB_THREADS")) {
        try {
            return std::max(1, std::stoi(v));
        } catch (const std::exception&) {
            throw ConfigError(std::string("HOMOGLAB_THREADS is not an integer: ") + v);
        }
    }
    return 1;
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

/// Accepts decimals and fractions such as "1/16".
inline double parse_number(const std::string& s) {
    const auto slash = s.find('/');
    try {
        std::size_t used = 0;
        if (slash != std::string::npos) {
            const double a = std::stod(s.substr(0, slash)), b = std::stod(s.substr(slash + 1));
            if (b == 0.0) throw ConfigError("division by zero in '" + s + "'");
            return a / b;
        }
        const double v = std::stod(s, &used);
        if (used != s.size()) throw ConfigError("trailing characters in number '" + s + "'");
        return v;
    } catch (const std::invalid_argument&) {
        throw ConfigError("not a number: '" + s + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("number out of range: '" + s + "'");
    }
}

inline std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& item : split(s, ','))
        if (!item.empty()) out.push_back(parse_number(item));
    return out;
}

inline bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("not a boolean: '" + s + "'");
}

inline Rect parse_rect(const std::string& s) {
    const auto v = parse_list(s);
    if (v.size() != 4) throw ConfigError("rectangle needs x0,y0,x1,y1");
    return {v[0], v[1], v[2], v[3]};
}

inline StudyMode parse_mode(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    for (auto m : {StudyMode::Eigenvalues, StudyMode::Corrector, StudyMode::Eigenspace, StudyMode::Visik, StudyMode::Lab})
        if (s == to_string(m)) return m;
    throw ConfigError("unknown study mode '" + s + "'");
}

} // namespace detail

/// Applies one key=value setting. Keys mirror the StudyConfig fields.
inline void set_config_value(StudyConfig& cfg, const std::string& key, const std::string& value) {
    using namespace detail;
    if (key == "radius" || key == "hole_radius") cfg.domain.hole_radius = parse_number(value);
    else if (key == "npoly" || key == "hole_sides") cfg.domain.hole_sides = static_cast<int>(parse_number(value));
    else if (key == "href" || key == "h_ref") cfg.domain.h_ref = parse_number(value);
    else if (key == "hmacro" || key == "h_macro") cfg.h_macro = parse_number(value);
    else if (key == "krect" || key == "k_rect") cfg.domain.k_rect = parse_rect(value);
    else if (key == "eps" || key == "eps_list") cfg.eps_list = parse_list(value);
    else if (key == "k") cfg.k = static_cast<int>(parse_number(value));
    else if (key == "seed") {
        try {
            cfg.seed = std::stoull(value);
        } catch (const std::exception&) {
            throw ConfigError("seed must be an unsigned 64-bit integer");
        }
    } else if (key == "lab_samples") cfg.lab_samples = static_cast<int>(parse_number(value));
    else if (key == "strip_deltas") cfg.strip_deltas = parse_list(value);
    else if (key == "cutoff") cfg.cutoff = parse_bool(value);
    else if (key == "out" || key == "out_dir") cfg.out_dir = value;
    else if (key == "csv") cfg.csv = parse_bool(value);
    else if (key == "svg") cfg.svg = parse_bool(value);
    else if (key == "modes") {
        cfg.modes.clear();
        for (const auto& m : split(value, ','))
            if (!m.empty()) cfg.modes.insert(parse_mode(m));
    } else throw ConfigError("unknown config key '" + key + "'");
}

/// Reads `key = value` lines; `#` starts a comment.
inline StudyConfig parse_config(std::istream& is, StudyConfig cfg = {}) {
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
        try {
            set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline StudyConfig load_config(const std::string& path, StudyConfig cfg = {}) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config file " + path);
    return parse_config(is, std::move(cfg));
}

// ---------------------------------------------------------------------------
// Rate fitting
// ---------------------------------------------------------------------------

struct RateFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
    int points = 0;
    std::vector<std::string> warnings;
};

/// Ordinary least squares of log(error) on log(eps). Points are sorted first
/// so the result does not depend on input order.
inline RateFit fit_rate(std::vector<std::pair<double, double>> points) {
    RateFit fit;
    std::sort(points.begin(), points.end());
    std::vector<std::pair<double, double>> logs;
    for (const auto& [eps, err] : points) {
        if (!(eps > 0.0) || !(err > 0.0) || !std::isfinite(err)) {
            std::ostringstream os;
            os << "excluded point (" << eps << ", " << err << ")";
            fit.warnings.push_back(os.str());
            continue;
        }
        logs.emplace_back(std::log(eps), std::log(err));
    }
    if (logs.size() < 2) throw FitError("rate fit needs at least two positive points");
    const double n = static_cast<double>(logs.size());
    double mx = 0.0, my = 0.0;
    for (const auto& [x, y] : logs) {
        mx += x;
        my += y;
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (const auto& [x, y] : logs) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if (!(sxx > 0.0)) throw FitError("rate fit needs at least two distinct eps values");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double sse = 0.0;
    for (const auto& [x, y] : logs) {
        const double r = y - (fit.intercept + fit.slope * x);
        sse += r * r;
    }
    fit.r2 = syy > 0.0 ? 1.0 - sse / syy : 1.0;
    fit.points = static_cast<int>(logs.size());
    return fit;
}

// ---------------------------------------------------------------------------
// Study
// ---------------------------------------------------------------------------

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct StudyRow {
    double eps = 0.0;
    int j = 1;
    double lambda_eps = 0.0;
    double lambda_hom = 0.0;
    double abs_err = 0.0;
    double heps_err = kNaN;
    double l2_err = kNaN;
    double gap = kNaN;
    double visik_alpha = kNaN;
    double visik_distance = kNaN;
    bool visik_certificate = false;
};

struct SweepPoint {
    double eps = 0.0;
    std::size_t nodes = 0;
    std::size_t full_nodes = 0;
    std::vector<double> lambda;
    int iterations = 0;
    double first_gap = 0.0;        ///< lambda^2 - lambda^1
    double sign_product = 0.0;     ///< min(u1) max(u1) / max|u1|^2
    double extension_ratio = kNaN; ///< int_Omega |grad T u1|^2 / int_Omega_eps |grad u1|^2
    double rayleigh_test = kNaN;   ///< quotient of the zero-extended Dirichlet mode of A
    std::vector<StudyRow> rows;
};

struct SeriesFit {
    std::string series;
    int j = 1;
    RateFit fit;
};

struct ConvergenceReport {
    StudyConfig config;
    bool complete = false;
    std::string error;
    CellSolution cell;
    std::size_t cell_nodes = 0;
    std::vector<double> lambda_hom;
    std::vector<double> alpha;
    std::vector<std::vector<int>> clusters; ///< 1-based mode groups of the homogenized spectrum
    std::vector<SweepPoint> sweep;          ///< eps descending
    std::vector<SeriesFit> fits;
    LabReport lab;
    std::vector<std::string> warnings;

    std::vector<StudyRow> rows() const {
        std::vector<StudyRow> out;
        for (const auto& p : sweep) out.insert(out.end(), p.rows.begin(), p.rows.end());
        return out;
    }

    const SeriesFit* find_fit(const std::string& series, int j) const {
        for (const auto& f : fits)
            if (f.series == series && f.j == j) return &f;
        return nullptr;
    }
};

/// Groups indices whose eigenvalues agree to a relative gap below `tol`.
inline std::vector<std::vector<int>> eigen_clusters(const std::vector<double>& values, double tol = 1e-6) {
    std::vector<std::vector<int>> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!out.empty() && std::abs(values[i] - values[i - 1]) <= tol * std::abs(values[i]))
            out.back().push_back(static_cast<int>(i));
        else
            out.push_back({static_cast<int>(i)});
    }
    return out;
}

namespace detail {

struct StudyContext {
    const StudyConfig* cfg;
    std::shared_ptr<const CellMesh> cell;
    std::shared_ptr<const CellSolution> sol;
    std::shared_ptr<const Mesh> a_mesh;
    const EigenSolution* hom;
    const EigenSolution* dir;
    std::vector<std::vector<int>> clusters; ///< 0-based, may reach past k
    std::vector<std::shared_ptr<const DomainField>> hom_fields;
    std::shared_ptr<const DomainField> dir_field;
    std::shared_ptr<const ChiEvaluator> chi;
    int k_solve = 0;
};

inline SweepPoint run_eps(const StudyContext& ctx, double eps, std::size_t eps_index, std::vector<LabRow>& lab_rows) {
    const StudyConfig& cfg = *ctx.cfg;
    DomainConfig dc = cfg.domain;
    dc.eps = eps;
    const EigenSolution ps = solve_perforated_evp(dc, ctx.k_solve, ctx.cell);
    const OperatorBundle& b = ps.bundle;
    const Spectrum& sp = ps.spectrum;

    SweepPoint pt;
    pt.eps = b.eps;
    pt.nodes = b.node_count();
    pt.full_nodes = b.full_mesh->node_count();
    pt.lambda.assign(sp.values.begin(), sp.values.begin() + cfg.k);
    pt.iterations = sp.iterations;
    pt.first_gap = sp.values[1] - sp.values[0];
    {
        const Vector u1 = sp.vector(0);
        const double mx = u1.maxCoeff(), mn = u1.minCoeff(), amax = u1.cwiseAbs().maxCoeff();
        pt.sign_product = mn * mx / (amax * amax);
        const Vector tu = extend_Teps(b, u1);
        pt.extension_ratio = tu.dot(b.extension->stiffness_all() * tu) / u1.dot(b.S * u1);
        const Vector z = ctx.dir_field->transfer(*b.mesh);
        pt.rayleigh_test = rayleigh_quotient(b, z);
    }

    const SparseMatrix energy = b.S + b.R;
    std::vector<Vector> correctors(static_cast<std::size_t>(ctx.k_solve));
    auto corrector = [&](int l) -> const Vector& {
        auto& c = correctors[static_cast<std::size_t>(l)];
        if (c.size() == 0)
            c = build_corrector(*ctx.hom_fields[static_cast<std::size_t>(l)], *ctx.chi, b.eps, *b.mesh,
                                cfg.domain.k_rect, cfg.cutoff, &b.template_node, l)
                    .values;
        return c;
    };

    for (int j = 0; j < cfg.k; ++j) {
        StudyRow row;
        row.eps = b.eps;
        row.j = j + 1;
        row.lambda_eps = sp.values[static_cast<std::size_t>(j)];
        row.lambda_hom = ctx.hom->spectrum.values[static_cast<std::size_t>(j)];
        row.abs_err = std::abs(row.lambda_eps - row.lambda_hom);
        pt.rows.push_back(row);
    }

    for (const auto& cluster : ctx.clusters) {
        if (cluster.front() >= cfg.k) break;
        const auto m = static_cast<Eigen::Index>(cluster.size());
        Eigen::MatrixXd ue(static_cast<Eigen::Index>(b.node_count()), m);
        for (Eigen::Index c = 0; c < m; ++c) ue.col(c) = sp.vectors.col(cluster[static_cast<std::size_t>(c)]);

        if (cfg.has(StudyMode::Corrector)) {
            Eigen::MatrixXd U(ue.rows(), m);
            for (Eigen::Index c = 0; c < m; ++c) U.col(c) = corrector(cluster[static_cast<std::size_t>(c)]);
            const auto al = align_eigenspaces(ue, U, b.M, energy);
            for (Eigen::Index c = 0; c < m; ++c) {
                const int j = cluster[static_cast<std::size_t>(c)];
                if (j >= cfg.k) continue;
                pt.rows[static_cast<std::size_t>(j)].heps_err = al.heps_err[static_cast<std::size_t>(c)];
                pt.rows[static_cast<std::size_t>(j)].l2_err = al.l2_err[static_cast<std::size_t>(c)];
            }
        }
        if (cfg.has(StudyMode::Eigenspace)) {
            Eigen::MatrixXd a(static_cast<Eigen::Index>(pt.full_nodes), m), h(a.rows(), m);
            for (Eigen::Index c = 0; c < m; ++c) {
                a.col(c) = extend_Teps(b, ue.col(c));
                h.col(c) = ctx.hom_fields[static_cast<std::size_t>(cluster[static_cast<std::size_t>(c)])]->transfer(
                    *b.full_mesh);
            }
            const double gap = eigenspace_gap(a, h, b.extension->mass_all());
            for (int j : cluster)
                if (j < cfg.k) pt.rows[static_cast<std::size_t>(j)].gap = gap;
        }
    }

    if (cfg.has(StudyMode::Visik)) {
        for (int j = 0; j < cfg.k; ++j) {
            const auto v = visik_check(b, corrector(j), 1.0 / ctx.hom->spectrum.values[static_cast<std::size_t>(j)], sp);
            auto& row = pt.rows[static_cast<std::size_t>(j)];
            row.visik_alpha = v.alpha;
            row.visik_distance = v.distance;
            row.visik_certificate = v.certificate;
        }
    }

    if (cfg.has(StudyMode::Lab)) {
        lab_rows.push_back(check_trace(b, cfg.lab_samples, derive_seed(cfg.seed, "trace", eps_index)));
        lab_rows.push_back(
            check_volsup(b, *ctx.sol, cfg.domain.k_rect, cfg.lab_samples, derive_seed(cfg.seed, "volsup", eps_index)));
    }
    return pt;
}

inline void fit_series(ConvergenceReport& rep) {
    const auto rows = rep.rows();
    struct Series {
        const char* name;
        double StudyRow::*field;
        StudyMode mode;
    };
    const Series series[] = {{"abs_err", &StudyRow::abs_err, StudyMode::Eigenvalues},
                             {"heps_err", &StudyRow::heps_err, StudyMode::Corrector},
                             {"l2_err", &StudyRow::l2_err, StudyMode::Corrector},
                             {"gap", &StudyRow::gap, StudyMode::Eigenspace},
                             {"visik_alpha", &StudyRow::visik_alpha, StudyMode::Visik}};
    for (const auto& s : series) {
        if (!rep.config.has(s.mode)) continue;
        for (int j = 1; j <= rep.config.k; ++j) {
            std::vector<std::pair<double, double>> pts;
            for (const auto& r : rows)
                if (r.j == j) pts.emplace_back(r.eps, r.*(s.field));
            try {
                SeriesFit f{s.name, j, fit_rate(pts)};
                for (const auto& w : f.fit.warnings) rep.warnings.push_back(std::string(s.name) + " j=" + std::to_string(j) + ": " + w);
                rep.fits.push_back(std::move(f));
            } catch (const FitError& e) {
                rep.warnings.push_back(std::string(s.name) + " j=" + std::to_string(j) + ": " + e.what());
            }
        }
    }
}

} // namespace detail

/// Full sweep. Errors inside the sweep are caught and returned as an
/// incomplete report; configuration errors are thrown.
inline ConvergenceReport run_study(const StudyConfig& cfg) {
    cfg.validate();
    ConvergenceReport rep;
    rep.config = cfg;
    std::vector<double> eps_list = cfg.eps_list;
    std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
    rep.config.eps_list = eps_list;
    try {
        detail::StudyContext ctx;
        ctx.cfg = &rep.config;
        ctx.cell = std::make_shared<const CellMesh>(
            build_cell_mesh(cfg.domain.hole_radius, cfg.domain.hole_sides, cfg.domain.h_ref));
        ctx.sol = std::make_shared<const CellSolution>(solve_cell_problem(*ctx.cell));
        rep.cell = *ctx.sol;
        rep.cell_nodes = ctx.cell->mesh.node_count();
        ctx.chi = std::make_shared<const ChiEvaluator>(ctx.sol, ctx.cell);

        ctx.a_mesh = std::make_shared<const Mesh>(build_domain_mesh(cfg.domain.k_rect, cfg.h_macro));
        const int k_extra = cfg.k + 2;
        const EigenSolution hom = solve_homogenized_evp(ctx.a_mesh, ctx.sol->a_hom, ctx.sol->cell_area, k_extra);
        const EigenSolution dir = solve_dirichlet_laplacian(ctx.a_mesh, cfg.k);
        ctx.hom = &hom;
        ctx.dir = &dir;
        rep.lambda_hom.assign(hom.spectrum.values.begin(), hom.spectrum.values.begin() + cfg.k);
        rep.alpha = dir.spectrum.values;

        auto clusters = eigen_clusters(hom.spectrum.values);
        if (clusters.back().back() == k_extra - 1 && clusters.back().front() < cfg.k)
            throw SolverError("homogenized eigenvalue cluster extends past k + 2 modes");
        ctx.k_solve = 0;
        for (const auto& c : clusters)
            if (c.front() < cfg.k) {
                ctx.k_solve = std::max(ctx.k_solve, c.back() + 1);
                std::vector<int> one;
                for (int i : c) one.push_back(i + 1);
                rep.clusters.push_back(one);
                ctx.clusters.push_back(c);
            }
        for (int l = 0; l < ctx.k_solve; ++l)
            ctx.hom_fields.push_back(std::make_shared<const DomainField>(ctx.a_mesh, hom.spectrum.vector(static_cast<std::size_t>(l))));
        ctx.dir_field = std::make_shared<const DomainField>(ctx.a_mesh, dir.spectrum.vector(0));

        const std::size_t n = eps_list.size();
        std::vector<SweepPoint> points(n);
        std::vector<std::vector<LabRow>> lab(n);
        std::vector<std::string> errors(n);
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (std::size_t i; (i = next++) < n;) {
                try {
                    points[i] = detail::run_eps(ctx, eps_list[i], i, lab[i]);
                } catch (const std::exception& e) {
                    errors[i] = e.what();
                }
            }
        };
        const int nt = std::clamp(cfg.threads, 1, static_cast<int>(n));
        if (nt == 1) {
            worker();
        } else {
            std::vector<std::thread> pool;
            for (int t = 0; t < nt; ++t) pool.emplace_back(worker);
            for (auto& t : pool) t.join();
        }
        for (std::size_t i = 0; i < n; ++i) {
            if (!errors[i].empty()) throw Error("eps=" + std::to_string(eps_list[i]) + ": " + errors[i]);
            rep.sweep.push_back(std::move(points[i]));
            for (auto& r : lab[i]) rep.lab.rows.push_back(std::move(r));
        }

        if (cfg.has(StudyMode::Lab)) {
            for (auto& r : check_periodic_osc(ctx.cell, *ctx.sol, eps_list, cfg.lab_samples,
                                              derive_seed(cfg.seed, "periodic_osc")))
                rep.lab.rows.push_back(std::move(r));
            for (auto& r : check_strip_poincare(*ctx.a_mesh, hom.spectrum.vector(0), cfg.strip_deltas))
                rep.lab.rows.push_back(std::move(r));
            std::vector<std::pair<double, Spectrum>> sweep;
            for (const auto& p : rep.sweep) {
                Spectrum s;
                s.values = p.lambda;
                sweep.emplace_back(p.eps, std::move(s));
            }
            for (auto& r : check_eigen_bounds(sweep, dir.spectrum)) rep.lab.rows.push_back(std::move(r));
            std::stable_sort(rep.lab.rows.begin(), rep.lab.rows.end(),
                             [](const LabRow& a, const LabRow& b) { return a.check < b.check; });
            summarize(rep.lab);
        }
        detail::fit_series(rep);
        rep.complete = true;
    } catch (const std::exception& e) {
        rep.complete = false;
        rep.error = e.what();
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace detail {

inline json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline double from_num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

} // namespace detail

inline json to_json(const StudyConfig& c) {
    json modes = json::array();
    for (auto m : c.modes) modes.push_back(to_string(m));
    const Rect& k = c.domain.k_rect;
    return {{"hole_radius", c.domain.hole_radius},
            {"hole_sides", c.domain.hole_sides},
            {"h_ref", c.domain.h_ref},
            {"h_macro", c.h_macro},
            {"k_rect", {k.x0, k.y0, k.x1, k.y1}},
            {"eps_list", c.eps_list},
            {"k", c.k},
            {"modes", modes},
            {"seed", c.seed},
            {"lab_samples", c.lab_samples},
            {"strip_deltas", c.strip_deltas},
            {"cutoff", c.cutoff}};
}

inline json to_json(const CellSolution& s) {
    return {{"cell_area", s.cell_area},
            {"hole_perimeter", s.hole_perimeter},
            {"c_star", s.c_star},
            {"c_star_full", s.c_star_full},
            {"a_hom", {{s.a_hom(0, 0), s.a_hom(0, 1)}, {s.a_hom(1, 0), s.a_hom(1, 1)}}}};
}

inline json to_json(const LabReport& lab) {
    json rows = json::array(), sums = json::array();
    for (const auto& r : lab.rows)
        rows.push_back({{"check", r.check},
                        {"eps", r.eps},
                        {"ratio", detail::num(r.ratio)},
                        {"samples", r.samples},
                        {"skipped", r.skipped},
                        {"seed", r.seed},
                        {"pass", r.pass}});
    for (const auto& s : lab.summaries)
        sums.push_back({{"check", s.check}, {"spread", detail::num(s.spread)}, {"limit", s.limit}, {"pass", s.pass}});
    return {{"rows", rows}, {"summaries", sums}};
}

inline json to_json(const ConvergenceReport& r) {
    json sweep = json::array(), rows = json::array(), fits = json::array();
    for (const auto& p : r.sweep) {
        sweep.push_back({{"eps", p.eps},
                         {"nodes", p.nodes},
                         {"full_nodes", p.full_nodes},
                         {"lambda_eps", p.lambda},
                         {"iterations", p.iterations},
                         {"first_gap", p.first_gap},
                         {"sign_product", p.sign_product},
                         {"extension_ratio", detail::num(p.extension_ratio)},
                         {"rayleigh_test", detail::num(p.rayleigh_test)}});
        for (const auto& row : p.rows)
            rows.push_back({{"eps", row.eps},
                            {"j", row.j},
                            {"lambda_eps", row.lambda_eps},
                            {"lambda_hom", row.lambda_hom},
                            {"abs_err", row.abs_err},
                            {"heps_err", detail::num(row.heps_err)},
                            {"l2_err", detail::num(row.l2_err)},
                            {"gap", detail::num(row.gap)},
                            {"visik_alpha", detail::num(row.visik_alpha)},
                            {"visik_distance", detail::num(row.visik_distance)},
                            {"visik_certificate", row.visik_certificate}});
    }
    for (const auto& f : r.fits)
        fits.push_back({{"series", f.series},
                        {"j", f.j},
                        {"slope", f.fit.slope},
                        {"intercept", f.fit.intercept},
                        {"r2", f.fit.r2},
                        {"points", f.fit.points}});
    return {{"config", to_json(r.config)},
            {"complete", r.complete},
            {"error", r.error},
            {"cell", to_json(r.cell)},
            {"cell_nodes", r.cell_nodes},
            {"homogenized", {{"lambda", r.lambda_hom}, {"alpha", r.alpha}, {"clusters", r.clusters}}},
            {"sweep", sweep},
            {"rows", rows},
            {"fits", fits},
            {"lab", to_json(r.lab)},
            {"warnings", r.warnings}};
}

/// Rebuilds the numeric content of a report body.
inline ConvergenceReport report_from_json(const json& j) {
    ConvergenceReport r;
    r.complete = j.at("complete").get<bool>();
    r.error = j.at("error").get<std::string>();
    const auto& c = j.at("cell");
    r.cell.cell_area = c.at("cell_area").get<double>();
    r.cell.hole_perimeter = c.at("hole_perimeter").get<double>();
    r.cell.c_star = c.at("c_star").get<double>();
    r.cell.c_star_full = c.at("c_star_full").get<double>();
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) r.cell.a_hom(a, b) = c.at("a_hom").at(a).at(b).get<double>();
    r.cell_nodes = j.at("cell_nodes").get<std::size_t>();
    r.lambda_hom = j.at("homogenized").at("lambda").get<std::vector<double>>();
    r.alpha = j.at("homogenized").at("alpha").get<std::vector<double>>();
    r.clusters = j.at("homogenized").at("clusters").get<std::vector<std::vector<int>>>();
    const auto& cfg = j.at("config");
    r.config.domain.hole_radius = cfg.at("hole_radius").get<double>();
    r.config.domain.hole_sides = cfg.at("hole_sides").get<int>();
    r.config.domain.h_ref = cfg.at("h_ref").get<double>();
    const auto kr = cfg.at("k_rect").get<std::vector<double>>();
    if (kr.size() != 4) throw IoError("k_rect needs four numbers");
    r.config.domain.k_rect = {kr[0], kr[1], kr[2], kr[3]};
    r.config.h_macro = cfg.at("h_macro").get<double>();
    r.config.k = cfg.at("k").get<int>();
    r.config.eps_list = cfg.at("eps_list").get<std::vector<double>>();
    r.config.modes.clear();
    for (const auto& m : cfg.at("modes")) r.config.modes.insert(detail::parse_mode(m.get<std::string>()));
    r.config.seed = cfg.at("seed").get<std::uint64_t>();
    r.config.lab_samples = cfg.at("lab_samples").get<int>();
    r.config.strip_deltas = cfg.at("strip_deltas").get<std::vector<double>>();
    r.config.cutoff = cfg.at("cutoff").get<bool>();
    for (const auto& p : j.at("sweep")) {
        SweepPoint s;
        s.eps = p.at("eps").get<double>();
        s.nodes = p.at("nodes").get<std::size_t>();
        s.full_nodes = p.at("full_nodes").get<std::size_t>();
        s.lambda = p.at("lambda_eps").get<std::vector<double>>();
        s.iterations = p.at("iterations").get<int>();
        s.first_gap = p.at("first_gap").get<double>();
        s.sign_product = p.at("sign_product").get<double>();
        s.extension_ratio = detail::from_num(p.at("extension_ratio"));
        s.rayleigh_test = detail::from_num(p.at("rayleigh_test"));
        r.sweep.push_back(std::move(s));
    }
    for (const auto& row : j.at("rows")) {
        StudyRow x;
        x.eps = row.at("eps").get<double>();
        x.j = row.at("j").get<int>();
        x.lambda_eps = row.at("lambda_eps").get<double>();
        x.lambda_hom = row.at("lambda_hom").get<double>();
        x.abs_err = row.at("abs_err").get<double>();
        x.heps_err = detail::from_num(row.at("heps_err"));
        x.l2_err = detail::from_num(row.at("l2_err"));
        x.gap = detail::from_num(row.at("gap"));
        x.visik_alpha = detail::from_num(row.at("visik_alpha"));
        x.visik_distance = detail::from_num(row.at("visik_distance"));
        x.visik_certificate = row.at("visik_certificate").get<bool>();
        for (auto& s : r.sweep)
            if (s.eps == x.eps) s.rows.push_back(x);
    }
    for (const auto& f : j.at("fits")) {
        SeriesFit s;
        s.series = f.at("series").get<std::string>();
        s.j = f.at("j").get<int>();
        s.fit.slope = f.at("slope").get<double>();
        s.fit.intercept = f.at("intercept").get<double>();
        s.fit.r2 = f.at("r2").get<double>();
        s.fit.points = f.at("points").get<int>();
        r.fits.push_back(std::move(s));
    }
    for (const auto& row : j.at("lab").at("rows")) {
        LabRow x;
        x.check = row.at("check").get<std::string>();
        x.eps = row.at("eps").get<double>();
        x.ratio = detail::from_num(row.at("ratio"));
        x.samples = row.at("samples").get<int>();
        x.skipped = row.at("skipped").get<int>();
        x.seed = row.at("seed").get<std::uint64_t>();
        x.pass = row.at("pass").get<bool>();
        r.lab.rows.push_back(std::move(x));
    }
    for (const auto& s : j.at("lab").at("summaries"))
        r.lab.summaries.push_back({s.at("check").get<std::string>(), detail::from_num(s.at("spread")),
                                   s.at("limit").get<double>(), s.at("pass").get<bool>()});
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
    return r;
}

/// Report body as written below the timestamp header line.
inline std::string report_body(const ConvergenceReport& r) { return to_json(r).dump(2) + "\n"; }

/// Parses a report file, skipping the header line.
inline json read_report(std::istream& is) {
    std::string header;
    std::getline(is, header);
    return json::parse(is);
}

inline std::string csv_table(const ConvergenceReport& r) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "eps,j,lambda_eps,lambda_hom,abs_err,heps_err,l2_err,gap,visik_alpha\n";
    for (const auto& row : r.rows())
        os << row.eps << ',' << row.j << ',' << row.lambda_eps << ',' << row.lambda_hom << ',' << row.abs_err << ','
           << row.heps_err << ',' << row.l2_err << ',' << row.gap << ',' << row.visik_alpha << '\n';
    return os.str();
}

inline std::string lab_csv(const LabReport& lab) {
    std::ostringstream os;
    os << std::setprecision(17) << "check,eps,ratio,samples,seed,pass\n";
    for (const auto& r : lab.rows)
        os << r.check << ',' << r.eps << ',' << r.ratio << ',' << r.samples << ',' << r.seed << ','
           << (r.pass ? "true" : "false") << '\n';
    return os.str();
}

/// Log-log chart of the j = 1 error series, one polyline each, with dashed
/// fitted lines.
inline std::string svg_chart(const ConvergenceReport& r) {
    const char* names[] = {"abs_err", "heps_err", "l2_err", "gap", "visik_alpha"};
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    double StudyRow::*fields[] = {&StudyRow::abs_err, &StudyRow::heps_err, &StudyRow::l2_err, &StudyRow::gap,
                                  &StudyRow::visik_alpha};
    struct Line {
        std::string name, color;
        std::vector<std::pair<double, double>> pts;
        const RateFit* fit;
    };
    std::vector<Line> lines;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (int s = 0; s < 5; ++s) {
        const auto* f = r.find_fit(names[s], 1);
        if (!f) continue;
        Line line{names[s], colors[s], {}, &f->fit};
        for (const auto& row : r.rows())
            if (row.j == 1 && row.*fields[s] > 0.0 && std::isfinite(row.*fields[s])) {
                const double x = std::log10(row.eps), y = std::log10(row.*fields[s]);
                line.pts.emplace_back(x, y);
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
        if (!line.pts.empty()) lines.push_back(std::move(line));
    }
    const double w = 640, h = 420, m = 60;
    if (lines.empty()) {
        xmin = ymin = 0;
        xmax = ymax = 1;
    }
    if (xmax - xmin < 1e-12) xmax = xmin + 1;
    if (ymax - ymin < 1e-12) ymax = ymin + 1;
    auto px = [&](double x) { return m + (x - xmin) / (xmax - xmin) * (w - 2 * m); };
    auto py = [&](double y) { return h - m - (y - ymin) / (ymax - ymin) * (h - 2 * m); };
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << w << "\" height=\"" << h << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << w / 2 << "\" y=\"" << h - 15 << "\" text-anchor=\"middle\">log10 eps</text>\n";
    os << "<text x=\"15\" y=\"" << h / 2 << "\" transform=\"rotate(-90 15 " << h / 2
       << ")\" text-anchor=\"middle\">log10 error (j=1)</text>\n";
    int legend = 0;
    for (const auto& line : lines) {
        os << "<polyline fill=\"none\" stroke=\"" << line.color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : line.pts) os << px(x) << ',' << py(y) << ' ';
        os << "\"/>\n";
        const double y0 = (line.fit->intercept + line.fit->slope * xmin * std::log(10.0)) / std::log(10.0);
        const double y1 = (line.fit->intercept + line.fit->slope * xmax * std::log(10.0)) / std::log(10.0);
        os << "<line x1=\"" << px(xmin) << "\" y1=\"" << py(y0) << "\" x2=\"" << px(xmax) << "\" y2=\"" << py(y1)
           << "\" stroke=\"" << line.color << "\" stroke-dasharray=\"6 4\"/>\n";
        os << "<text x=\"" << w - m - 150 << "\" y=\"" << m + 16 * legend++ << "\" fill=\"" << line.color << "\">"
           << line.name << " slope " << std::setprecision(3) << line.fit->slope << std::setprecision(2)
           << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

struct EmitFormats {
    bool json = true;
    bool csv = false;
    bool svg = false;
};

/// Writes study.json (header line with the timestamp, then the body) and
/// optionally study.csv, lab.csv and study.svg into `dir`. Returns the paths.
inline std::vector<std::string> emit(const ConvergenceReport& r, const std::string& dir, const EmitFormats& f) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
    std::vector<std::string> written;
    auto write = [&](const std::string& name, const std::string& text) {
        const std::string path = (fs::path(dir) / name).string();
        std::ofstream os(path, std::ios::binary);
        if (!os) throw IoError("cannot write " + path);
        os << text;
        if (!os) throw IoError("write failed for " + path);
        written.push_back(path);
    };
    if (f.json) write("study.json", json{{"timestamp", utc_timestamp()}}.dump() + "\n" + report_body(r));
    if (f.csv) {
        write("study.csv", csv_table(r));
        write("lab.csv", lab_csv(r.lab));
    }
    if (f.svg) write("study.svg", svg_chart(r));
    return written;
}

// ---------------------------------------------------------------------------
// Report-level acceptance checks
// ---------------------------------------------------------------------------

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    std::string detail;
};

namespace detail {

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

inline std::vector<double> series(const ConvergenceReport& r, double StudyRow::*field, int j) {
    std::vector<double> out;
    for (const auto& p : r.sweep)
        for (const auto& row : p.rows)
            if (row.j == j) out.push_back(row.*field);
    return out;
}

inline bool strictly_decreasing(const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i)
        if (!(v[i] < v[i - 1])) return false;
    return !v.empty();
}

} // namespace detail

/// Criteria 3 to 9 evaluated on a finished study (sweep sorted by eps descending).
inline std::vector<CriterionResult> evaluate_report(const ConvergenceReport& r) {
    using detail::fmt;
    std::vector<CriterionResult> out;
    if (!r.complete) {
        out.push_back({0, "study completed", false, r.error});
        return out;
    }
    {
        CriterionResult c{3, "eigenvalue convergence", true, ""};
        for (int j = 1; j <= std::min(2, r.config.k); ++j) {
            const auto e = detail::series(r, &StudyRow::abs_err, j);
            const bool dec = detail::strictly_decreasing(e);
            c.pass = c.pass && dec;
            c.detail += "j=" + std::to_string(j) + (dec ? " decreasing; " : " not decreasing; ");
        }
        const auto* f = r.find_fit("abs_err", 1);
        const bool ok = f && f->fit.slope >= 0.45;
        c.pass = c.pass && ok;
        c.detail += "slope j=1 " + (f ? fmt(f->fit.slope) : std::string("n/a")) + " (need >= 0.45)";
        out.push_back(c);
    }
    {
        CriterionResult c{4, "corrector rate", false, ""};
        const auto* h = r.find_fit("heps_err", 1);
        const auto* l = r.find_fit("l2_err", 1);
        if (h && l) {
            c.pass = h->fit.slope >= 0.4 && h->fit.r2 >= 0.9 && l->fit.slope >= 0.4;
            c.detail = "H_eps slope " + fmt(h->fit.slope) + " r2 " + fmt(h->fit.r2) + ", L2 slope " + fmt(l->fit.slope) +
                       " (need >= 0.4, r2 >= 0.9, >= 0.4)";
        } else {
            c.detail = "corrector series missing";
        }
        out.push_back(c);
    }
    {
        CriterionResult c{5, "Visik certificate", true, ""};
        for (const auto& p : r.sweep)
            if (!p.rows.empty() && !p.rows.front().visik_certificate) {
                c.pass = false;
                c.detail += "no certificate at eps=" + fmt(p.eps) + "; ";
            }
        const auto* f = r.find_fit("visik_alpha", 1);
        const bool ok = f && f->fit.slope >= 0.4;
        c.pass = c.pass && ok;
        c.detail += "certificates " + std::string(c.detail.empty() ? "all hold" : "fail") + "; alpha slope " +
                    (f ? fmt(f->fit.slope) : std::string("n/a")) + " (need >= 0.4)";
        out.push_back(c);
    }
    {
        CriterionResult c{6, "spectrum structure", true, ""};
        for (const auto& p : r.sweep) {
            const bool ok = p.first_gap > 1e-8 && p.sign_product >= -1e-6;
            c.pass = c.pass && ok;
            c.detail += "eps=" + fmt(p.eps) + " gap " + fmt(p.first_gap) + " sign " + fmt(p.sign_product) + "; ";
        }
        out.push_back(c);
    }
    {
        CriterionResult c{7, "upper bound", true, ""};
        const double a1 = r.alpha.empty() ? kNaN : r.alpha.front();
        for (std::size_t i = r.sweep.size() >= 2 ? r.sweep.size() - 2 : 0; i < r.sweep.size(); ++i) {
            const double l1 = r.sweep[i].lambda.front();
            c.pass = c.pass && l1 <= 1.05 * a1;
            c.detail += "eps=" + fmt(r.sweep[i].eps) + " lambda1 " + fmt(l1) + " <= 1.05*" + fmt(a1) + "; ";
        }
        out.push_back(c);
    }
    {
        CriterionResult c{8, "eigenspace gap", false, ""};
        const auto g = detail::series(r, &StudyRow::gap, 1);
        if (!g.empty() && std::isfinite(g.back())) {
            const bool dec = detail::strictly_decreasing(g);
            const bool small = g.back() < 0.2;
            c.pass = dec && small;
            c.detail = std::string(dec ? "decreasing" : "not decreasing") + ", gap at smallest eps " + fmt(g.back()) +
                       " (need < 0.2)";
        } else {
            c.detail = "gap series missing";
        }
        out.push_back(c);
    }
    {
        CriterionResult c{9, "inequality lab uniformity", true, ""};
        for (const char* name : {"trace", "volsup", "periodic_osc"}) {
            bool found = false;
            for (const auto& s : r.lab.summaries)
                if (s.check == name) {
                    found = true;
                    c.pass = c.pass && s.pass;
                    c.detail += std::string(name) + " spread " + fmt(s.spread) + "; ";
                }
            if (!found) {
                c.pass = false;
                c.detail += std::string(name) + " missing; ";
            }
        }
        out.push_back(c);
    }
    for (auto& c : out)
        while (!c.detail.empty() && (c.detail.back() == ' ' || c.detail.back() == ';')) c.detail.pop_back();
    return out;
}

} // namespace homoglab
