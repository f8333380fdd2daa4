// homoglab command line: cell, mesh, spectrum, study, check, dump.

#include "homoglab/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace hl = homoglab;

namespace {

struct Common {
    std::string config;
    std::string out;
    bool csv = false;
    bool svg = false;
    std::optional<std::uint64_t> seed;
};

struct DomainFlags {
    std::optional<double> eps, radius, href;
    std::optional<int> npoly, k;
    std::string krect;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "key=value configuration file");
    app->add_option("--out", c.out, "output directory");
    app->add_flag("--csv", c.csv, "also write CSV tables");
    app->add_flag("--svg", c.svg, "also write an SVG chart");
    app->add_option("--seed", c.seed, "master seed");
}

void add_domain(CLI::App* app, DomainFlags& d, bool with_eps) {
    if (with_eps) app->add_option("--eps", d.eps, "cell size, 1/n");
    app->add_option("--radius", d.radius, "hole radius");
    app->add_option("--npoly", d.npoly, "hole polygon sides");
    app->add_option("--href", d.href, "micro mesh size in cell units");
    app->add_option("--k", d.k, "number of modes");
    app->add_option("--krect", d.krect, "x0,y0,x1,y1");
}

hl::StudyConfig make_config(const Common& c, const DomainFlags& d) {
    hl::StudyConfig cfg;
    cfg.threads = hl::threads_from_env();
    if (!c.config.empty()) cfg = hl::load_config(c.config, cfg);
    if (d.radius) cfg.domain.hole_radius = *d.radius;
    if (d.npoly) cfg.domain.hole_sides = *d.npoly;
    if (d.href) cfg.domain.h_ref = *d.href;
    if (d.k) cfg.k = *d.k;
    if (!d.krect.empty()) cfg.domain.k_rect = hl::detail::parse_rect(d.krect);
    if (d.eps) cfg.domain.eps = *d.eps;
    else if (!cfg.eps_list.empty()) cfg.domain.eps = *std::min_element(cfg.eps_list.begin(), cfg.eps_list.end());
    if (c.seed) cfg.seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    cfg.csv = cfg.csv || c.csv;
    cfg.svg = cfg.svg || c.svg;
    return cfg;
}

void write_file(const std::string& dir, const std::string& name, const std::string& text) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw hl::IoError("cannot create output directory " + dir);
    const auto path = (std::filesystem::path(dir) / name).string();
    std::ofstream os(path);
    if (!os) throw hl::IoError("cannot write " + path);
    os << text;
}

std::string mesh_svg(const hl::Mesh& mesh) {
    const double s = 600.0;
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << s << "\" height=\"" << s << "\">\n";
    for (std::size_t t = 0; t < mesh.triangle_count(); ++t) {
        const auto& tri = mesh.triangles[t];
        os << "<polygon fill=\"" << (tri.region == hl::Region::Fluid ? "#dde8f5" : "#bbbbbb")
           << "\" stroke=\"#555\" stroke-width=\"0.3\" points=\"";
        for (int v : tri.v) os << mesh.nodes[v].x * s << ',' << (1.0 - mesh.nodes[v].y) * s << ' ';
        os << "\"/>\n";
    }
    for (const auto& e : mesh.edges)
        if (e.tag == hl::EdgeTag::HoleBoundary)
            os << "<line x1=\"" << mesh.nodes[e.v[0]].x * s << "\" y1=\"" << (1.0 - mesh.nodes[e.v[0]].y) * s
               << "\" x2=\"" << mesh.nodes[e.v[1]].x * s << "\" y2=\"" << (1.0 - mesh.nodes[e.v[1]].y) * s
               << "\" stroke=\"#c0392b\" stroke-width=\"1\"/>\n";
    os << "</svg>\n";
    return os.str();
}

int cmd_cell(const hl::StudyConfig& cfg, const Common& c) {
    const auto cell = hl::build_cell_mesh(cfg.domain.hole_radius, cfg.domain.hole_sides, cfg.domain.h_ref);
    const auto sol = hl::solve_cell_problem(cell);
    hl::json j = hl::to_json(sol);
    j["nodes"] = cell.mesh.node_count();
    j["triangles"] = cell.mesh.triangle_count();
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    if (!c.out.empty()) write_file(c.out, "cell.json", text);
    return 0;
}

int cmd_mesh(const hl::StudyConfig& cfg, const Common& c) {
    cfg.domain.validate();
    const auto cell = hl::build_cell_mesh(cfg.domain.hole_radius, cfg.domain.hole_sides, cfg.domain.h_ref);
    const auto mesh = hl::build_perforated_mesh(cfg.domain, cell);
    const auto audit = hl::audit_conformity(mesh);
    hl::json j{{"eps", mesh.eps},
               {"nodes", mesh.node_count()},
               {"triangles", mesh.triangle_count()},
               {"outer_edges", mesh.count_edges(hl::EdgeTag::Outer)},
               {"hole_edges", mesh.count_edges(hl::EdgeTag::HoleBoundary)},
               {"fluid_area", mesh.region_area(hl::Region::Fluid)},
               {"conforming", audit.ok},
               {"problem", audit.problem}};
    std::cout << j.dump(2) << "\n";
    if (!c.out.empty()) {
        std::ostringstream os;
        hl::write_mesh(os, mesh);
        write_file(c.out, "mesh.txt", os.str());
        if (c.svg || cfg.svg) write_file(c.out, "mesh.svg", mesh_svg(mesh));
    }
    return audit.ok ? 0 : 2;
}

int cmd_spectrum(const hl::StudyConfig& cfg, const Common& c) {
    cfg.domain.validate();
    const auto cell = std::make_shared<const hl::CellMesh>(
        hl::build_cell_mesh(cfg.domain.hole_radius, cfg.domain.hole_sides, cfg.domain.h_ref));
    const auto sol = hl::solve_cell_problem(*cell);
    const auto ps = hl::solve_perforated_evp(cfg.domain, cfg.k, cell);
    const auto a_mesh = std::make_shared<const hl::Mesh>(hl::build_domain_mesh(cfg.domain.k_rect, cfg.h_macro));
    const auto hom = hl::solve_homogenized_evp(a_mesh, sol.a_hom, sol.cell_area, cfg.k);
    hl::json j{{"eps", ps.bundle.eps},
               {"nodes", ps.bundle.node_count()},
               {"iterations", ps.spectrum.iterations},
               {"lambda_eps", ps.spectrum.values},
               {"residuals", ps.spectrum.residuals},
               {"lambda_hom", hom.spectrum.values}};
    const std::string text = j.dump(2) + "\n";
    std::cout << text;
    if (!c.out.empty()) {
        write_file(c.out, "spectrum.json", text);
        if (c.csv || cfg.csv) {
            std::ostringstream os;
            os << std::setprecision(17) << "j,lambda_eps,lambda_hom\n";
            for (int i = 0; i < cfg.k; ++i)
                os << i + 1 << ',' << ps.spectrum.values[static_cast<std::size_t>(i)] << ','
                   << hom.spectrum.values[static_cast<std::size_t>(i)] << '\n';
            write_file(c.out, "spectrum.csv", os.str());
        }
    }
    return 0;
}

int print_criteria(const hl::ConvergenceReport& rep) {
    bool all = true;
    for (const auto& r : hl::evaluate_report(rep)) {
        std::cout << (r.pass ? "PASS" : "FAIL") << " criterion " << r.id << " (" << r.name << "): " << r.detail << "\n";
        all = all && r.pass;
    }
    return all ? 0 : 2;
}

int cmd_study(const hl::StudyConfig& cfg) {
    const auto rep = hl::run_study(cfg);
    for (const auto& p : hl::emit(rep, cfg.out_dir, {true, cfg.csv, cfg.svg})) std::cerr << "wrote " << p << "\n";
    if (!rep.complete) {
        std::cerr << "study incomplete: " << rep.error << "\n";
        return 1;
    }
    for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
    std::cout << hl::csv_table(rep);
    return rep.lab.pass() ? 0 : 2;
}

int cmd_check(const hl::StudyConfig& cfg, const std::string& report, const Common& c) {
    if (!report.empty()) {
        std::ifstream is(report);
        if (!is) throw hl::IoError("cannot read report " + report);
        return print_criteria(hl::report_from_json(hl::read_report(is)));
    }
    const auto rep = hl::run_study(cfg);
    if (!c.out.empty()) hl::emit(rep, cfg.out_dir, {true, cfg.csv, cfg.svg});
    return print_criteria(rep);
}

int cmd_dump(const hl::StudyConfig& cfg, const std::string& which, const Common& c) {
    cfg.domain.validate();
    const auto b = hl::make_perforated_bundle(cfg.domain);
    const hl::SparseMatrix* m = nullptr;
    if (which == "S") m = &b.S;
    else if (which == "M") m = &b.M;
    else if (which == "R") m = &b.R;
    else if (which == "S_red") m = &b.system.S;
    else if (which == "M_red") m = &b.system.M;
    else if (which == "R_red") m = &b.system.R;
    else throw hl::ConfigError("unknown matrix '" + which + "' (S, M, R, S_red, M_red, R_red)");
    if (c.out.empty()) {
        hl::dump_coo(std::cout, *m);
    } else {
        std::ostringstream os;
        hl::dump_coo(os, *m);
        write_file(c.out, which + ".coo", os.str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"FE lab for spectral homogenization on perforated domains"};
    app.require_subcommand(1);

    Common common;
    DomainFlags dom;
    std::string report, matrix;

    auto* cell = app.add_subcommand("cell", "solve the cell problem and print the effective tensor");
    auto* mesh = app.add_subcommand("mesh", "build and audit the perforated mesh");
    auto* spectrum = app.add_subcommand("spectrum", "perforated and homogenized eigenvalues at one eps");
    auto* study = app.add_subcommand("study", "run the eps sweep and write reports");
    auto* check = app.add_subcommand("check", "evaluate the convergence criteria");
    auto* dump = app.add_subcommand("dump", "write an assembled matrix in COO format");
    for (auto* s : {cell, mesh, spectrum, study, check, dump}) add_common(s, common);
    add_domain(cell, dom, false);
    for (auto* s : {mesh, spectrum, dump}) add_domain(s, dom, true);
    add_domain(study, dom, false);
    add_domain(check, dom, false);
    check->add_option("--report", report, "evaluate an existing study.json instead of running");
    dump->add_option("--matrix", matrix, "S, M, R or the reduced S_red, M_red, R_red")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        const auto cfg = make_config(common, dom);
        if (*cell) return cmd_cell(cfg, common);
        if (*mesh) return cmd_mesh(cfg, common);
        if (*spectrum) return cmd_spectrum(cfg, common);
        if (*study) return cmd_study(cfg);
        if (*check) return cmd_check(cfg, report, common);
        if (*dump) return cmd_dump(cfg, matrix, common);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
