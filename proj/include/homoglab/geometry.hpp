/**
 * @file geometry.hpp
 * @brief Meshes for the periodicity cell, the perforated square and the
 *        homogenized rectangle, plus point location.
 *
 * The template cell is the unit square Q=(0,1)^2 with a regular polygon hole
 * centred at (1/2,1/2). Face nodes sit on a uniform N x N lattice so that
 * opposite faces match exactly; the perforated domain is an n x n tiling of
 * the template stitched through integer lattice keys.
 */
#pragma once

#include "homoglab/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <istream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace homoglab {

struct Point {
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point&, const Point&) = default;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }

/// Twice the signed area of (a, b, c); positive for counter-clockwise order.
inline double orient(Point a, Point b, Point c) {
    return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

/// Closed axis-aligned rectangle [x0,x1] x [y0,y1].
struct Rect {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 1.0;
    double y1 = 1.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
    double area() const { return width() * height(); }
    Point center() const { return {0.5 * (x0 + x1), 0.5 * (y0 + y1)}; }

    bool contains_closed(Point p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
    bool contains_open(Point p) const { return p.x > x0 && p.x < x1 && p.y > y0 && p.y < y1; }

    /// Distance from an interior point to the rectangle boundary; 0 outside.
    double interior_distance(Point p) const {
        if (!contains_open(p)) return 0.0;
        return std::min({p.x - x0, x1 - p.x, p.y - y0, y1 - p.y});
    }

    friend bool operator==(const Rect&, const Rect&) = default;
};

/// Lattice index i of a periodicity cell eps*(i + Q).
struct LatticeIndex {
    int ix = -1;
    int iy = -1;

    bool valid() const { return ix >= 0 && iy >= 0; }
    friend auto operator<=>(const LatticeIndex&, const LatticeIndex&) = default;
};

inline constexpr LatticeIndex kNoCell{};

enum class Region : std::uint8_t { Fluid, Hole };
enum class EdgeTag : std::uint8_t { Outer, HoleBoundary };

struct Triangle {
    std::array<int, 3> v{};
    Region region = Region::Fluid;
    LatticeIndex cell{};
};

struct BoundaryEdge {
    std::array<int, 2> v{};
    EdgeTag tag = EdgeTag::Outer;
    LatticeIndex cell{};
};

struct Mesh {
    std::vector<Point> nodes;
    std::vector<Triangle> triangles;
    std::vector<BoundaryEdge> edges;
    double eps = 1.0;      ///< cell size for tiled meshes, 1 otherwise
    int cells_per_side = 0; ///< n = 1/eps for tiled meshes, 0 otherwise

    std::size_t node_count() const { return nodes.size(); }
    std::size_t triangle_count() const { return triangles.size(); }

    double signed_area2(std::size_t t) const {
        const auto& v = triangles[t].v;
        return orient(nodes[v[0]], nodes[v[1]], nodes[v[2]]);
    }

    double area(std::size_t t) const { return 0.5 * signed_area2(t); }

    double region_area(Region r) const {
        double total = 0.0;
        for (std::size_t t = 0; t < triangles.size(); ++t)
            if (triangles[t].region == r) total += area(t);
        return total;
    }

    Point centroid(std::size_t t) const {
        const auto& v = triangles[t].v;
        return (1.0 / 3.0) * (nodes[v[0]] + nodes[v[1]] + nodes[v[2]]);
    }

    double edge_length(const BoundaryEdge& e) const { return norm(nodes[e.v[1]] - nodes[e.v[0]]); }

    std::size_t count_edges(EdgeTag tag) const {
        return static_cast<std::size_t>(
            std::count_if(edges.begin(), edges.end(), [tag](const BoundaryEdge& e) { return e.tag == tag; }));
    }
};

/// Regular polygon approximating the disk hole B.
struct HolePolygon {
    Point center{0.5, 0.5};
    double radius = 0.0;
    int sides = 0;

    bool empty() const { return radius <= 0.0 || sides < 3; }

    double area() const {
        if (empty()) return 0.0;
        return 0.5 * sides * radius * radius * std::sin(2.0 * std::numbers::pi / sides);
    }

    double perimeter() const {
        if (empty()) return 0.0;
        return 2.0 * sides * radius * std::sin(std::numbers::pi / sides);
    }

    std::vector<Point> vertices() const {
        std::vector<Point> out;
        if (empty()) return out;
        out.reserve(static_cast<std::size_t>(sides));
        for (int k = 0; k < sides; ++k) {
            const double theta = 2.0 * std::numbers::pi * k / sides;
            out.push_back({center.x + radius * std::cos(theta), center.y + radius * std::sin(theta)});
        }
        return out;
    }

    /// Inside or on the polygon boundary (counter-clockwise vertices).
    bool contains(Point p) const {
        if (empty()) return false;
        const auto vs = vertices();
        for (std::size_t k = 0; k < vs.size(); ++k)
            if (orient(vs[k], vs[(k + 1) % vs.size()], p) < 0.0) return false;
        return true;
    }
};

/// Face-lattice position of a template node; (-1,-1) for nodes off the faces.
struct GridKey {
    int i = -1;
    int j = -1;

    bool valid() const { return i >= 0; }
};

/// Template periodicity cell: a mesh of the full square Q with HOLE triangles
/// kept, together with the face lattice needed for periodic identification.
struct CellMesh {
    Mesh mesh;
    int divisions = 0;                 ///< N face intervals per side
    std::vector<GridKey> boundary_key; ///< per node
    HolePolygon hole;

    double fluid_area() const { return mesh.region_area(Region::Fluid); }
    double hole_perimeter() const { return hole.perimeter(); }
};

struct DomainConfig {
    double eps = 0.25;
    double hole_radius = 0.25;
    int hole_sides = 32;
    Rect k_rect{0.25, 0.25, 0.75, 0.75};
    double h_ref = 0.125;

    int cells_per_side() const { return static_cast<int>(std::lround(1.0 / eps)); }

    void validate() const {
        if (!(eps > 0.0)) throw ConfigError("eps must be positive");
        const double inv = 1.0 / eps;
        const long n = std::lround(inv);
        if (n < 2 || std::abs(inv - static_cast<double>(n)) > 1e-9 * inv)
            throw ConfigError("1/eps must be an integer >= 2 (got eps=" + std::to_string(eps) + ")");
        if (hole_radius < 0.0 || hole_radius >= 0.5) throw GeometryError("hole radius must lie in [0, 0.5)");
        if (hole_sides < 8) throw GeometryError("hole polygon needs at least 8 sides");
        if (!(h_ref > 0.0)) throw GeometryError("h_ref must be positive");
        if (hole_radius + h_ref >= 0.5) throw GeometryError("hole radius + h_ref must stay below 0.5");
        const Rect& k = k_rect;
        if (!(k.x0 >= 0.0 && k.x0 < k.x1 && k.x1 <= 1.0 && k.y0 >= 0.0 && k.y0 < k.y1 && k.y1 <= 1.0))
            throw ConfigError("K must be a rectangle inside the closed unit square");
    }
};

namespace detail {

inline std::uint64_t edge_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
           static_cast<std::uint32_t>(b);
}

inline std::uint64_t undirected_key(int a, int b) { return a < b ? edge_key(a, b) : edge_key(b, a); }

/// In-circle determinant for counter-clockwise (a,b,c); positive when d is
/// strictly inside the circumcircle. Also returns the magnitude scale of the
/// summands so that callers can apply a relative tolerance.
inline std::pair<long double, long double> incircle(Point a, Point b, Point c, Point d) {
    const long double adx = static_cast<long double>(a.x) - d.x, ady = static_cast<long double>(a.y) - d.y;
    const long double bdx = static_cast<long double>(b.x) - d.x, bdy = static_cast<long double>(b.y) - d.y;
    const long double cdx = static_cast<long double>(c.x) - d.x, cdy = static_cast<long double>(c.y) - d.y;
    const long double alift = adx * adx + ady * ady;
    const long double blift = bdx * bdx + bdy * bdy;
    const long double clift = cdx * cdx + cdy * cdy;
    const long double t1 = alift * (bdx * cdy - bdy * cdx);
    const long double t2 = blift * (cdx * ady - cdy * adx);
    const long double t3 = clift * (adx * bdy - ady * bdx);
    const long double scale = std::abs(alift) * (std::abs(bdx * cdy) + std::abs(bdy * cdx)) +
                              std::abs(blift) * (std::abs(cdx * ady) + std::abs(cdy * adx)) +
                              std::abs(clift) * (std::abs(adx * bdy) + std::abs(ady * bdx));
    return {t1 + t2 + t3, scale};
}

/// Incremental Delaunay triangulation of points in an axis-aligned box whose
/// four corners are the first four points. Lawson flips keep the mesh valid
/// under rounding; enforced edges are never flipped.
class Triangulator {
public:
    explicit Triangulator(std::vector<Point> pts) : pts_(std::move(pts)) {
        if (pts_.size() < 4) throw GeometryError("triangulator needs the four box corners");
        // corners: 0=(x0,y0) 1=(x1,y0) 2=(x1,y1) 3=(x0,y1)
        add_triangle({0, 1, 2});
        add_triangle({0, 2, 3});
        double span = 0.0;
        for (const auto& p : pts_) span = std::max({span, std::abs(p.x), std::abs(p.y)});
        orient_tol_ = 1e-13 * std::max(1.0, span * span);
    }

    void enforce(int a, int b) { fixed_.insert(undirected_key(a, b)); }

    void insert(int p) {
        const Point P = pts_[p];
        for (std::size_t t = 0; t < tris_.size(); ++t) {
            const auto& v = tris_[t];
            const std::array<double, 3> o{orient(pts_[v[1]], pts_[v[2]], P), orient(pts_[v[2]], pts_[v[0]], P),
                                          orient(pts_[v[0]], pts_[v[1]], P)};
            if (std::min({o[0], o[1], o[2]}) < -orient_tol_) continue;
            int zeros = 0, on = -1;
            for (int i = 0; i < 3; ++i)
                if (std::abs(o[i]) <= orient_tol_) {
                    ++zeros;
                    on = i;
                }
            if (zeros >= 2)
                throw GeometryError("duplicate node at (" + std::to_string(P.x) + ", " + std::to_string(P.y) + ")");
            if (zeros == 1)
                split_edge(static_cast<int>(t), on, p);
            else
                split_interior(static_cast<int>(t), p);
            return;
        }
        throw GeometryError("node outside triangulated box at (" + std::to_string(P.x) + ", " +
                            std::to_string(P.y) + ")");
    }

    /// Among cocircular quads choose the diagonal best aligned with the ray from
    /// `center`; keeps structured parts of the mesh symmetric about `center`.
    void canonicalize(Point center) {
        for (int pass = 0; pass < 8; ++pass) {
            bool changed = false;
            for (std::size_t t = 0; t < tris_.size(); ++t) {
                for (int i = 0; i < 3; ++i) {
                    const auto v = tris_[t];
                    const int a = v[i], b = v[(i + 1) % 3], c = v[(i + 2) % 3];
                    if (a > b || fixed_.count(undirected_key(a, b))) continue;
                    const auto it = owner_.find(edge_key(b, a));
                    if (it == owner_.end()) continue;
                    const int u = it->second;
                    const int d = third(u, b, a);
                    const auto [det, scale] = incircle(pts_[a], pts_[b], pts_[c], pts_[d]);
                    if (std::abs(det) > 1e-10L * scale) continue;
                    if (orient(pts_[c], pts_[a], pts_[d]) <= orient_tol_ ||
                        orient(pts_[d], pts_[b], pts_[c]) <= orient_tol_)
                        continue;
                    if (alignment(c, d, center) > alignment(a, b, center) + 1e-9) {
                        flip(static_cast<int>(t), u, a, b, c, d);
                        changed = true;
                        break;
                    }
                }
            }
            if (!changed) return;
        }
    }

    bool has_edge(int a, int b) const {
        return owner_.count(edge_key(a, b)) != 0 || owner_.count(edge_key(b, a)) != 0;
    }

    const std::vector<std::array<int, 3>>& triangles() const { return tris_; }
    const std::vector<Point>& points() const { return pts_; }

private:
    double alignment(int a, int b, Point center) const {
        const Point dir = pts_[b] - pts_[a];
        const Point mid = 0.5 * (pts_[a] + pts_[b]);
        const Point ray = mid - center;
        const double n = norm(dir) * norm(ray);
        return n > 0.0 ? std::abs(dot(dir, ray)) / n : 0.0;
    }

    int third(int t, int a, int b) const {
        const auto& v = tris_[t];
        for (int i = 0; i < 3; ++i)
            if (v[i] == a && v[(i + 1) % 3] == b) return v[(i + 2) % 3];
        throw GeometryError("internal: triangle does not own the requested edge");
    }

    void add_triangle(std::array<int, 3> v) {
        tris_.push_back(v);
        register_edges(static_cast<int>(tris_.size()) - 1);
    }

    void register_edges(int t) {
        const auto& v = tris_[t];
        for (int i = 0; i < 3; ++i) owner_[edge_key(v[i], v[(i + 1) % 3])] = t;
    }

    void unregister_edges(int t) {
        const auto& v = tris_[t];
        for (int i = 0; i < 3; ++i) {
            const auto it = owner_.find(edge_key(v[i], v[(i + 1) % 3]));
            if (it != owner_.end() && it->second == t) owner_.erase(it);
        }
    }

    void set_triangle(int t, std::array<int, 3> v) {
        unregister_edges(t);
        tris_[t] = v;
        register_edges(t);
    }

    void split_interior(int t, int p) {
        const auto [a, b, c] = tris_[t];
        set_triangle(t, {a, b, p});
        add_triangle({b, c, p});
        add_triangle({c, a, p});
        legalize(a, b, p);
        legalize(b, c, p);
        legalize(c, a, p);
    }

    void split_edge(int t, int opposite, int p) {
        const auto v = tris_[t];
        const int c = v[opposite], a = v[(opposite + 1) % 3], b = v[(opposite + 2) % 3];
        const auto it = owner_.find(edge_key(b, a));
        const int u = it == owner_.end() ? -1 : it->second;
        const int d = u >= 0 ? third(u, b, a) : -1;
        if (fixed_.count(undirected_key(a, b))) throw GeometryError("node falls on an enforced edge");
        set_triangle(t, {a, p, c});
        add_triangle({p, b, c});
        if (u >= 0) {
            set_triangle(u, {b, p, d});
            add_triangle({p, a, d});
        }
        legalize(c, a, p);
        legalize(b, c, p);
        if (u >= 0) {
            legalize(d, b, p);
            legalize(a, d, p);
        }
    }

    void flip(int t, int u, int a, int b, int c, int d) {
        // t = (a,b,c), u = (b,a,d)  ->  (c,a,d), (d,b,c)
        set_triangle(t, {c, a, d});
        set_triangle(u, {d, b, c});
    }

    void legalize(int a0, int b0, int p0) {
        std::vector<std::array<int, 3>> stack{{a0, b0, p0}};
        while (!stack.empty()) {
            const auto [a, b, p] = stack.back();
            stack.pop_back();
            if (fixed_.count(undirected_key(a, b))) continue;
            const auto ti = owner_.find(edge_key(a, b));
            const auto ui = owner_.find(edge_key(b, a));
            if (ti == owner_.end() || ui == owner_.end()) continue;
            const int t = ti->second, u = ui->second;
            if (third(t, a, b) != p) continue;
            const int d = third(u, b, a);
            const auto [det, scale] = incircle(pts_[a], pts_[b], pts_[p], pts_[d]);
            if (det <= 1e-10L * scale) continue;
            if (orient(pts_[p], pts_[a], pts_[d]) <= orient_tol_ || orient(pts_[d], pts_[b], pts_[p]) <= orient_tol_)
                continue;
            flip(t, u, a, b, p, d);
            stack.push_back({a, d, p});
            stack.push_back({d, b, p});
        }
    }

    std::vector<Point> pts_;
    std::vector<std::array<int, 3>> tris_;
    std::unordered_map<std::uint64_t, int> owner_;
    std::unordered_set<std::uint64_t> fixed_;
    double orient_tol_ = 1e-13;
};

inline double segment_distance(Point p, Point a, Point b) {
    const Point ab = b - a;
    const double len2 = dot(ab, ab);
    double s = len2 > 0.0 ? dot(p - a, ab) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return norm(p - (a + s * ab));
}

} // namespace detail

/// Conforming triangulation of Q with the hole polygon as an internal
/// interface. Throws GeometryError when r + h_ref >= 1/2.
inline CellMesh build_cell_mesh(double radius, int polygon_sides, double h_ref) {
    if (radius < 0.0 || !(h_ref > 0.0)) throw GeometryError("invalid cell mesh parameters");
    if (radius + h_ref >= 0.5) throw GeometryError("hole radius + h_ref must stay below 0.5");
    if (radius > 0.0 && polygon_sides < 8) throw GeometryError("hole polygon needs at least 8 sides");

    const int N = std::max(2, static_cast<int>(std::lround(1.0 / h_ref)));
    const double h = 1.0 / N;

    CellMesh cell;
    cell.divisions = N;
    cell.hole = HolePolygon{{0.5, 0.5}, radius, radius > 0.0 ? polygon_sides : 0};

    std::vector<Point> pts;
    std::vector<GridKey> keys;
    auto add_grid = [&](int i, int j) {
        pts.push_back({static_cast<double>(i) / N, static_cast<double>(j) / N});
        keys.push_back({i, j});
    };
    add_grid(0, 0);
    add_grid(N, 0);
    add_grid(N, N);
    add_grid(0, N);
    for (int i = 1; i < N; ++i) add_grid(i, 0);
    for (int i = 1; i < N; ++i) add_grid(i, N);
    for (int j = 1; j < N; ++j) add_grid(0, j);
    for (int j = 1; j < N; ++j) add_grid(N, j);

    const auto poly = cell.hole.vertices();
    const int poly_begin = static_cast<int>(pts.size());
    for (const auto& v : poly) {
        pts.push_back(v);
        keys.push_back({});
    }

    // Background nodes too close to the polygon would spoil the hole edges.
    const double seg = poly.empty() ? 0.0 : norm(poly[1] - poly[0]);
    for (int j = 1; j < N; ++j) {
        for (int i = 1; i < N; ++i) {
            const Point p{static_cast<double>(i) / N, static_cast<double>(j) / N};
            bool keep = true;
            for (std::size_t k = 0; k < poly.size() && keep; ++k) {
                const Point a = poly[k], b = poly[(k + 1) % poly.size()];
                if (detail::segment_distance(p, a, b) < 0.5 * h) keep = false;
                if (norm(p - 0.5 * (a + b)) < 0.55 * seg) keep = false;
            }
            if (keep) {
                pts.push_back(p);
                keys.push_back({});
            }
        }
    }

    detail::Triangulator tri(pts);
    const int np = static_cast<int>(poly.size());
    for (int k = 0; k < np; ++k) tri.enforce(poly_begin + k, poly_begin + (k + 1) % np);
    for (int p = 4; p < static_cast<int>(pts.size()); ++p) tri.insert(p);
    tri.canonicalize({0.5, 0.5});

    for (int k = 0; k < np; ++k)
        if (!tri.has_edge(poly_begin + k, poly_begin + (k + 1) % np))
            throw GeometryError("hole polygon edge missing from the cell triangulation");

    Mesh& mesh = cell.mesh;
    mesh.nodes = pts;
    for (const auto& v : tri.triangles()) {
        Triangle t;
        t.v = v;
        t.cell = LatticeIndex{0, 0};
        const Point c = (1.0 / 3.0) * (pts[v[0]] + pts[v[1]] + pts[v[2]]);
        t.region = cell.hole.contains(c) ? Region::Hole : Region::Fluid;
        mesh.triangles.push_back(t);
    }
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        if (mesh.signed_area2(t) <= 1e-14) {
            const Point c = mesh.centroid(t);
            throw GeometryError("degenerate cell triangle near (" + std::to_string(c.x) + ", " +
                                std::to_string(c.y) + ")");
        }
    }

    // Outer faces of Q, walked counter-clockwise along the lattice.
    std::vector<int> lattice_node((N + 1) * (N + 1), -1);
    for (std::size_t n = 0; n < keys.size(); ++n)
        if (keys[n].valid()) lattice_node[keys[n].j * (N + 1) + keys[n].i] = static_cast<int>(n);
    auto at = [&](int i, int j) { return lattice_node[j * (N + 1) + i]; };
    for (int i = 0; i < N; ++i) mesh.edges.push_back({{at(i, 0), at(i + 1, 0)}, EdgeTag::Outer, {0, 0}});
    for (int j = 0; j < N; ++j) mesh.edges.push_back({{at(N, j), at(N, j + 1)}, EdgeTag::Outer, {0, 0}});
    for (int i = N; i > 0; --i) mesh.edges.push_back({{at(i, N), at(i - 1, N)}, EdgeTag::Outer, {0, 0}});
    for (int j = N; j > 0; --j) mesh.edges.push_back({{at(0, j), at(0, j - 1)}, EdgeTag::Outer, {0, 0}});
    for (int k = 0; k < np; ++k)
        mesh.edges.push_back({{poly_begin + k, poly_begin + (k + 1) % np}, EdgeTag::HoleBoundary, {0, 0}});

    cell.boundary_key = std::move(keys);
    return cell;
}

/// Both views of a tiled domain. Node numbering is shared: the perforated
/// mesh's nodes are the first `perforated.node_count()` nodes of `full`.
struct TiledMesh {
    Mesh perforated;            ///< FLUID triangles only (Omega_eps)
    Mesh full;                  ///< all triangles including holes (Omega)
    std::vector<int> template_node; ///< per full-mesh node
};

inline TiledMesh tile_cell_mesh(const DomainConfig& cfg, const CellMesh& cell) {
    {
        const double inv = 1.0 / cfg.eps;
        const long n = std::lround(inv);
        if (n < 1 || std::abs(inv - static_cast<double>(n)) > 1e-9 * inv)
            throw ConfigError("1/eps must be an integer");
    }
    const int n = cfg.cells_per_side();
    const int N = cell.divisions;
    const Mesh& tmpl = cell.mesh;
    const std::size_t tn = tmpl.node_count();

    std::vector<Point> nodes;
    std::vector<int> tnode;
    std::unordered_map<std::uint64_t, int> lattice;
    std::vector<int> local(tn);

    struct RawTri {
        std::array<int, 3> v;
        Region region;
        LatticeIndex cell;
    };
    std::vector<RawTri> raw;
    std::vector<BoundaryEdge> edges;

    for (int cj = 0; cj < n; ++cj) {
        for (int ci = 0; ci < n; ++ci) {
            for (std::size_t k = 0; k < tn; ++k) {
                const GridKey key = cell.boundary_key[k];
                const Point y = tmpl.nodes[k];
                if (key.valid()) {
                    const auto gk = detail::edge_key(ci * N + key.i, cj * N + key.j);
                    const auto [it, inserted] = lattice.try_emplace(gk, static_cast<int>(nodes.size()));
                    if (inserted) {
                        nodes.push_back({(ci + y.x) / n, (cj + y.y) / n});
                        tnode.push_back(static_cast<int>(k));
                    }
                    local[k] = it->second;
                } else {
                    local[k] = static_cast<int>(nodes.size());
                    nodes.push_back({(ci + y.x) / n, (cj + y.y) / n});
                    tnode.push_back(static_cast<int>(k));
                }
            }
            const LatticeIndex li{ci, cj};
            for (const auto& t : tmpl.triangles)
                raw.push_back({{local[t.v[0]], local[t.v[1]], local[t.v[2]]}, t.region, li});
            for (const auto& e : tmpl.edges) {
                if (e.tag == EdgeTag::HoleBoundary) {
                    edges.push_back({{local[e.v[0]], local[e.v[1]]}, EdgeTag::HoleBoundary, li});
                    continue;
                }
                const GridKey a = cell.boundary_key[e.v[0]], b = cell.boundary_key[e.v[1]];
                const bool outer = (a.j == 0 && b.j == 0 && cj == 0) || (a.j == N && b.j == N && cj == n - 1) ||
                                   (a.i == 0 && b.i == 0 && ci == 0) || (a.i == N && b.i == N && ci == n - 1);
                if (outer) edges.push_back({{local[e.v[0]], local[e.v[1]]}, EdgeTag::Outer, kNoCell});
            }
        }
    }

    // Renumber: nodes touching a FLUID triangle first, hole-interior nodes after.
    std::vector<char> fluid(nodes.size(), 0);
    for (const auto& t : raw)
        if (t.region == Region::Fluid)
            for (int v : t.v) fluid[v] = 1;
    std::vector<int> perm(nodes.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (fluid[i]) perm[i] = next++;
    const int fluid_count = next;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (!fluid[i]) perm[i] = next++;

    TiledMesh out;
    out.full.nodes.resize(nodes.size());
    out.template_node.resize(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        out.full.nodes[perm[i]] = nodes[i];
        out.template_node[perm[i]] = tnode[i];
    }
    for (const auto& t : raw) {
        Triangle tri{{perm[t.v[0]], perm[t.v[1]], perm[t.v[2]]}, t.region, t.cell};
        out.full.triangles.push_back(tri);
        if (t.region == Region::Fluid) out.perforated.triangles.push_back(tri);
    }
    for (auto e : edges) {
        e.v = {perm[e.v[0]], perm[e.v[1]]};
        out.full.edges.push_back(e);
    }
    out.perforated.nodes.assign(out.full.nodes.begin(), out.full.nodes.begin() + fluid_count);
    out.perforated.edges = out.full.edges;
    for (Mesh* m : {&out.full, &out.perforated}) {
        m->eps = 1.0 / n;
        m->cells_per_side = n;
    }
    return out;
}

/// Omega_eps: n x n tiling of the template with every hole removed.
inline Mesh build_perforated_mesh(const DomainConfig& cfg, const CellMesh& cell) {
    return tile_cell_mesh(cfg, cell).perforated;
}

/// Structured two-triangles-per-square mesh of a rectangle; diagonals point
/// towards the rectangle centre so the mesh shares the rectangle's symmetries.
inline Mesh build_domain_mesh(const Rect& rect, double h) {
    if (!(rect.x1 > rect.x0) || !(rect.y1 > rect.y0) || !(h > 0.0)) throw GeometryError("degenerate rectangle");
    const int nx = std::max(1, static_cast<int>(std::lround(rect.width() / h)));
    const int ny = std::max(1, static_cast<int>(std::lround(rect.height() / h)));
    Mesh mesh;
    mesh.nodes.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
    for (int j = 0; j <= ny; ++j) {
        const double y = j == ny ? rect.y1 : rect.y0 + rect.height() * j / ny;
        for (int i = 0; i <= nx; ++i) {
            const double x = i == nx ? rect.x1 : rect.x0 + rect.width() * i / nx;
            mesh.nodes.push_back({x, y});
        }
    }
    auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
    const Point c = rect.center();
    for (int j = 0; j < ny; ++j) {
        for (int i = 0; i < nx; ++i) {
            const int a = id(i, j), b = id(i + 1, j), cc = id(i + 1, j + 1), d = id(i, j + 1);
            const Point mid = 0.5 * (mesh.nodes[a] + mesh.nodes[cc]);
            if ((mid.x - c.x) * (mid.y - c.y) >= 0.0) {
                mesh.triangles.push_back({{a, b, cc}, Region::Fluid, kNoCell});
                mesh.triangles.push_back({{a, cc, d}, Region::Fluid, kNoCell});
            } else {
                mesh.triangles.push_back({{a, b, d}, Region::Fluid, kNoCell});
                mesh.triangles.push_back({{b, cc, d}, Region::Fluid, kNoCell});
            }
        }
    }
    for (int i = 0; i < nx; ++i) mesh.edges.push_back({{id(i, 0), id(i + 1, 0)}, EdgeTag::Outer, kNoCell});
    for (int j = 0; j < ny; ++j) mesh.edges.push_back({{id(nx, j), id(nx, j + 1)}, EdgeTag::Outer, kNoCell});
    for (int i = nx; i > 0; --i) mesh.edges.push_back({{id(i, ny), id(i - 1, ny)}, EdgeTag::Outer, kNoCell});
    for (int j = ny; j > 0; --j) mesh.edges.push_back({{id(0, j), id(0, j - 1)}, EdgeTag::Outer, kNoCell});
    return mesh;
}

struct ConformityReport {
    bool ok = true;
    std::size_t interior_edges = 0;
    std::size_t boundary_edges = 0;
    std::string problem;
};

/// Edge-hashing audit: interior edges have exactly two incident triangles,
/// edges with one incident triangle are tagged boundary edges, triangles are
/// counter-clockwise with positive area.
inline ConformityReport audit_conformity(const Mesh& mesh, bool fluid_only = false) {
    ConformityReport rep;
    std::unordered_map<std::uint64_t, int> count;
    for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
        const auto& tri = mesh.triangles[t];
        if (fluid_only && tri.region != Region::Fluid) continue;
        if (mesh.signed_area2(t) <= 0.0) {
            rep.ok = false;
            rep.problem = "non-positive area in triangle " + std::to_string(t);
            return rep;
        }
        for (int i = 0; i < 3; ++i) ++count[detail::undirected_key(tri.v[i], tri.v[(i + 1) % 3])];
    }
    std::unordered_set<std::uint64_t> tagged;
    for (const auto& e : mesh.edges) tagged.insert(detail::undirected_key(e.v[0], e.v[1]));
    for (const auto& [key, c] : count) {
        if (c == 2) {
            ++rep.interior_edges;
        } else if (c == 1) {
            ++rep.boundary_edges;
            if (!tagged.count(key)) {
                rep.ok = false;
                rep.problem = "untagged boundary edge";
            }
        } else {
            rep.ok = false;
            rep.problem = "edge shared by " + std::to_string(c) + " triangles";
        }
    }
    return rep;
}

struct Location {
    int triangle = -1;
    std::array<double, 3> bary{};
};

/// Bucket-grid point locator over the FLUID triangles of a mesh. Immutable
/// once built; queries return the lowest-index containing triangle.
class PointLocator {
public:
    explicit PointLocator(const Mesh& mesh, double tolerance = 1e-12) : mesh_(&mesh), tol_(tolerance) {
        if (mesh.nodes.empty()) return;
        lo_ = hi_ = mesh.nodes.front();
        for (const auto& p : mesh.nodes) {
            lo_ = {std::min(lo_.x, p.x), std::min(lo_.y, p.y)};
            hi_ = {std::max(hi_.x, p.x), std::max(hi_.y, p.y)};
        }
        const auto nt = std::max<std::size_t>(1, mesh.triangles.size());
        nb_ = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(nt) / 2.0)));
        buckets_.assign(static_cast<std::size_t>(nb_ * nb_), {});
        for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
            const auto& tri = mesh.triangles[t];
            if (tri.region != Region::Fluid) continue;
            Point a = mesh.nodes[tri.v[0]], b = a;
            for (int v : tri.v) {
                const Point p = mesh.nodes[v];
                a = {std::min(a.x, p.x), std::min(a.y, p.y)};
                b = {std::max(b.x, p.x), std::max(b.y, p.y)};
            }
            const auto [i0, j0] = bucket_of({a.x - pad(), a.y - pad()});
            const auto [i1, j1] = bucket_of({b.x + pad(), b.y + pad()});
            for (int j = j0; j <= j1; ++j)
                for (int i = i0; i <= i1; ++i) buckets_[static_cast<std::size_t>(j * nb_ + i)].push_back(static_cast<int>(t));
        }
    }

    std::optional<Location> locate(Point x) const {
        if (buckets_.empty()) return std::nullopt;
        if (x.x < lo_.x - pad() || x.x > hi_.x + pad() || x.y < lo_.y - pad() || x.y > hi_.y + pad())
            return std::nullopt;
        const auto [i, j] = bucket_of(x);
        for (int t : buckets_[static_cast<std::size_t>(j * nb_ + i)]) {
            const auto& v = mesh_->triangles[t].v;
            const Point p0 = mesh_->nodes[v[0]], p1 = mesh_->nodes[v[1]], p2 = mesh_->nodes[v[2]];
            const double a2 = orient(p0, p1, p2);
            std::array<double, 3> b{orient(p1, p2, x) / a2, orient(p2, p0, x) / a2, orient(p0, p1, x) / a2};
            if (std::min({b[0], b[1], b[2]}) < -tol_) continue;
            double s = 0.0;
            for (auto& c : b) {
                c = std::max(c, 0.0);
                s += c;
            }
            for (auto& c : b) c /= s;
            return Location{t, b};
        }
        return std::nullopt;
    }

    const Mesh& mesh() const { return *mesh_; }

private:
    double pad() const { return 1e-9 * std::max(1.0, std::max(hi_.x - lo_.x, hi_.y - lo_.y)); }

    std::pair<int, int> bucket_of(Point p) const {
        const double wx = std::max(hi_.x - lo_.x, 1e-300), wy = std::max(hi_.y - lo_.y, 1e-300);
        int i = static_cast<int>(std::floor((p.x - lo_.x) / wx * nb_));
        int j = static_cast<int>(std::floor((p.y - lo_.y) / wy * nb_));
        return {std::clamp(i, 0, nb_ - 1), std::clamp(j, 0, nb_ - 1)};
    }

    const Mesh* mesh_;
    double tol_;
    Point lo_{}, hi_{};
    int nb_ = 1;
    std::vector<std::vector<int>> buckets_;
};

/// One-shot point location; build a PointLocator for repeated queries.
inline std::optional<Location> locate_point(const Mesh& mesh, Point x) { return PointLocator(mesh).locate(x); }

// ---------------------------------------------------------------------------
// Text format:
//   <N> nodes <T> triangles <E> edges
//   x y                          (N lines)
//   i j k region cell_ix cell_iy (T lines, region FLUID|HOLE)
//   i j tag                      (E lines, tag OUTER|HOLE_BDRY(ix,iy))
// ---------------------------------------------------------------------------

inline void write_mesh(std::ostream& os, const Mesh& mesh) {
    os << mesh.nodes.size() << " nodes " << mesh.triangles.size() << " triangles " << mesh.edges.size()
       << " edges\n";
    os << std::setprecision(17);
    for (const auto& p : mesh.nodes) os << p.x << ' ' << p.y << '\n';
    for (const auto& t : mesh.triangles)
        os << t.v[0] << ' ' << t.v[1] << ' ' << t.v[2] << ' ' << (t.region == Region::Fluid ? "FLUID" : "HOLE")
           << ' ' << t.cell.ix << ' ' << t.cell.iy << '\n';
    for (const auto& e : mesh.edges) {
        os << e.v[0] << ' ' << e.v[1] << ' ';
        if (e.tag == EdgeTag::Outer)
            os << "OUTER\n";
        else
            os << "HOLE_BDRY(" << e.cell.ix << ',' << e.cell.iy << ")\n";
    }
}

inline Mesh read_mesh(std::istream& is) {
    Mesh mesh;
    std::size_t n = 0, t = 0, e = 0;
    std::string w1, w2, w3;
    if (!(is >> n >> w1 >> t >> w2 >> e >> w3) || w1 != "nodes" || w2 != "triangles" || w3 != "edges")
        throw IoError("malformed mesh header");
    mesh.nodes.resize(n);
    for (auto& p : mesh.nodes)
        if (!(is >> p.x >> p.y)) throw IoError("malformed node line");
    mesh.triangles.resize(t);
    for (auto& tri : mesh.triangles) {
        std::string region;
        if (!(is >> tri.v[0] >> tri.v[1] >> tri.v[2] >> region >> tri.cell.ix >> tri.cell.iy))
            throw IoError("malformed triangle line");
        if (region == "FLUID")
            tri.region = Region::Fluid;
        else if (region == "HOLE")
            tri.region = Region::Hole;
        else
            throw IoError("unknown region tag " + region);
    }
    mesh.edges.resize(e);
    for (auto& edge : mesh.edges) {
        std::string tag;
        if (!(is >> edge.v[0] >> edge.v[1] >> tag)) throw IoError("malformed edge line");
        if (tag == "OUTER") {
            edge.tag = EdgeTag::Outer;
        } else if (tag.rfind("HOLE_BDRY(", 0) == 0) {
            edge.tag = EdgeTag::HoleBoundary;
            char sep = 0, close = 0;
            std::istringstream cs(tag.substr(10));
            if (!(cs >> edge.cell.ix >> sep >> edge.cell.iy >> close) || sep != ',' || close != ')')
                throw IoError("malformed hole edge tag " + tag);
        } else {
            throw IoError("unknown edge tag " + tag);
        }
    }
    return mesh;
}

} // namespace homoglab
