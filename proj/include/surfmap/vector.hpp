#pragma once

// Planar vector geometry for map layers: polygons with holes, polylines,
// topology validation, dissolving polygons into an area of interest,
// clipping, exact rectangle intersection areas and rasterization.
//
// Rings are stored closed (first vertex repeated at the end); algorithms
// iterate edges with wrap-around so a missing closing vertex never breaks
// them, but validate_topology reports it. Exterior rings run
// counter-clockwise and holes clockwise once normalize_orientation ran.

#include "surfmap/raster.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

namespace surfmap {

struct Point {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point&) const = default;
    auto operator<=>(const Point&) const = default;
};

inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline double cross(Point a, Point b) { return a.x * b.y - a.y * b.x; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }

using Ring = std::vector<Point>;

/// Surficial geologic map units; the numeric codes are the mask pixel values.
enum class GeologicClass : int { None = 0, af1 = 1, Qal = 2, Qaf = 3, Qat = 4, Qc = 5, Qca = 6, Qr = 7 };

constexpr int kNumClasses = 7;
constexpr std::array<const char*, kNumClasses> kClassNames{"af1", "Qal", "Qaf", "Qat", "Qc", "Qca", "Qr"};

inline const char* class_name(GeologicClass c) {
    const int code = static_cast<int>(c);
    return code >= 1 && code <= kNumClasses ? kClassNames[static_cast<std::size_t>(code - 1)] : "none";
}

inline std::optional<GeologicClass> class_from_name(const std::string& name) {
    for (int i = 0; i < kNumClasses; ++i)
        if (name == kClassNames[static_cast<std::size_t>(i)]) return static_cast<GeologicClass>(i + 1);
    return std::nullopt;
}

inline int class_index(GeologicClass c) { return static_cast<int>(c) - 1; }

enum class LineSource { Hydro, Infra };

struct Polygon {
    Ring exterior;
    std::vector<Ring> holes;
    GeologicClass cls = GeologicClass::None;
    std::string id;
};

struct PolyLine {
    std::vector<Point> points;
    LineSource source = LineSource::Hydro;
    std::string id;
};

struct VectorLayer {
    std::vector<Polygon> polygons;
    std::vector<PolyLine> lines;
};

/// A set of non-overlapping polygons (the area of interest may be disconnected).
using MultiPolygon = std::vector<Polygon>;

struct Rect {
    double min_x = 0, min_y = 0, max_x = 0, max_y = 0;
    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
    double area() const { return width() * height(); }
    bool overlaps(const Rect& o) const {  // positive-area overlap
        return std::min(max_x, o.max_x) > std::max(min_x, o.min_x) && std::min(max_y, o.max_y) > std::max(min_y, o.min_y);
    }
    bool touches(const Rect& o) const {
        return std::min(max_x, o.max_x) >= std::max(min_x, o.min_x) && std::min(max_y, o.max_y) >= std::max(min_y, o.min_y);
    }
    Ring ring() const { return {{min_x, min_y}, {max_x, min_y}, {max_x, max_y}, {min_x, max_y}, {min_x, min_y}}; }
};

// ---------------------------------------------------------------------------
// Ring basics

inline bool ring_closed(const Ring& r) { return r.size() >= 2 && r.front() == r.back(); }

/// Vertices without the closing duplicate.
inline std::vector<Point> open_vertices(const Ring& r) {
    std::vector<Point> v(r.begin(), r.end());
    if (ring_closed(v)) v.pop_back();
    return v;
}

inline Ring close_ring(std::vector<Point> v) {
    if (!v.empty() && !(v.front() == v.back())) v.push_back(v.front());
    return v;
}

/// Shoelace area, positive for counter-clockwise rings. Coordinates are taken
/// relative to the first vertex to limit cancellation.
inline double ring_signed_area(const std::vector<Point>& r) {
    if (r.size() < 3) return 0.0;
    const Point o = r.front();
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        const Point a = r[i] - o;
        const Point b = r[(i + 1) % r.size()] - o;
        s += a.x * b.y - b.x * a.y;
    }
    return 0.5 * s;
}

inline double polygon_area(const Polygon& p) {
    double a = std::abs(ring_signed_area(p.exterior));
    for (const auto& h : p.holes) a -= std::abs(ring_signed_area(h));
    return a;
}

inline double multipolygon_area(const MultiPolygon& m) {
    double a = 0.0;
    for (const auto& p : m) a += polygon_area(p);
    return a;
}

inline Rect bounds(const std::vector<Point>& pts) {
    Rect b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
           -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    for (const auto& p : pts) {
        b.min_x = std::min(b.min_x, p.x);
        b.min_y = std::min(b.min_y, p.y);
        b.max_x = std::max(b.max_x, p.x);
        b.max_y = std::max(b.max_y, p.y);
    }
    return b;
}

inline Rect bounds(const Polygon& p) { return bounds(p.exterior); }

inline Rect bounds(const MultiPolygon& m) {
    Rect b = bounds(std::vector<Point>{});
    for (const auto& p : m) {
        const Rect r = bounds(p);
        b = {std::min(b.min_x, r.min_x), std::min(b.min_y, r.min_y), std::max(b.max_x, r.max_x), std::max(b.max_y, r.max_y)};
    }
    return b;
}

/// Exterior counter-clockwise, holes clockwise.
inline void normalize_orientation(Polygon& p) {
    if (ring_signed_area(open_vertices(p.exterior)) < 0) std::reverse(p.exterior.begin(), p.exterior.end());
    for (auto& h : p.holes)
        if (ring_signed_area(open_vertices(h)) > 0) std::reverse(h.begin(), h.end());
}

// ---------------------------------------------------------------------------
// Point location

enum class Location { Outside, Boundary, Inside };

inline bool on_segment(Point p, Point a, Point b) {
    if (cross(b - a, p - a) != 0.0) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) && p.y >= std::min(a.y, b.y) &&
           p.y <= std::max(a.y, b.y);
}

inline Location locate(Point p, const Ring& ring) {
    const auto v = open_vertices(ring);
    const std::size_t n = v.size();
    if (n < 3) return Location::Outside;
    bool inside = false;
    for (std::size_t i = 0; i < n; ++i) {
        const Point a = v[i];
        const Point b = v[(i + 1) % n];
        if (on_segment(p, a, b)) return Location::Boundary;
        if ((a.y <= p.y) != (b.y <= p.y)) {
            const double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (p.x < x) inside = !inside;
        }
    }
    return inside ? Location::Inside : Location::Outside;
}

inline Location locate(Point p, const Polygon& poly) {
    const Location ext = locate(p, poly.exterior);
    if (ext != Location::Inside) return ext;
    for (const auto& h : poly.holes) {
        const Location l = locate(p, h);
        if (l == Location::Boundary) return Location::Boundary;
        if (l == Location::Inside) return Location::Outside;
    }
    return Location::Inside;
}

inline Location locate(Point p, const MultiPolygon& m) {
    Location best = Location::Outside;
    for (const auto& poly : m) {
        const Location l = locate(p, poly);
        if (l == Location::Inside) return l;
        if (l == Location::Boundary) best = l;
    }
    return best;
}

// ---------------------------------------------------------------------------
// Clipping against convex regions (Sutherland-Hodgman)

/// Clips a (possibly non-convex) ring against a convex counter-clockwise
/// polygon. The result may contain zero-width connecting edges where the
/// subject leaves and re-enters, which does not affect its area.
inline std::vector<Point> clip_convex(const std::vector<Point>& subject, const std::vector<Point>& clip) {
    std::vector<Point> out = subject;
    const std::size_t m = clip.size();
    for (std::size_t k = 0; k < m && !out.empty(); ++k) {
        const Point p = clip[k];
        const Point q = clip[(k + 1) % m];
        if (p == q) continue;
        const Point dir = q - p;
        const bool vertical = p.x == q.x;
        const bool horizontal = p.y == q.y;
        auto side = [&](Point v) { return cross(dir, v - p); };
        auto intersect = [&](Point a, Point b) -> Point {
            if (vertical) return {p.x, a.y + (p.x - a.x) * (b.y - a.y) / (b.x - a.x)};
            if (horizontal) return {a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y), p.y};
            const double sa = side(a), sb = side(b);
            const double t = sa / (sa - sb);
            return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
        };
        std::vector<Point> in;
        in.swap(out);
        const std::size_t n = in.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Point cur = in[i];
            const Point prev = in[(i + n - 1) % n];
            const bool cur_in = side(cur) >= 0.0;
            const bool prev_in = side(prev) >= 0.0;
            if (cur_in) {
                if (!prev_in) out.push_back(intersect(prev, cur));
                out.push_back(cur);
            } else if (prev_in) {
                out.push_back(intersect(prev, cur));
            }
        }
    }
    return out;
}

namespace detail {
inline std::vector<Point> translated(const std::vector<Point>& v, Point o) {
    std::vector<Point> out;
    out.reserve(v.size());
    for (const auto& p : v) out.push_back(p - o);
    return out;
}
}  // namespace detail

/// Area of polygon (holes subtracted) inside a convex counter-clockwise region.
inline double convex_intersection_area(const Polygon& poly, const std::vector<Point>& convex) {
    if (convex.empty()) return 0.0;
    const Point o = convex.front();
    const auto c = detail::translated(convex, o);
    double a = std::abs(ring_signed_area(clip_convex(detail::translated(open_vertices(poly.exterior), o), c)));
    for (const auto& h : poly.holes) a -= std::abs(ring_signed_area(clip_convex(detail::translated(open_vertices(h), o), c)));
    return a;
}

/// Exact area of poly within an axis-aligned rectangle.
inline double rect_intersection_area(const Polygon& poly, const Rect& rect) {
    if (!(rect.width() > 0.0) || !(rect.height() > 0.0)) throw std::invalid_argument("rect_intersection_area: degenerate rectangle");
    const Rect b = bounds(poly);
    if (!b.touches(rect)) return 0.0;
    auto r = open_vertices(rect.ring());
    return convex_intersection_area(poly, r);
}

// ---------------------------------------------------------------------------
// Convex decomposition

/// Splits a valid region (rings of one or more non-overlapping polygons) into
/// trapezoids by vertical slabs through every vertex. Within a slab the
/// boundary edges cannot cross, so sorting them by height and pairing them
/// (even-odd) yields the covered intervals. Each trapezoid is returned as a
/// counter-clockwise vertex list.
inline std::vector<std::vector<Point>> trapezoids(const std::vector<const Ring*>& rings) {
    struct Edge {
        Point a, b;  // a.x < b.x
    };
    std::vector<Edge> edges;
    std::vector<double> xs;
    for (const Ring* ring : rings) {
        const auto v = open_vertices(*ring);
        for (std::size_t i = 0; i < v.size(); ++i) {
            xs.push_back(v[i].x);
            Point a = v[i], b = v[(i + 1) % v.size()];
            if (a.x == b.x) continue;
            if (a.x > b.x) std::swap(a, b);
            edges.push_back({a, b});
        }
    }
    std::sort(xs.begin(), xs.end());
    xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
    std::sort(edges.begin(), edges.end(), [](const Edge& l, const Edge& r) { return l.a.x < r.a.x; });

    auto y_at = [](const Edge& e, double x) {
        if (x == e.a.x) return e.a.y;
        if (x == e.b.x) return e.b.y;
        return e.a.y + (x - e.a.x) * (e.b.y - e.a.y) / (e.b.x - e.a.x);
    };

    std::vector<std::vector<Point>> out;
    std::vector<const Edge*> active;
    std::size_t next = 0;
    struct Span {
        double ya, yb, mid;
    };
    std::vector<Span> spans;
    for (std::size_t s = 0; s + 1 < xs.size(); ++s) {
        const double xa = xs[s], xb = xs[s + 1];
        while (next < edges.size() && edges[next].a.x <= xa) active.push_back(&edges[next++]);
        active.erase(std::remove_if(active.begin(), active.end(), [&](const Edge* e) { return e->b.x <= xa; }), active.end());
        spans.clear();
        for (const Edge* e : active) {
            if (e->a.x > xa || e->b.x < xb) continue;
            const double ya = y_at(*e, xa), yb = y_at(*e, xb);
            spans.push_back({ya, yb, 0.5 * (ya + yb)});
        }
        if (spans.size() % 2 != 0) throw std::invalid_argument("trapezoids: rings do not bound a valid region");
        std::sort(spans.begin(), spans.end(), [](const Span& l, const Span& r) { return l.mid < r.mid; });
        for (std::size_t i = 0; i + 1 < spans.size(); i += 2) {
            const Span& lo = spans[i];
            const Span& hi = spans[i + 1];
            if (lo.ya == hi.ya && lo.yb == hi.yb) continue;
            std::vector<Point> t{{xa, lo.ya}, {xb, lo.yb}, {xb, hi.yb}, {xa, hi.ya}};
            if (t[3] == t[0]) t.erase(t.begin() + 3);
            else if (t[2] == t[1]) t.erase(t.begin() + 2);
            out.push_back(std::move(t));
        }
    }
    return out;
}

inline std::vector<std::vector<Point>> trapezoids(const MultiPolygon& m) {
    std::vector<const Ring*> rings;
    for (const auto& p : m) {
        rings.push_back(&p.exterior);
        for (const auto& h : p.holes) rings.push_back(&h);
    }
    return trapezoids(rings);
}

/// Convex pieces of a region with bounding boxes, for repeated area queries.
struct ConvexCover {
    std::vector<std::vector<Point>> pieces;
    std::vector<Rect> boxes;

    explicit ConvexCover(const MultiPolygon& region) : pieces(trapezoids(region)) {
        boxes.reserve(pieces.size());
        for (const auto& p : pieces) boxes.push_back(bounds(p));
    }

    double intersection_area(const Polygon& poly) const {
        const Rect b = bounds(poly);
        double a = 0.0;
        for (std::size_t i = 0; i < pieces.size(); ++i)
            if (boxes[i].overlaps(b)) a += convex_intersection_area(poly, pieces[i]);
        return a;
    }
};

/// Area of the overlap of two polygons.
inline double polygon_intersection_area(const Polygon& p, const Polygon& q) {
    if (!bounds(p).overlaps(bounds(q))) return 0.0;
    return ConvexCover(MultiPolygon{q}).intersection_area(p);
}

// ---------------------------------------------------------------------------
// Validity

namespace detail {

inline int orient(Point a, Point b, Point c) {
    const double v = cross(b - a, c - a);
    return (v > 0) - (v < 0);
}

inline bool segments_intersect(Point p1, Point p2, Point q1, Point q2) {
    const int o1 = orient(p1, p2, q1), o2 = orient(p1, p2, q2);
    const int o3 = orient(q1, q2, p1), o4 = orient(q1, q2, p2);
    if (o1 != o2 && o3 != o4 && o1 * o2 <= 0 && o3 * o4 <= 0) {
        if (o1 != 0 || o2 != 0 || o3 != 0 || o4 != 0) return true;
    }
    if (o1 == 0 && on_segment(q1, p1, p2)) return true;
    if (o2 == 0 && on_segment(q2, p1, p2)) return true;
    if (o3 == 0 && on_segment(p1, q1, q2)) return true;
    if (o4 == 0 && on_segment(p2, q1, q2)) return true;
    return false;
}

}  // namespace detail

/// True when two non-adjacent edges touch, or adjacent edges fold back on each other.
inline bool ring_self_intersects(const Ring& ring) {
    auto v = open_vertices(ring);
    v.erase(std::unique(v.begin(), v.end()), v.end());
    while (v.size() > 1 && v.front() == v.back()) v.pop_back();
    const std::size_t n = v.size();
    if (n < 3) return false;
    struct Seg {
        std::size_t i;
        double minx, maxx;
    };
    std::vector<Seg> segs;
    for (std::size_t i = 0; i < n; ++i) {
        const Point a = v[i], b = v[(i + 1) % n];
        segs.push_back({i, std::min(a.x, b.x), std::max(a.x, b.x)});
    }
    std::sort(segs.begin(), segs.end(), [](const Seg& l, const Seg& r) { return l.minx < r.minx; });
    for (std::size_t s = 0; s < segs.size(); ++s) {
        for (std::size_t t = s + 1; t < segs.size() && segs[t].minx <= segs[s].maxx; ++t) {
            const std::size_t i = segs[s].i, j = segs[t].i;
            const Point a1 = v[i], a2 = v[(i + 1) % n];
            const Point b1 = v[j], b2 = v[(j + 1) % n];
            const bool adjacent = (i + 1) % n == j || (j + 1) % n == i;
            if (adjacent) {
                // Shared vertex is expected; folding back along the same line is not.
                const Point shared = (i + 1) % n == j ? a2 : b2;
                const Point other_a = (i + 1) % n == j ? a1 : b1;
                const Point other_b = (i + 1) % n == j ? b2 : a2;
                if (detail::orient(other_a, shared, other_b) == 0 && dot(other_a - shared, other_b - shared) > 0)
                    return true;
                continue;
            }
            if (detail::segments_intersect(a1, a2, b1, b2)) return true;
        }
    }
    return false;
}

struct TopologyReport {
    struct Overlap {
        std::string feature_a;
        std::string feature_b;
        double area = 0.0;
    };
    struct InvalidRing {
        std::string feature_id;
        std::string reason;
    };
    std::vector<Overlap> overlaps;
    double gap_area = 0.0;  ///< total gap area when it exceeds the tolerance, else 0
    std::vector<InvalidRing> invalid_rings;

    bool empty() const { return overlaps.empty() && gap_area == 0.0 && invalid_rings.empty(); }
};

inline std::optional<std::string> ring_problem(const Ring& r) {
    if (!ring_closed(r)) return "unclosed ring";
    if (r.size() < 4) return "fewer than three distinct vertices";
    if (ring_self_intersects(r)) return "self-intersecting ring";
    if (ring_signed_area(open_vertices(r)) == 0.0) return "zero-area ring";
    return std::nullopt;
}

MultiPolygon dissolve(const std::vector<Polygon>& polygons);

/// Pairwise overlaps above tol, gaps (holes of the dissolved layer) above tol,
/// and malformed rings.
inline TopologyReport validate_topology(const std::vector<Polygon>& layer, double tol = 25.0) {
    if (layer.empty()) throw std::invalid_argument("validate_topology: empty layer");
    TopologyReport rep;
    std::vector<std::size_t> good;
    for (std::size_t i = 0; i < layer.size(); ++i) {
        bool ok = true;
        if (auto why = ring_problem(layer[i].exterior)) {
            rep.invalid_rings.push_back({layer[i].id, *why});
            ok = false;
        }
        for (const auto& h : layer[i].holes)
            if (auto why = ring_problem(h)) {
                rep.invalid_rings.push_back({layer[i].id, "hole: " + *why});
                ok = false;
            }
        if (ok) good.push_back(i);
    }
    std::vector<Polygon> normalized;
    for (auto i : good) {
        normalized.push_back(layer[i]);
        normalize_orientation(normalized.back());
    }
    std::vector<Rect> boxes;
    for (const auto& p : normalized) boxes.push_back(bounds(p));
    std::vector<std::size_t> order(normalized.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return boxes[a].min_x < boxes[b].min_x; });
    std::vector<std::optional<ConvexCover>> covers(normalized.size());
    std::vector<std::tuple<std::size_t, std::size_t, double>> found;
    for (std::size_t s = 0; s < order.size(); ++s)
        for (std::size_t t = s + 1; t < order.size() && boxes[order[t]].min_x < boxes[order[s]].max_x; ++t) {
            const auto i = order[s], j = order[t];
            if (!boxes[i].overlaps(boxes[j])) continue;
            if (!covers[j]) covers[j].emplace(MultiPolygon{normalized[j]});
            const double a = covers[j]->intersection_area(normalized[i]);
            if (a > tol) found.emplace_back(std::min(i, j), std::max(i, j), a);
        }
    std::sort(found.begin(), found.end());
    for (const auto& [i, j, a] : found) rep.overlaps.push_back({normalized[i].id, normalized[j].id, a});
    if (!normalized.empty()) {
        double gaps = 0.0;
        for (const auto& part : dissolve(normalized))
            for (const auto& h : part.holes) gaps += std::abs(ring_signed_area(open_vertices(h)));
        if (gaps > tol) rep.gap_area = gaps;
    }
    return rep;
}

// ---------------------------------------------------------------------------
// Dissolve (union of edge-sharing polygons)

namespace detail {

/// Removes vertices where the boundary continues straight on.
inline std::vector<Point> drop_collinear(std::vector<Point> v) {
    bool changed = true;
    while (changed && v.size() > 3) {
        changed = false;
        for (std::size_t i = 0; i < v.size() && v.size() > 3; ++i) {
            const Point prev = v[(i + v.size() - 1) % v.size()];
            const Point cur = v[i];
            const Point nxt = v[(i + 1) % v.size()];
            if (cross(cur - prev, nxt - cur) == 0.0 && dot(cur - prev, nxt - cur) > 0.0) {
                v.erase(v.begin() + static_cast<std::ptrdiff_t>(i));
                changed = true;
                --i;
            }
        }
    }
    return v;
}

}  // namespace detail

/// Union of polygons that meet along shared edges (the usual state of a
/// topologically clean map layer). Directed boundary edges, split wherever
/// another polygon's vertex lies on them, cancel against their reverses; what
/// remains is chained into rings, taking the sharpest left turn at shared
/// vertices so touching parts separate into simple rings.
inline MultiPolygon dissolve(const std::vector<Polygon>& polygons) {
    std::vector<std::pair<Point, Point>> raw;
    for (Polygon p : polygons) {
        normalize_orientation(p);
        std::vector<const Ring*> rings{&p.exterior};
        for (const auto& h : p.holes) rings.push_back(&h);
        for (const Ring* r : rings) {
            const auto v = open_vertices(*r);
            for (std::size_t i = 0; i < v.size(); ++i)
                if (!(v[i] == v[(i + 1) % v.size()])) raw.emplace_back(v[i], v[(i + 1) % v.size()]);
        }
    }
    if (raw.empty()) return {};

    // Vertices closer than tol are one vertex: pieces cut from the same
    // feature meet at points computed along different paths.
    std::vector<Point> all;
    for (const auto& [a, b] : raw) all.push_back(a);
    const Rect box = bounds(all);
    const double mag = std::max({std::abs(box.min_x), std::abs(box.max_x), std::abs(box.min_y), std::abs(box.max_y), 1.0});
    const double tol = 1e-11 * mag;
    std::map<std::pair<long long, long long>, std::vector<Point>> reps;
    auto snap = [&](Point p) {
        const long long gx = static_cast<long long>(std::floor((p.x - box.min_x) / tol));
        const long long gy = static_cast<long long>(std::floor((p.y - box.min_y) / tol));
        for (long long dx = -1; dx <= 1; ++dx)
            for (long long dy = -1; dy <= 1; ++dy) {
                const auto it = reps.find({gx + dx, gy + dy});
                if (it == reps.end()) continue;
                for (const Point& q : it->second)
                    if (std::abs(q.x - p.x) <= tol && std::abs(q.y - p.y) <= tol) return q;
            }
        reps[{gx, gy}].push_back(p);
        return p;
    };
    std::vector<std::pair<Point, Point>> edges;
    std::vector<Point> verts;
    for (const auto& [a0, b0] : raw) {
        const Point a = snap(a0), b = snap(b0);
        verts.push_back(a);
        if (!(a == b)) edges.emplace_back(a, b);
    }
    std::sort(verts.begin(), verts.end());
    verts.erase(std::unique(verts.begin(), verts.end()), verts.end());
    if (edges.empty()) return {};

    // Spatial hash of vertices for T-junction splitting.
    const double span = std::max({box.width(), box.height(), 1e-9});
    const double cell = span / std::max(1.0, std::sqrt(static_cast<double>(verts.size())));
    auto key = [&](double x, double y) {
        return std::pair<long long, long long>(static_cast<long long>(std::floor((x - box.min_x) / cell)),
                                               static_cast<long long>(std::floor((y - box.min_y) / cell)));
    };
    std::map<std::pair<long long, long long>, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < verts.size(); ++i) buckets[key(verts[i].x, verts[i].y)].push_back(i);

    std::map<std::pair<Point, Point>, int> count;
    auto add_edge = [&](Point a, Point b) {
        if (a == b) return;
        auto rev = count.find({b, a});
        if (rev != count.end()) {
            if (--rev->second == 0) count.erase(rev);
        } else {
            ++count[{a, b}];
        }
    };
    for (const auto& [a, b] : edges) {
        const auto ka = key(std::min(a.x, b.x), std::min(a.y, b.y));
        const auto kb = key(std::max(a.x, b.x), std::max(a.y, b.y));
        const Point d = b - a;
        const double len2 = dot(d, d);
        std::vector<std::pair<double, Point>> cuts;
        // Long edges visit many buckets; the grid is sized so that stays cheap.
        for (long long gx = ka.first; gx <= kb.first; ++gx)
            for (long long gy = ka.second; gy <= kb.second; ++gy) {
                const auto it = buckets.find({gx, gy});
                if (it == buckets.end()) continue;
                for (auto vi : it->second) {
                    const Point v = verts[vi];
                    if (v == a || v == b) continue;
                    const double t = dot(v - a, d) / len2;
                    if (t <= 0.0 || t >= 1.0) continue;
                    const double dist = std::abs(cross(d, v - a)) / std::sqrt(len2);
                    if (dist <= tol) cuts.emplace_back(t, v);
                }
            }
        std::sort(cuts.begin(), cuts.end());
        Point prev = a;
        for (const auto& [t, v] : cuts) {
            add_edge(prev, v);
            prev = v;
        }
        add_edge(prev, b);
    }

    std::multimap<Point, Point> out_edges;
    for (const auto& [e, n] : count)
        for (int i = 0; i < n; ++i) out_edges.emplace(e.first, e.second);

    std::vector<std::vector<Point>> rings;
    while (!out_edges.empty()) {
        auto it = out_edges.begin();
        const Point start = it->first;
        Point cur = it->second;
        Point dir = cur - start;
        std::vector<Point> ring{start};
        out_edges.erase(it);
        while (!(cur == start)) {
            ring.push_back(cur);
            auto [lo, hi] = out_edges.equal_range(cur);
            if (lo == hi) break;  // open chain; cannot happen for valid input
            auto best = lo;
            double best_turn = -10.0;
            for (auto e = lo; e != hi; ++e) {
                const Point nd = e->second - cur;
                const double turn = std::atan2(cross(dir, nd), dot(dir, nd));
                if (turn > best_turn) {
                    best_turn = turn;
                    best = e;
                }
            }
            const Point nxt = best->second;
            out_edges.erase(best);
            dir = nxt - cur;
            cur = nxt;
        }
        auto cleaned = detail::drop_collinear(ring);
        if (cleaned.size() >= 3 && ring_signed_area(cleaned) != 0.0) rings.push_back(std::move(cleaned));
    }

    MultiPolygon out;
    std::vector<std::vector<Point>> holes;
    for (auto& r : rings) {
        if (ring_signed_area(r) > 0) {
            Polygon p;
            p.exterior = close_ring(r);
            out.push_back(std::move(p));
        } else {
            holes.push_back(std::move(r));
        }
    }
    for (auto& h : holes) {
        const Ring hr = close_ring(h);
        std::optional<std::size_t> owner;
        for (const Point& v : h) {
            for (std::size_t i = 0; i < out.size() && !owner; ++i)
                if (locate(v, out[i].exterior) == Location::Inside) owner = i;
            if (owner) break;
        }
        if (!owner) {
            // Every hole vertex lies on some exterior; pick the smallest enclosing box.
            const Rect hb = bounds(h);
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < out.size(); ++i) {
                const Rect b = bounds(out[i]);
                if (b.min_x <= hb.min_x && b.max_x >= hb.max_x && b.min_y <= hb.min_y && b.max_y >= hb.max_y && b.area() < best) {
                    best = b.area();
                    owner = i;
                }
            }
        }
        if (owner) out[*owner].holes.push_back(hr);
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i].id = "aoi_" + std::to_string(i);
    return out;
}

/// Boundary of the union of a layer's polygons.
inline MultiPolygon derive_aoi(const std::vector<Polygon>& layer) {
    if (layer.empty()) throw std::invalid_argument("derive_aoi: empty layer");
    return dissolve(layer);
}

// ---------------------------------------------------------------------------
// Clipping layers to an area of interest

namespace detail {

inline std::vector<PolyLine> clip_polyline(const PolyLine& line, const MultiPolygon& aoi) {
    std::vector<std::pair<Point, Point>> aoi_edges;
    for (const auto& p : aoi) {
        std::vector<const Ring*> rings{&p.exterior};
        for (const auto& h : p.holes) rings.push_back(&h);
        for (const Ring* r : rings) {
            const auto v = open_vertices(*r);
            for (std::size_t i = 0; i < v.size(); ++i) aoi_edges.emplace_back(v[i], v[(i + 1) % v.size()]);
        }
    }
    std::vector<PolyLine> out;
    PolyLine cur;
    auto flush = [&] {
        if (cur.points.size() >= 2) {
            cur.source = line.source;
            cur.id = line.id;
            out.push_back(std::move(cur));
        }
        cur = PolyLine{};
    };
    for (std::size_t i = 0; i + 1 < line.points.size(); ++i) {
        const Point a = line.points[i], b = line.points[i + 1];
        if (a == b) continue;
        const Point d = b - a;
        std::vector<double> ts{0.0, 1.0};
        for (const auto& [p, q] : aoi_edges) {
            const Point e = q - p;
            const double den = cross(d, e);
            if (den == 0.0) continue;
            const double t = cross(p - a, e) / den;
            const double u = cross(p - a, d) / den;
            if (t > 0.0 && t < 1.0 && u >= 0.0 && u <= 1.0) ts.push_back(t);
        }
        std::sort(ts.begin(), ts.end());
        ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
        for (std::size_t k = 0; k + 1 < ts.size(); ++k) {
            const Point p0 = ts[k] == 0.0 ? a : Point{a.x + ts[k] * d.x, a.y + ts[k] * d.y};
            const Point p1 = ts[k + 1] == 1.0 ? b : Point{a.x + ts[k + 1] * d.x, a.y + ts[k + 1] * d.y};
            const Point mid{0.5 * (p0.x + p1.x), 0.5 * (p0.y + p1.y)};
            if (locate(mid, aoi) != Location::Outside) {
                if (cur.points.empty()) cur.points.push_back(p0);
                else if (!(cur.points.back() == p0)) {
                    flush();
                    cur.points.push_back(p0);
                }
                cur.points.push_back(p1);
            } else {
                flush();
            }
        }
    }
    flush();
    return out;
}

}  // namespace detail

/// Keeps the parts of each feature inside the AOI. Polygons entirely inside
/// pass through unchanged; partially covered ones are cut into convex pieces
/// and re-dissolved. Lines are split where they cross the AOI boundary.
inline VectorLayer clip(const VectorLayer& layer, const MultiPolygon& aoi) {
    const double aoi_area = multipolygon_area(aoi);
    if (!(aoi_area > 0.0)) throw std::invalid_argument("clip: degenerate AOI");
    const ConvexCover cover(aoi);
    VectorLayer out;
    for (const auto& poly : layer.polygons) {
        const double area = polygon_area(poly);
        if (!(area > 0.0)) continue;
        const double inside = cover.intersection_area(poly);
        if (inside <= 1e-12 * area) continue;
        if (std::abs(inside - area) <= 1e-9 * area) {
            out.polygons.push_back(poly);
            continue;
        }
        Polygon p = poly;
        normalize_orientation(p);
        const Rect pb = bounds(p);
        std::vector<Polygon> pieces;
        for (std::size_t i = 0; i < cover.pieces.size(); ++i) {
            if (!cover.boxes[i].overlaps(pb)) continue;
            const auto& trap = cover.pieces[i];
            auto ext = clip_convex(open_vertices(p.exterior), trap);
            if (ext.size() < 3 || std::abs(ring_signed_area(ext)) <= 1e-12 * area) continue;
            Polygon piece;
            piece.exterior = close_ring(std::move(ext));
            for (const auto& h : p.holes) {
                auto hc = clip_convex(open_vertices(h), trap);
                if (hc.size() >= 3 && std::abs(ring_signed_area(hc)) > 1e-12 * area) piece.holes.push_back(close_ring(std::move(hc)));
            }
            pieces.push_back(std::move(piece));
        }
        for (auto& part : dissolve(pieces)) {
            part.cls = poly.cls;
            part.id = poly.id;
            out.polygons.push_back(std::move(part));
        }
    }
    for (const auto& line : layer.lines)
        for (auto& piece : detail::clip_polyline(line, aoi)) out.lines.push_back(std::move(piece));
    return out;
}

// ---------------------------------------------------------------------------
// Rasterization

enum class RasterizeMode { OrdinalPolygons, BinaryLines };

namespace detail {

/// Fills cells whose centers are inside the polygon (even-odd over all rings,
/// half-open in both axes so shared edges go to exactly one side).
inline void fill_polygon(Raster& out, const Polygon& poly, double value) {
    const auto& g = out.geometry();
    std::vector<std::pair<Point, Point>> edges;
    std::vector<const Ring*> rings{&poly.exterior};
    for (const auto& h : poly.holes) rings.push_back(&h);
    for (const Ring* r : rings) {
        const auto v = open_vertices(*r);
        for (std::size_t i = 0; i < v.size(); ++i)
            if (v[i].y != v[(i + 1) % v.size()].y) edges.emplace_back(v[i], v[(i + 1) % v.size()]);
    }
    if (edges.empty()) return;
    const Rect b = bounds(poly.exterior);
    const int r0 = std::max(0, static_cast<int>(std::floor((g.origin_y - b.max_y) / g.pixel_size - 0.5)) - 1);
    const int r1 = std::min(g.rows - 1, static_cast<int>(std::ceil((g.origin_y - b.min_y) / g.pixel_size - 0.5)) + 1);
    if (r0 > r1) return;
    std::vector<std::vector<std::size_t>> by_row(static_cast<std::size_t>(r1 - r0 + 1));
    for (std::size_t i = 0; i < edges.size(); ++i) {
        const double ylo = std::min(edges[i].first.y, edges[i].second.y);
        const double yhi = std::max(edges[i].first.y, edges[i].second.y);
        const int ra = std::max(r0, static_cast<int>(std::floor((g.origin_y - yhi) / g.pixel_size - 0.5)) - 1);
        const int rb = std::min(r1, static_cast<int>(std::ceil((g.origin_y - ylo) / g.pixel_size - 0.5)) + 1);
        for (int r = ra; r <= rb; ++r) by_row[static_cast<std::size_t>(r - r0)].push_back(i);
    }
    std::vector<double> xs;
    for (int r = r0; r <= r1; ++r) {
        const double y = g.center_y(r);
        xs.clear();
        for (auto i : by_row[static_cast<std::size_t>(r - r0)]) {
            const Point a = edges[i].first, c = edges[i].second;
            if ((a.y <= y) != (c.y <= y)) xs.push_back(a.x + (y - a.y) * (c.x - a.x) / (c.y - a.y));
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
            int c0 = std::max(0, static_cast<int>(std::ceil((xs[k] - g.origin_x) / g.pixel_size - 0.5)) - 1);
            int c1 = std::min(g.cols - 1, static_cast<int>(std::ceil((xs[k + 1] - g.origin_x) / g.pixel_size - 0.5)) + 1);
            for (int c = c0; c <= c1; ++c) {
                const double x = g.center_x(c);
                if (x >= xs[k] && x < xs[k + 1]) out.set(r, c, value);
            }
        }
    }
}

/// Marks every cell whose closed square the segment touches.
inline void supercover_segment(Raster& out, Point a, Point b) {
    const auto& g = out.geometry();
    const Point pa{(a.x - g.origin_x) / g.pixel_size, (g.origin_y - a.y) / g.pixel_size};
    const Point pb{(b.x - g.origin_x) / g.pixel_size, (g.origin_y - b.y) / g.pixel_size};
    const double umin = std::min(pa.x, pb.x), umax = std::max(pa.x, pb.x);
    const int c0 = std::max(0, static_cast<int>(std::ceil(umin)) - 1);
    const int c1 = std::min(g.cols - 1, static_cast<int>(std::floor(umax)));
    for (int c = c0; c <= c1; ++c) {
        const double lo = std::max(umin, static_cast<double>(c));
        const double hi = std::min(umax, static_cast<double>(c + 1));
        if (lo > hi) continue;
        double v0, v1;
        if (pa.x == pb.x) {
            v0 = std::min(pa.y, pb.y);
            v1 = std::max(pa.y, pb.y);
        } else {
            const double ya = pa.y + (lo - pa.x) * (pb.y - pa.y) / (pb.x - pa.x);
            const double yb = pa.y + (hi - pa.x) * (pb.y - pa.y) / (pb.x - pa.x);
            v0 = std::min(ya, yb);
            v1 = std::max(ya, yb);
        }
        const int ra = std::max(0, static_cast<int>(std::ceil(v0 - 1.0)));
        const int rb = std::min(g.rows - 1, static_cast<int>(std::floor(v1)));
        for (int r = ra; r <= rb; ++r) out.set(r, c, 1.0);
    }
}

}  // namespace detail

/// Ordinal mode: each cell gets the class code of the polygon containing its
/// center (0 elsewhere). Binary mode: 1 where any line touches the cell or
/// any polygon contains its center.
inline Raster rasterize(const VectorLayer& layer, const GridGeometry& geom, RasterizeMode mode) {
    geom.validate();
    Raster out(geom, 0.0, mode == RasterizeMode::OrdinalPolygons ? "class" : "binary");
    for (const auto& p : layer.polygons) {
        if (mode == RasterizeMode::OrdinalPolygons && p.cls == GeologicClass::None)
            throw std::invalid_argument("rasterize: polygon '" + p.id + "' has no class code");
        detail::fill_polygon(out, p, mode == RasterizeMode::OrdinalPolygons ? static_cast<double>(p.cls) : 1.0);
    }
    if (mode == RasterizeMode::BinaryLines)
        for (const auto& l : layer.lines)
            for (std::size_t i = 0; i + 1 < l.points.size(); ++i) detail::supercover_segment(out, l.points[i], l.points[i + 1]);
    return out;
}

}  // namespace surfmap
