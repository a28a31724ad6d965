#include "rdet/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace rdet::geom {

namespace {

constexpr double kDupTol = 1e-9;  // distance below which points are treated as coincident

inline bool same_point(const Point2& a, const Point2& b) {
    return std::abs(a.x - b.x) <= kDupTol && std::abs(a.y - b.y) <= kDupTol;
}

// Lexicographically sorted indices with coincident points removed (lowest
// input index kept).
std::vector<int> sorted_distinct(const PointSet& ps) {
    std::vector<int> idx(ps.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](int i, int j) {
        if (ps[i].x != ps[j].x) return ps[i].x < ps[j].x;
        if (ps[i].y != ps[j].y) return ps[i].y < ps[j].y;
        return i < j;
    });
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) {
        if (!out.empty() && same_point(ps[out.back()], ps[i])) continue;
        out.push_back(i);
    }
    return out;
}

// Andrew monotone chain over pre-sorted distinct indices. pop_tol decides the
// collinear behaviour: pop when cross <= pop_tol.
std::vector<int> chain_hull(const PointSet& ps, const std::vector<int>& sorted, double pop_tol) {
    const int n = static_cast<int>(sorted.size());
    std::vector<int> h(2 * static_cast<size_t>(n));
    int k = 0;
    for (int i = 0; i < n; ++i) {  // lower
        while (k >= 2 && cross(ps[h[k - 2]], ps[h[k - 1]], ps[sorted[i]]) <= pop_tol) --k;
        h[k++] = sorted[i];
    }
    for (int i = n - 2, lower = k + 1; i >= 0; --i) {  // upper
        while (k >= lower && cross(ps[h[k - 2]], ps[h[k - 1]], ps[sorted[i]]) <= pop_tol) --k;
        h[k++] = sorted[i];
    }
    h.resize(k > 1 ? k - 1 : k);  // last point repeats the first
    return h;
}

}  // namespace

bool all_finite(const PointSet& ps) {
    for (const auto& p : ps) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y)) return false;
    }
    return true;
}

std::vector<int> convex_hull_indices(const PointSet& ps, bool keep_collinear) {
    if (ps.empty()) throw std::invalid_argument("convex_hull: empty point set");
    if (!all_finite(ps)) throw std::invalid_argument("convex_hull: non-finite coordinates");
    const std::vector<int> sorted = sorted_distinct(ps);
    std::vector<int> strict = chain_hull(ps, sorted, kOrientEps);
    if (strict.size() < 3 || !keep_collinear) return strict;
    // Non-degenerate; rebuild keeping points that sit on hull edges.
    return chain_hull(ps, sorted, -kOrientEps);
}

ConvexPolygon convex_hull(const PointSet& ps) {
    ConvexPolygon poly;
    for (int i : convex_hull_indices(ps, false)) poly.verts.push_back(ps[i]);
    poly.degenerate = poly.verts.size() < 3;
    return poly;
}

double polygon_area(std::span<const Point2> v) {
    const int n = static_cast<int>(v.size());
    if (n < 3) return 0.0;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
        const Point2& p = v[i];
        const Point2& q = v[(i + 1) % n];
        s += p.x * q.y - q.x * p.y;
    }
    return std::max(0.5 * s, 0.0);
}

double polygon_area(const ConvexPolygon& p) {
    if (p.degenerate) return 0.0;
    return polygon_area(std::span<const Point2>(p.verts));
}

bool point_in_convex(std::span<const Point2> v, const Point2& p, double eps) {
    const int n = static_cast<int>(v.size());
    if (n < 3) return false;
    for (int i = 0; i < n; ++i) {
        if (cross(v[i], v[(i + 1) % n], p) < -eps) return false;
    }
    return true;
}

bool point_in_convex(const ConvexPolygon& poly, const Point2& p, double eps) {
    return point_in_convex(std::span<const Point2>(poly.verts), p, eps);
}

std::vector<ClipVertex> convex_intersection_tagged(std::span<const Point2> a,
                                                   std::span<const Point2> b) {
    const int na = static_cast<int>(a.size());
    const int nb = static_cast<int>(b.size());
    if (na < 3 || nb < 3) return {};

    struct EdgeLine {
        bool from_a = true;
        int idx = 0;
    };
    std::vector<ClipVertex> poly(na);
    std::vector<EdgeLine> line(na);
    for (int i = 0; i < na; ++i) {
        poly[i] = ClipVertex{a[i], ClipVertex::Src::AVert, i, -1};
        line[i] = EdgeLine{true, i};
    }

    std::vector<double> dist;
    for (int j = 0; j < nb; ++j) {
        const Point2& b0 = b[j];
        const Point2& b1 = b[(j + 1) % nb];
        const int n = static_cast<int>(poly.size());
        if (n == 0) return {};
        dist.resize(n);
        for (int k = 0; k < n; ++k) dist[k] = cross(b0, b1, poly[k].p);

        std::vector<ClipVertex> out;
        std::vector<EdgeLine> out_line;
        out.reserve(static_cast<size_t>(n) + 2);
        out_line.reserve(static_cast<size_t>(n) + 2);
        for (int k = 0; k < n; ++k) {
            const int kn = (k + 1) % n;
            const bool in_cur = dist[k] >= -kOrientEps;
            const bool in_nxt = dist[kn] >= -kOrientEps;
            if (in_cur) {
                out.push_back(poly[k]);
                out_line.push_back(line[k]);
            }
            if (in_cur != in_nxt) {
                const double den = dist[k] - dist[kn];
                if (den != 0.0) {
                    double t = dist[k] / den;
                    t = std::clamp(t, 0.0, 1.0);
                    ClipVertex cv;
                    cv.p = Point2{poly[k].p.x + t * (poly[kn].p.x - poly[k].p.x),
                                  poly[k].p.y + t * (poly[kn].p.y - poly[k].p.y)};
                    if (line[k].from_a) {
                        cv.src = ClipVertex::Src::Cross;
                        cv.ai = line[k].idx;
                        cv.bj = j;
                    } else {
                        cv.src = ClipVertex::Src::Fixed;
                    }
                    out.push_back(cv);
                    // Leaving the half-plane: the polygon boundary continues
                    // along the clip edge until it re-enters.
                    out_line.push_back(in_cur ? EdgeLine{false, j} : line[k]);
                }
            }
        }
        poly = std::move(out);
        line = std::move(out_line);
        if (poly.size() < 3) return {};
    }
    return poly;
}

ConvexPolygon convex_intersection(const ConvexPolygon& a, const ConvexPolygon& b) {
    ConvexPolygon empty;
    empty.degenerate = true;
    if (a.degenerate || b.degenerate) return empty;
    const auto tagged = convex_intersection_tagged(a.verts, b.verts);
    if (tagged.size() < 3) return empty;
    PointSet pts;
    pts.reserve(tagged.size());
    for (const auto& t : tagged) pts.push_back(t.p);
    return convex_hull(pts);
}

ConvexPolygon enclosing_hull(const ConvexPolygon& a, const ConvexPolygon& b) {
    PointSet pts;
    pts.reserve(a.verts.size() + b.verts.size());
    pts.insert(pts.end(), a.verts.begin(), a.verts.end());
    pts.insert(pts.end(), b.verts.begin(), b.verts.end());
    if (pts.empty()) throw std::invalid_argument("enclosing_hull: both polygons empty");
    return convex_hull(pts);
}

namespace {

// Total order on polygons; convex_hull_iou computes in canonical argument
// order so that iou(a, b) and iou(b, a) are bitwise identical.
bool polygon_less(const ConvexPolygon& a, const ConvexPolygon& b) {
    if (a.verts.size() != b.verts.size()) return a.verts.size() < b.verts.size();
    for (size_t i = 0; i < a.verts.size(); ++i) {
        if (a.verts[i].x != b.verts[i].x) return a.verts[i].x < b.verts[i].x;
        if (a.verts[i].y != b.verts[i].y) return a.verts[i].y < b.verts[i].y;
    }
    return false;
}

}  // namespace

double convex_hull_iou(const ConvexPolygon& a, const ConvexPolygon& b) {
    const ConvexPolygon& first = polygon_less(b, a) ? b : a;
    const ConvexPolygon& second = polygon_less(b, a) ? a : b;
    const double area_a = polygon_area(first);
    const double area_b = polygon_area(second);
    const double inter = polygon_area(convex_intersection(first, second));
    const double uni = area_a + area_b - inter;
    if (!(uni > 0.0)) return 0.0;
    return std::clamp(inter / uni, 0.0, 1.0);
}

double convex_hull_iou(const PointSet& a, const PointSet& b) {
    return convex_hull_iou(convex_hull(a), convex_hull(b));
}

RotatedBox canonicalized(const RotatedBox& b) {
    RotatedBox r = b;
    if (r.h > r.w) {
        std::swap(r.w, r.h);
        r.theta += M_PI_2;
    }
    auto wrap = [](double t) {
        t = std::fmod(t + M_PI_2, M_PI);
        if (t < 0.0) t += M_PI;
        return t - M_PI_2;
    };
    r.theta = wrap(r.theta);
    if (r.w == r.h) r.theta = std::min(r.theta, wrap(r.theta + M_PI_2));
    return r;
}

RotatedBox min_area_rect(const PointSet& ps) {
    const ConvexPolygon hull = convex_hull(ps);
    const auto& v = hull.verts;
    if (v.empty()) throw std::invalid_argument("min_area_rect: empty hull");
    if (hull.degenerate) {
        RotatedBox b;
        if (v.size() == 1) {
            b.cx = v[0].x;
            b.cy = v[0].y;
            return canonicalized(b);
        }
        const double dx = v[1].x - v[0].x;
        const double dy = v[1].y - v[0].y;
        b.cx = 0.5 * (v[0].x + v[1].x);
        b.cy = 0.5 * (v[0].y + v[1].y);
        b.w = std::hypot(dx, dy);
        b.h = 0.0;
        b.theta = std::atan2(dy, dx);
        return canonicalized(b);
    }

    const int n = static_cast<int>(v.size());
    double best_area = std::numeric_limits<double>::infinity();
    RotatedBox best;
    for (int i = 0; i < n; ++i) {
        const Point2& p = v[i];
        const Point2& q = v[(i + 1) % n];
        const double len = std::hypot(q.x - p.x, q.y - p.y);
        const double ux = (q.x - p.x) / len;
        const double uy = (q.y - p.y) / len;
        double umin = std::numeric_limits<double>::infinity(), umax = -umin;
        double vmin = umin, vmax = -umin;
        for (const Point2& r : v) {
            const double pu = r.x * ux + r.y * uy;
            const double pv = -r.x * uy + r.y * ux;
            umin = std::min(umin, pu);
            umax = std::max(umax, pu);
            vmin = std::min(vmin, pv);
            vmax = std::max(vmax, pv);
        }
        const double area = (umax - umin) * (vmax - vmin);
        if (area < best_area) {
            best_area = area;
            const double cu = 0.5 * (umin + umax);
            const double cv = 0.5 * (vmin + vmax);
            best.cx = cu * ux - cv * uy;
            best.cy = cu * uy + cv * ux;
            best.w = umax - umin;
            best.h = vmax - vmin;
            best.theta = std::atan2(uy, ux);
        }
    }
    return canonicalized(best);
}

PointSet box_to_corners(const RotatedBox& b) {
    const double ux = std::cos(b.theta), uy = std::sin(b.theta);
    const double vx = -uy, vy = ux;
    const double hw = 0.5 * b.w, hh = 0.5 * b.h;
    return {
        Point2{b.cx + hw * ux - hh * vx, b.cy + hw * uy - hh * vy},
        Point2{b.cx + hw * ux + hh * vx, b.cy + hw * uy + hh * vy},
        Point2{b.cx - hw * ux + hh * vx, b.cy - hw * uy + hh * vy},
        Point2{b.cx - hw * ux - hh * vx, b.cy - hw * uy - hh * vy},
    };
}

}  // namespace rdet::geom
