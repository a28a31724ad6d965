#pragma once

#include <span>
#include <vector>

namespace rdet::geom {

struct Point2 {
    double x = 0.0;
    double y = 0.0;
};

// Ordered list of 2-D points; the per-query representative point set.
using PointSet = std::vector<Point2>;

// Module-wide orientation tolerance, in squared-pixel units. Cross products
// with |value| <= kOrientEps are treated as collinear.
inline constexpr double kOrientEps = 1e-9;

inline double cross(const Point2& o, const Point2& a, const Point2& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool all_finite(const PointSet& ps);

// Convex polygon with counter-clockwise vertices and collinear vertices
// removed. Inputs that collapse to fewer than 3 effective vertices keep their
// distinct extreme points and carry the degenerate flag instead of failing:
// predicted point sets can collapse early in training.
struct ConvexPolygon {
    std::vector<Point2> verts;
    bool degenerate = false;
};

// (center, width, height, angle) oriented box, angle in radians.
// Canonical form (produced by min_area_rect / canonicalized) has w >= h and
// theta in [-pi/2, pi/2); w == h ties pick the smaller angle.
struct RotatedBox {
    double cx = 0.0;
    double cy = 0.0;
    double w = 0.0;
    double h = 0.0;
    double theta = 0.0;

    bool is_degenerate() const { return !(w > 0.0) || !(h > 0.0); }
};

// Minimal convex hull, CCW, collinear interior points removed.
// Collinear or coincident input degrades to a flagged degenerate polygon.
ConvexPolygon convex_hull(const PointSet& ps);

// CCW hull as indices into the input. keep_collinear retains points that lie
// exactly (within kOrientEps) on a hull edge; this is the configuration the
// gradient path uses at hull-membership boundaries. Duplicate coordinates
// keep the lowest input index. Degenerate inputs yield fewer than 3 indices.
std::vector<int> convex_hull_indices(const PointSet& ps, bool keep_collinear = false);

// Shoelace area; >= 0 for valid polygons, 0 when degenerate.
double polygon_area(const ConvexPolygon& p);
double polygon_area(std::span<const Point2> ccw_verts);

// Intersection of two convex polygons by successive half-plane clipping.
// Degenerate (empty) when disjoint or touching only along a boundary.
ConvexPolygon convex_intersection(const ConvexPolygon& a, const ConvexPolygon& b);

// Convex hull of the union of both vertex lists (the minimum bounding
// polygon R of the GIoU penalty term).
ConvexPolygon enclosing_hull(const ConvexPolygon& a, const ConvexPolygon& b);

// |A ∩ B| / (|A| + |B| - |A ∩ B|), in [0, 1]. Degenerate-vs-degenerate is 0
// by convention. Point-set overloads hull their inputs first.
double convex_hull_iou(const ConvexPolygon& a, const ConvexPolygon& b);
double convex_hull_iou(const PointSet& a, const PointSet& b);

// Minimum-area enclosing rectangle of the point set's hull (one rectangle
// edge collinear with a hull edge). Degenerate hull -> zero-height box
// (is_degenerate() true) spanning the extreme points.
RotatedBox min_area_rect(const PointSet& ps);

// Enforce w >= h and theta in [-pi/2, pi/2); w == h picks the smaller angle.
RotatedBox canonicalized(const RotatedBox& b);

// 4 corners in CCW order; min_area_rect(box_to_corners(b)) round-trips b up
// to the angle-period symmetry.
PointSet box_to_corners(const RotatedBox& b);

// Inside-or-on test against a CCW convex polygon (signed distance tolerance
// eps, in the cross-product units of the polygon's edges).
bool point_in_convex(std::span<const Point2> ccw_verts, const Point2& p, double eps = kOrientEps);
bool point_in_convex(const ConvexPolygon& poly, const Point2& p, double eps = kOrientEps);

// --- provenance-tracking intersection -------------------------------------
//
// Vertices of the clip of A against B, each tagged with where it came from:
//   AVert  - vertex i of A (position equals a.verts[i])
//   Cross  - crossing of A's edge (ai, ai+1 mod nA) with B's edge (bj, bj+1)
//   Fixed  - a point determined by B alone (B vertex or B-edge/B-edge cross)
// This is what the GIoU gradient uses to route area derivatives back to the
// predicted points; Fixed vertices carry no gradient.
struct ClipVertex {
    enum class Src { AVert, Cross, Fixed };
    Point2 p;
    Src src = Src::Fixed;
    int ai = -1;
    int bj = -1;
};

std::vector<ClipVertex> convex_intersection_tagged(std::span<const Point2> a,
                                                   std::span<const Point2> b);

}  // namespace rdet::geom
