#include "rdet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rdet::loss {

using geom::ConvexPolygon;
using geom::Point2;
using geom::PointSet;

namespace {

inline double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

void check_target(std::span<const double> logits, Label target) {
    if (logits.empty()) throw std::invalid_argument("focal_loss: empty logits");
    if (target && (*target < 0 || *target >= static_cast<int>(logits.size())))
        throw std::invalid_argument("focal_loss: target class out of range");
}

}  // namespace

double focal_loss(std::span<const double> logits, Label target, const LossWeights& w) {
    check_target(logits, target);
    const double a = w.focal_alpha, g = w.focal_gamma;
    double sum = 0.0;
    for (size_t c = 0; c < logits.size(); ++c) {
        const double x = logits[c];
        const double p = sigmoid(x);
        if (target && static_cast<int>(c) == *target) {
            sum += a * std::pow(1.0 - p, g) * softplus(-x);
        } else {
            sum += (1.0 - a) * std::pow(p, g) * softplus(x);
        }
    }
    return sum;
}

std::vector<double> focal_loss_grad(std::span<const double> logits, Label target,
                                    const LossWeights& w) {
    check_target(logits, target);
    const double a = w.focal_alpha, g = w.focal_gamma;
    std::vector<double> grad(logits.size());
    for (size_t c = 0; c < logits.size(); ++c) {
        const double x = logits[c];
        const double p = sigmoid(x);
        if (target && static_cast<int>(c) == *target) {
            const double logp = -softplus(-x);
            grad[c] = a * std::pow(1.0 - p, g) * (g * p * logp + p - 1.0);
        } else {
            const double log1mp = -softplus(x);
            grad[c] = (1.0 - a) * std::pow(p, g) * (p - g * (1.0 - p) * log1mp);
        }
    }
    return grad;
}

double center_l1_loss(const PointSet& pred, const PointSet& target, double diag) {
    if (pred.empty() || target.empty()) throw std::invalid_argument("center_l1_loss: empty set");
    double px = 0.0, py = 0.0, tx = 0.0, ty = 0.0;
    for (const auto& p : pred) {
        px += p.x;
        py += p.y;
    }
    for (const auto& t : target) {
        tx += t.x;
        ty += t.y;
    }
    px /= static_cast<double>(pred.size());
    py /= static_cast<double>(pred.size());
    tx /= static_cast<double>(target.size());
    ty /= static_cast<double>(target.size());
    return (std::abs(px - tx) + std::abs(py - ty)) / diag;
}

std::vector<Point2> center_l1_loss_grad(const PointSet& pred, const PointSet& target,
                                        double diag) {
    if (pred.empty() || target.empty()) throw std::invalid_argument("center_l1_loss: empty set");
    double px = 0.0, py = 0.0, tx = 0.0, ty = 0.0;
    for (const auto& p : pred) {
        px += p.x;
        py += p.y;
    }
    for (const auto& t : target) {
        tx += t.x;
        ty += t.y;
    }
    px /= static_cast<double>(pred.size());
    py /= static_cast<double>(pred.size());
    tx /= static_cast<double>(target.size());
    ty /= static_cast<double>(target.size());
    auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
    const double gx = sgn(px - tx) / (diag * static_cast<double>(pred.size()));
    const double gy = sgn(py - ty) / (diag * static_cast<double>(pred.size()));
    return std::vector<Point2>(pred.size(), Point2{gx, gy});
}

double giou_loss(const PointSet& pred, const PointSet& target) {
    const ConvexPolygon gp = geom::convex_hull(pred);
    const ConvexPolygon gt = geom::convex_hull(target);
    const double ap = geom::polygon_area(gp);
    const double at = geom::polygon_area(gt);
    const double inter = geom::polygon_area(geom::convex_intersection(gp, gt));
    const double uni = ap + at - inter;
    if (!(uni > 0.0)) return 2.0;  // both degenerate
    const double r = geom::polygon_area(geom::enclosing_hull(gp, gt));
    if (!(r > 0.0)) return 2.0;
    return std::clamp(2.0 - inter / uni - uni / r, 0.0, 2.0);
}

namespace {

// d(shoelace area)/d(vertex k) of a CCW polygon.
inline Point2 area_grad(std::span<const Point2> v, int k) {
    const int n = static_cast<int>(v.size());
    const Point2& prev = v[(k + n - 1) % n];
    const Point2& next = v[(k + 1) % n];
    return Point2{0.5 * (next.y - prev.y), 0.5 * (prev.x - next.x)};
}

// Routes an upstream gradient g on the crossing of lines (a0,a1) and (b0,b1)
// back to the movable endpoints a0, a1.
void cross_point_grad(const Point2& a0, const Point2& a1, const Point2& b0, const Point2& b1,
                      const Point2& g, Point2& ga0, Point2& ga1) {
    const double dax = a1.x - a0.x, day = a1.y - a0.y;
    const double dbx = b1.x - b0.x, dby = b1.y - b0.y;
    const double den = dax * dby - day * dbx;
    if (den == 0.0) return;  // parallel; measure-zero configuration
    const double num = (b0.x - a0.x) * dby - (b0.y - a0.y) * dbx;
    const double t = num / den;
    const double gdotd = g.x * dax + g.y * day;
    // dt/da0 and dt/da1
    const double t0x = -dby * (1.0 - t) / den, t0y = dbx * (1.0 - t) / den;
    const double t1x = -dby * t / den, t1y = dbx * t / den;
    ga0.x += (1.0 - t) * g.x + gdotd * t0x;
    ga0.y += (1.0 - t) * g.y + gdotd * t0y;
    ga1.x += t * g.x + gdotd * t1x;
    ga1.y += t * g.y + gdotd * t1y;
}

}  // namespace

GiouGrad giou_loss_grad(const PointSet& pred, const PointSet& target) {
    GiouGrad out;
    out.grad.assign(pred.size(), Point2{0.0, 0.0});
    if (pred.empty() || target.empty())
        throw std::invalid_argument("giou_loss_grad: empty point set");

    // Coincident predicted points share one hull slot; the kept copy takes
    // the full gradient. Flag it.
    for (size_t i = 0; i < pred.size() && !out.boundary; ++i)
        for (size_t j = i + 1; j < pred.size(); ++j)
            if (std::abs(pred[i].x - pred[j].x) <= 1e-9 &&
                std::abs(pred[i].y - pred[j].y) <= 1e-9) {
                out.boundary = true;
                break;
            }

    const std::vector<int> strict = geom::convex_hull_indices(pred, false);
    std::vector<int> pidx = strict;
    if (strict.size() >= 3) {
        pidx = geom::convex_hull_indices(pred, true);
        if (pidx.size() != strict.size()) out.boundary = true;
    }
    const std::vector<int> tidx = geom::convex_hull_indices(target, false);

    PointSet pv, tv;
    for (int i : pidx) pv.push_back(pred[i]);
    for (int i : tidx) tv.push_back(target[i]);
    const bool p_deg = pv.size() < 3;
    const bool t_deg = tv.size() < 3;
    if (p_deg) out.boundary = true;
    if (p_deg && t_deg) {
        out.value = 2.0;
        return out;
    }

    const double ap = p_deg ? 0.0 : geom::polygon_area(std::span<const Point2>(pv));
    const double at = t_deg ? 0.0 : geom::polygon_area(std::span<const Point2>(tv));

    std::vector<geom::ClipVertex> inter;
    if (!p_deg && !t_deg) inter = geom::convex_intersection_tagged(pv, tv);
    double iarea = 0.0;
    if (inter.size() >= 3) {
        PointSet ip;
        for (const auto& cv : inter) ip.push_back(cv.p);
        iarea = geom::polygon_area(std::span<const Point2>(ip));
    }

    // Enclosing hull over pred-hull + target-hull vertices; combined indices
    // below pv.size() belong to the predicted hull.
    PointSet combined = pv;
    combined.insert(combined.end(), tv.begin(), tv.end());
    std::vector<int> ridx = geom::convex_hull_indices(combined, false);
    if (ridx.size() >= 3) {
        const std::vector<int> keep = geom::convex_hull_indices(combined, true);
        if (keep.size() != ridx.size()) {
            for (int i : keep)
                if (i < static_cast<int>(pv.size()) &&
                    std::find(ridx.begin(), ridx.end(), i) == ridx.end())
                    out.boundary = true;
            ridx = keep;
        }
    }
    PointSet rv;
    for (int i : ridx) rv.push_back(combined[i]);
    const double rarea = rv.size() < 3 ? 0.0 : geom::polygon_area(std::span<const Point2>(rv));

    const double uni = ap + at - iarea;
    if (!(uni > 0.0) || !(rarea > 0.0)) {
        out.value = 2.0;
        out.boundary = true;
        return out;
    }
    out.value = std::clamp(2.0 - iarea / uni - uni / rarea, 0.0, 2.0);

    // Loss(I, Ap, R) = 2 - I/U - U/R with U = Ap + At - I.
    const double d_i = -(uni + iarea) / (uni * uni) + 1.0 / rarea;
    const double d_ap = iarea / (uni * uni) - 1.0 / rarea;
    const double d_r = uni / (rarea * rarea);

    // Gradient per predicted-hull vertex, then routed to input points.
    std::vector<Point2> ghv(pv.size(), Point2{0.0, 0.0});

    if (inter.size() >= 3) {
        PointSet ip;
        for (const auto& cv : inter) ip.push_back(cv.p);
        const int npv = static_cast<int>(pv.size());
        for (size_t k = 0; k < inter.size(); ++k) {
            Point2 g = area_grad(ip, static_cast<int>(k));
            g.x *= d_i;
            g.y *= d_i;
            const auto& cv = inter[k];
            if (cv.src == geom::ClipVertex::Src::AVert) {
                ghv[cv.ai].x += g.x;
                ghv[cv.ai].y += g.y;
            } else if (cv.src == geom::ClipVertex::Src::Cross) {
                const Point2& a0 = pv[cv.ai];
                const Point2& a1 = pv[(cv.ai + 1) % npv];
                const Point2& b0 = tv[cv.bj];
                const Point2& b1 = tv[(cv.bj + 1) % tv.size()];
                cross_point_grad(a0, a1, b0, b1, g, ghv[cv.ai], ghv[(cv.ai + 1) % npv]);
            }
        }
    }

    if (!p_deg) {
        for (size_t k = 0; k < pv.size(); ++k) {
            const Point2 g = area_grad(pv, static_cast<int>(k));
            ghv[k].x += d_ap * g.x;
            ghv[k].y += d_ap * g.y;
        }
    }

    if (rv.size() >= 3) {
        for (size_t k = 0; k < rv.size(); ++k) {
            const int ci = ridx[k];
            if (ci >= static_cast<int>(pv.size())) continue;
            const Point2 g = area_grad(rv, static_cast<int>(k));
            ghv[ci].x += d_r * g.x;
            ghv[ci].y += d_r * g.y;
        }
    }

    for (size_t k = 0; k < pv.size(); ++k) {
        out.grad[pidx[k]].x += ghv[k].x;
        out.grad[pidx[k]].y += ghv[k].y;
    }
    return out;
}

LossBreakdown total_loss(const std::vector<ClassLogits>& logits,
                         const std::vector<geom::PointSet>& points,
                         const std::vector<std::pair<int, int>>& matched,
                         const std::vector<Label>& reassigned, const std::vector<Target>& targets,
                         const LossWeights& w, double diag) {
    const int n = static_cast<int>(logits.size());
    if (static_cast<int>(points.size()) != n || static_cast<int>(reassigned.size()) != n)
        throw std::invalid_argument("total_loss: inconsistent prediction lengths");
    LossBreakdown b;
    b.n_pos = static_cast<int>(matched.size());
    double cls_sum = 0.0, l1_sum = 0.0, iou_sum = 0.0;
    for (int i = 0; i < n; ++i) cls_sum += focal_loss(logits[i], reassigned[i], w);
    for (const auto& [qi, tj] : matched) {
        if (qi < 0 || qi >= n || tj < 0 || tj >= static_cast<int>(targets.size()))
            throw std::invalid_argument("total_loss: assignment index out of range");
        const geom::PointSet corners = geom::box_to_corners(targets[tj].box);
        l1_sum += center_l1_loss(points[qi], corners, diag);
        iou_sum += giou_loss(points[qi], corners);
    }
    const double norm = std::max(b.n_pos, 1);
    b.cls = cls_sum / norm;
    b.l1 = l1_sum / norm;
    b.iou = iou_sum / norm;
    b.total = w.lambda_cls * b.cls + w.lambda_l1 * b.l1 + w.lambda_iou * b.iou;
    return b;
}

}  // namespace rdet::loss
