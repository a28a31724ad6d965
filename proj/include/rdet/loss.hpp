#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "rdet/geom.hpp"

namespace rdet::loss {

// Per-class sigmoid logits of one query. Background is "all classes low";
// there is no explicit background logit.
using ClassLogits = std::vector<double>;

// No-object / background target.
using Label = std::optional<int>;

struct LossWeights {
    double lambda_cls = 2.0;
    double lambda_l1 = 5.0;
    double lambda_iou = 2.0;
    double focal_alpha = 0.25;
    double focal_gamma = 2.0;
};

// One ground-truth instance: class index plus oriented box.
struct Target {
    int cls = 0;
    geom::RotatedBox box;
};

// Focal loss summed over classes, one-hot target (all-zero for background).
double focal_loss(std::span<const double> logits, Label target, const LossWeights& w);
// d focal_loss / d logit, per class.
std::vector<double> focal_loss_grad(std::span<const double> logits, Label target,
                                    const LossWeights& w);

// L1 distance between the arithmetic means of the two point sets, divided by
// the image diagonal (diag = 1 means coordinates are already normalized).
double center_l1_loss(const geom::PointSet& pred, const geom::PointSet& target,
                      double diag = 1.0);
std::vector<geom::Point2> center_l1_loss_grad(const geom::PointSet& pred,
                                              const geom::PointSet& target, double diag = 1.0);

// Convex-hull GIoU loss in [0, 2]:
//   1 - |Gp ∩ Gt| / |Gp ∪ Gt| + |R \ (Gp ∪ Gt)| / |R|
// with Gp, Gt the hulls of the two point sets and R their enclosing hull.
// Both hulls degenerate -> 2 by convention.
double giou_loss(const geom::PointSet& pred, const geom::PointSet& target);

struct GiouGrad {
    double value = 0.0;
    std::vector<geom::Point2> grad;  // d value / d pred point, per input point
    // True when the evaluation sits on a piecewise boundary (a point exactly
    // on the hull, coincident points, or a degenerate hull); the gradient is
    // then the one-sided subgradient with the point counted as a hull vertex.
    bool boundary = false;
};

// Gradient of giou_loss with respect to every predicted coordinate. Points
// strictly interior to the predicted hull receive exactly zero gradient.
GiouGrad giou_loss_grad(const geom::PointSet& pred, const geom::PointSet& target);

struct LossBreakdown {
    double cls = 0.0;  // sum of focal terms / max(n_pos, 1)
    double l1 = 0.0;   // sum of center-L1 terms / max(n_pos, 1)
    double iou = 0.0;  // sum of GIoU terms / max(n_pos, 1)
    double total = 0.0;
    int n_pos = 0;  // queries matched with ground truths
};

// Eq-style total: classification over all queries with the re-assigned
// labels, regression only over originally matched pairs, everything divided
// by max(n_pos, 1).
LossBreakdown total_loss(const std::vector<ClassLogits>& logits,
                         const std::vector<geom::PointSet>& points,
                         const std::vector<std::pair<int, int>>& matched,
                         const std::vector<Label>& reassigned,
                         const std::vector<Target>& targets, const LossWeights& w,
                         double diag = 1.0);

}  // namespace rdet::loss
