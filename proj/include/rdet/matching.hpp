#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "rdet/kernels.hpp"
#include "rdet/loss.hpp"

namespace rdet::match {

struct CostMatrix {
    int rows = 0;  // queries
    int cols = 0;  // ground truths
    std::vector<double> v;

    CostMatrix() = default;
    CostMatrix(int r, int c) : rows(r), cols(c), v(static_cast<size_t>(r) * c, 0.0) {}
    double& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
};

struct MatchConfig {
    double tau = 0.5;  // convex-hull-IoU re-assignment threshold
    loss::LossWeights weights;
    double diag = 1.0;  // image diagonal for the center-L1 cost term
};

// Optimal one-to-one matching plus per-query re-assigned labels.
struct Assignment {
    std::vector<std::pair<int, int>> pairs;     // (query, target), sorted by query
    std::vector<loss::Label> labels;            // per query; nullopt = background
};

// Pairwise cost, entry (i,j) =
//   lambda_cls * (-sigmoid_prob_i[class_j]) + lambda_l1 * centerL1 + lambda_iou * giou.
// Entries are independent; Parallel computes them with OpenMP (bitwise equal
// to Serial).
CostMatrix matching_cost(const std::vector<loss::ClassLogits>& logits,
                         const std::vector<geom::PointSet>& points,
                         const std::vector<loss::Target>& targets, const loss::LossWeights& w,
                         double diag = 1.0, kern::Exec exec = kern::Exec::Auto);

// Minimum-total-cost one-to-one assignment covering min(rows, cols) pairs,
// deterministic under ties (solver scans rows and columns in index order).
// Shortest-augmenting-path Kuhn-Munkres, O(n^2 m).
std::vector<std::pair<int, int>> hungarian(const CostMatrix& c);

// Eq-style label re-assignment: a matched query keeps its target's class iff
// convex-hull IoU(pred, target corners) > tau (strict); everything else is
// background. The pair list itself is never altered.
Assignment reassign_labels(const std::vector<geom::PointSet>& points,
                           const std::vector<std::pair<int, int>>& pairs,
                           const std::vector<loss::Target>& targets, const MatchConfig& cfg);

// Sorted empirical CDF of convex-hull IoU over matched pairs:
// (iou value, fraction of pairs with iou <= value).
std::vector<std::pair<double, double>> iou_cdf(const std::vector<geom::PointSet>& points,
                                               const std::vector<std::pair<int, int>>& pairs,
                                               const std::vector<loss::Target>& targets);

}  // namespace rdet::match
