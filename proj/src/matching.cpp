#include "rdet/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rdet::match {

namespace {

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double pair_cost(const loss::ClassLogits& logit, const geom::PointSet& pts,
                 const loss::Target& tgt, const geom::PointSet& corners,
                 const loss::LossWeights& w, double diag) {
    const double prob = sigmoid(logit.at(static_cast<size_t>(tgt.cls)));
    return w.lambda_cls * (-prob) + w.lambda_l1 * loss::center_l1_loss(pts, corners, diag) +
           w.lambda_iou * loss::giou_loss(pts, corners);
}

// Shortest-augmenting-path assignment for rows <= cols; returns col of each row.
std::vector<int> solve_rect(const CostMatrix& c) {
    const int n = c.rows, m = c.cols;
    constexpr double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);  // p[j]: row matched to col j (1-based)
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                const double cur = c.at(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j)
        if (p[j] != 0) row_to_col[p[j] - 1] = j - 1;
    return row_to_col;
}

}  // namespace

CostMatrix matching_cost(const std::vector<loss::ClassLogits>& logits,
                         const std::vector<geom::PointSet>& points,
                         const std::vector<loss::Target>& targets, const loss::LossWeights& w,
                         double diag, kern::Exec exec) {
    const int n = static_cast<int>(logits.size());
    const int m = static_cast<int>(targets.size());
    if (static_cast<int>(points.size()) != n)
        throw std::invalid_argument("matching_cost: logits/points length mismatch");
    if (m == 0) throw std::invalid_argument("matching_cost: no targets");
    std::vector<geom::PointSet> corners(m);
    for (int j = 0; j < m; ++j) corners[j] = geom::box_to_corners(targets[j].box);

    CostMatrix c(n, m);
    const bool parallel = exec == kern::Exec::Parallel ||
                          (exec == kern::Exec::Auto && static_cast<std::uint64_t>(n) * m >= 64);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (parallel)
#else
    (void)parallel;
#endif
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            c.at(i, j) = pair_cost(logits[i], points[i], targets[j], corners[j], w, diag);
        }
    }
    return c;
}

std::vector<std::pair<int, int>> hungarian(const CostMatrix& c) {
    if (c.rows == 0 || c.cols == 0) return {};
    for (double x : c.v)
        if (!std::isfinite(x)) throw std::invalid_argument("hungarian: non-finite cost");

    std::vector<std::pair<int, int>> pairs;
    if (c.rows <= c.cols) {
        const std::vector<int> rc = solve_rect(c);
        for (int i = 0; i < c.rows; ++i)
            if (rc[i] >= 0) pairs.emplace_back(i, rc[i]);
    } else {
        CostMatrix t(c.cols, c.rows);
        for (int i = 0; i < c.rows; ++i)
            for (int j = 0; j < c.cols; ++j) t.at(j, i) = c.at(i, j);
        const std::vector<int> rc = solve_rect(t);
        for (int j = 0; j < c.cols; ++j)
            if (rc[j] >= 0) pairs.emplace_back(rc[j], j);
    }
    std::sort(pairs.begin(), pairs.end());
    return pairs;
}

Assignment reassign_labels(const std::vector<geom::PointSet>& points,
                           const std::vector<std::pair<int, int>>& pairs,
                           const std::vector<loss::Target>& targets, const MatchConfig& cfg) {
    Assignment a;
    a.pairs = pairs;
    std::sort(a.pairs.begin(), a.pairs.end());
    a.labels.assign(points.size(), std::nullopt);
    for (const auto& [qi, tj] : a.pairs) {
        if (qi < 0 || qi >= static_cast<int>(points.size()) || tj < 0 ||
            tj >= static_cast<int>(targets.size()))
            throw std::invalid_argument("reassign_labels: pair index out of range");
        const double iou =
            geom::convex_hull_iou(points[qi], geom::box_to_corners(targets[tj].box));
        if (iou > cfg.tau) a.labels[qi] = targets[tj].cls;  // strict: iou == tau drops
    }
    return a;
}

std::vector<std::pair<double, double>> iou_cdf(const std::vector<geom::PointSet>& points,
                                               const std::vector<std::pair<int, int>>& pairs,
                                               const std::vector<loss::Target>& targets) {
    std::vector<double> ious;
    ious.reserve(pairs.size());
    for (const auto& [qi, tj] : pairs)
        ious.push_back(geom::convex_hull_iou(points[qi], geom::box_to_corners(targets[tj].box)));
    std::sort(ious.begin(), ious.end());
    std::vector<std::pair<double, double>> cdf;
    cdf.reserve(ious.size());
    const double n = static_cast<double>(ious.size());
    for (size_t k = 0; k < ious.size(); ++k)
        cdf.emplace_back(ious[k], static_cast<double>(k + 1) / n);
    return cdf;
}

}  // namespace rdet::match
