#include "rdet/eval.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace rdet::eval {

namespace {

double box_iou(const geom::RotatedBox& a, const geom::RotatedBox& b) {
    return geom::convex_hull_iou(geom::box_to_corners(a), geom::box_to_corners(b));
}

}  // namespace

double ap_per_class(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                    int cls, double iou_thresh) {
    // Ground truths of this class, grouped by scene.
    std::map<std::string, std::vector<const GroundTruth*>> gt_by_scene;
    int n_pos = 0;
    for (const auto& g : gts) {
        if (g.cls != cls) continue;
        gt_by_scene[g.scene].push_back(&g);
        if (!g.difficult) ++n_pos;
    }
    if (n_pos == 0) return -1.0;

    std::vector<int> order;
    for (size_t i = 0; i < dets.size(); ++i)
        if (dets[i].cls == cls) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });

    std::map<std::string, std::vector<char>> taken;
    for (auto& [scene, v] : gt_by_scene) taken[scene].assign(v.size(), 0);

    std::vector<char> is_tp;
    is_tp.reserve(order.size());
    for (int di : order) {
        const Detection& d = dets[di];
        auto it = gt_by_scene.find(d.scene);
        if (it == gt_by_scene.end()) {
            is_tp.push_back(0);
            continue;
        }
        const auto& cand = it->second;
        auto& used = taken[d.scene];
        int best = -1, best_diff = -1;
        double best_iou = iou_thresh, best_diff_iou = iou_thresh;
        for (size_t k = 0; k < cand.size(); ++k) {
            const double iou = box_iou(d.box, cand[k]->box);
            if (cand[k]->difficult) {
                if (iou >= best_diff_iou) {
                    best_diff_iou = iou;
                    best_diff = static_cast<int>(k);
                }
            } else if (!used[k] && iou >= best_iou && (best < 0 || iou > best_iou)) {
                best_iou = iou;
                best = static_cast<int>(k);
            }
        }
        if (best >= 0) {
            used[best] = 1;
            is_tp.push_back(1);
        } else if (best_diff >= 0) {
            continue;  // overlaps a difficult instance: neither credit nor penalty
        } else {
            is_tp.push_back(0);
        }
    }

    // Precision/recall staircase.
    std::vector<double> prec, rec;
    int tp = 0, fp = 0;
    for (char t : is_tp) {
        if (t)
            ++tp;
        else
            ++fp;
        prec.push_back(static_cast<double>(tp) / (tp + fp));
        rec.push_back(static_cast<double>(tp) / n_pos);
    }

    // VOC-2007 11-point interpolation.
    double psum = 0.0;
    for (int k = 0; k <= 10; ++k) {
        const double r = k / 10.0;
        double p = 0.0;
        for (size_t i = 0; i < rec.size(); ++i)
            if (rec[i] >= r) p = std::max(p, prec[i]);
        psum += p;
    }
    return psum / 11.0;
}

EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                    double iou_thresh) {
    std::set<int> classes;
    for (const auto& g : gts) classes.insert(g.cls);
    EvalResult r;
    for (int cls : classes) {
        int n_pos = 0;
        for (const auto& g : gts)
            if (g.cls == cls && !g.difficult) ++n_pos;
        const double ap = ap_per_class(dets, gts, cls, iou_thresh);
        if (ap < 0.0) continue;
        r.per_class.push_back(ClassAP{cls, ap, n_pos});
    }
    if (r.per_class.empty()) throw std::invalid_argument("evaluate: no class has a defined AP");
    double sum = 0.0;
    for (const auto& c : r.per_class) sum += c.ap;
    r.map = sum / static_cast<double>(r.per_class.size());
    return r;
}

double mean_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
               double iou_thresh) {
    return evaluate(dets, gts, iou_thresh).map;
}

}  // namespace rdet::eval
