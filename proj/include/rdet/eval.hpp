#pragma once

#include <string>
#include <vector>

#include "rdet/geom.hpp"

namespace rdet::eval {

struct Detection {
    std::string scene;
    int cls = 0;
    double score = 0.0;
    geom::RotatedBox box;
};

struct GroundTruth {
    std::string scene;
    int cls = 0;
    geom::RotatedBox box;
    bool difficult = false;
};

// VOC-2007 11-point interpolated AP for one class at the given convex-hull
// IoU threshold. Detections are ranked by descending score (equal scores by
// input order); each counts as a true positive if it matches the highest-IoU
// unmatched non-difficult ground truth of its scene with IoU >= thresh.
// Detections whose best remaining overlap is a difficult ground truth are
// ignored. Returns -1 when the class has no non-difficult ground truth
// (AP undefined).
double ap_per_class(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                    int cls, double iou_thresh);

struct ClassAP {
    int cls = 0;
    double ap = 0.0;
    int n_gt = 0;  // non-difficult ground truths
};

struct EvalResult {
    std::vector<ClassAP> per_class;  // only classes with defined AP
    double map = 0.0;
};

// Unweighted mean over classes with at least one non-difficult ground truth.
// Throws when no class has a defined AP.
EvalResult evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                    double iou_thresh);
double mean_ap(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
               double iou_thresh);

}  // namespace rdet::eval
