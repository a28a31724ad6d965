#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rdet/matching.hpp"
#include "rdet/model.hpp"

namespace rdet::model {

struct TrainConfig {
    int steps = 2000;
    int batch = 4;
    double lr = 2e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double weight_decay = 1e-4;  // decoupled; applied to weight matrices only
    double lr_drop_frac = 0.8;   // lr *= 0.1 after this fraction of the run
    std::uint64_t seed = 1;
    bool reassign = true;            // label re-assignment on/off (ablation switch)
    bool reassign_per_layer = true;  // false: re-assign at the last layer only
    int log_every = 20;
    double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

struct StepLog {
    int step = 0;
    double cls = 0.0, l1 = 0.0, iou = 0.0, total = 0.0;  // per-layer/batch means
    std::vector<int> query_counts;
};

struct TrainResult {
    std::vector<StepLog> log;
    double final_total = 0.0;
};

// Deep-supervised training on synthetic scenes: per layer, Hungarian matching
// on the layer's own predictions, label re-assignment per the config, loss
// seeds from the analytic focal/center-L1/GIoU gradients, backprop through
// the tape. Batch scenes run in parallel; results are independent of the
// thread count. Throws on divergence (non-finite loss), naming the step.
TrainResult train_toy(Decoder& dec, const std::vector<synth::Scene>& scenes,
                      const QuerySchedule& sched, const loss::LossWeights& w,
                      const match::MatchConfig& mcfg, const TrainConfig& tcfg);

// Max relative disagreement between backprop and central finite differences
// over `count` randomly probed parameters on one scene (matching held fixed,
// which is exactly what the training gradient differentiates).
double gradient_spot_check(Decoder& dec, const synth::Scene& scene, const QuerySchedule& sched,
                           const loss::LossWeights& w, const match::MatchConfig& mcfg, int count,
                           std::uint64_t seed);

// mAP@thresh of the decoder over a scene set.
double evaluate_scenes(const Decoder& dec, const std::vector<synth::Scene>& scenes,
                       const QuerySchedule& sched, double iou_thresh);

}  // namespace rdet::model
