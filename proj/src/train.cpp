#include "rdet/train.hpp"

#include <cmath>
#include <stdexcept>

#include "rdet/rng.hpp"

namespace rdet::model {

using nn::Graph;
using nn::Mat;

namespace {

struct SceneTerms {
    double cls = 0.0, l1 = 0.0, iou = 0.0, total = 0.0;
    int layers = 0;
};

std::vector<loss::ClassLogits> rows_as_logits(const Mat& m) {
    std::vector<loss::ClassLogits> out(m.rows);
    for (int i = 0; i < m.rows; ++i) out[i].assign(m.row(i), m.row(i) + m.cols);
    return out;
}

std::vector<geom::PointSet> rows_as_points(const Mat& m, int k) {
    std::vector<geom::PointSet> out(m.rows);
    for (int i = 0; i < m.rows; ++i) {
        out[i].reserve(k);
        for (int p = 0; p < k; ++p)
            out[i].push_back(geom::Point2{m.at(i, 2 * p), m.at(i, 2 * p + 1)});
    }
    return out;
}

struct LayerAssignment {
    std::vector<std::pair<int, int>> pairs;
    std::vector<loss::Label> labels;
};

LayerAssignment assign_layer(const std::vector<loss::ClassLogits>& logits,
                             const std::vector<geom::PointSet>& points,
                             const std::vector<loss::Target>& targets,
                             const loss::LossWeights& w, const match::MatchConfig& mcfg,
                             bool do_reassign) {
    LayerAssignment a;
    a.labels.assign(logits.size(), std::nullopt);
    if (targets.empty()) return a;
    const auto cost = match::matching_cost(logits, points, targets, w, mcfg.diag);
    a.pairs = match::hungarian(cost);
    if (do_reassign) {
        a.labels = match::reassign_labels(points, a.pairs, targets, mcfg).labels;
    } else {
        for (const auto& [qi, tj] : a.pairs) a.labels[qi] = targets[tj].cls;
    }
    return a;
}

// Seeds d(total_loss)/d(logits, points) into the layer's output grads and
// returns the loss terms. The assignment is treated as a constant.
loss::LossBreakdown seed_layer(Decoder::LayerOut& lo, const LayerAssignment& a,
                               const std::vector<loss::Target>& targets,
                               const loss::LossWeights& w, double diag, int k_points) {
    const auto logits = rows_as_logits(lo.logits->val);
    const auto points = rows_as_points(lo.points->val, k_points);
    const auto breakdown = loss::total_loss(logits, points, a.pairs, a.labels, targets, w, diag);
    const double norm = std::max<int>(static_cast<int>(a.pairs.size()), 1);

    Mat& dlogits = lo.logits->grad;
    for (size_t i = 0; i < logits.size(); ++i) {
        const auto fg = loss::focal_loss_grad(logits[i], a.labels[i], w);
        for (size_t c = 0; c < fg.size(); ++c)
            dlogits.at(static_cast<int>(i), static_cast<int>(c)) +=
                w.lambda_cls * fg[c] / norm;
    }
    Mat& dpoints = lo.points->grad;
    for (const auto& [qi, tj] : a.pairs) {
        const auto corners = geom::box_to_corners(targets[tj].box);
        const auto l1g = loss::center_l1_loss_grad(points[qi], corners, diag);
        const auto gg = loss::giou_loss_grad(points[qi], corners);
        for (int p = 0; p < k_points; ++p) {
            dpoints.at(qi, 2 * p) +=
                (w.lambda_l1 * l1g[p].x + w.lambda_iou * gg.grad[p].x) / norm;
            dpoints.at(qi, 2 * p + 1) +=
                (w.lambda_l1 * l1g[p].y + w.lambda_iou * gg.grad[p].y) / norm;
        }
    }
    return breakdown;
}

SceneTerms scene_backward(const Decoder& dec, const synth::Scene& scene,
                          const QuerySchedule& sched, const loss::LossWeights& w,
                          const match::MatchConfig& mcfg, bool reassign,
                          bool reassign_per_layer, std::vector<Mat>& grads) {
    Graph g;
    g.exec = kern::Exec::Serial;  // scenes parallelize across the batch
    g.bind(&dec.params());
    auto out = dec.forward(g, scene_memory_features(scene, dec.config()), sched);
    const auto targets = normalized_targets(scene);

    SceneTerms terms;
    for (size_t l = 0; l < out.layers.size(); ++l) {
        auto& lo = out.layers[l];
        const bool do_reassign =
            reassign && (reassign_per_layer || l + 1 == out.layers.size());
        const auto a = assign_layer(rows_as_logits(lo.logits->val),
                                    rows_as_points(lo.points->val, dec.config().k_points),
                                    targets, w, mcfg, do_reassign);
        const auto b = seed_layer(lo, a, targets, w, mcfg.diag, dec.config().k_points);
        terms.cls += b.cls;
        terms.l1 += b.l1;
        terms.iou += b.iou;
        terms.total += b.total;
        ++terms.layers;
    }
    g.backward();
    g.collect_param_grads(grads);
    return terms;
}

}  // namespace

TrainResult train_toy(Decoder& dec, const std::vector<synth::Scene>& scenes,
                      const QuerySchedule& sched, const loss::LossWeights& w,
                      const match::MatchConfig& mcfg, const TrainConfig& tcfg) {
    if (scenes.empty()) throw std::invalid_argument("train_toy: empty scene set");
    sched.validate();
    nn::ParamStore& params = dec.params();
    const size_t np = params.size();
    std::vector<Mat> m(np), v(np);
    for (size_t i = 0; i < np; ++i) {
        m[i] = Mat(params.values[i].rows, params.values[i].cols);
        v[i] = Mat(params.values[i].rows, params.values[i].cols);
    }

    Rng rng(tcfg.seed);
    TrainResult result;
    const auto counts = schedule_counts(sched);
    const int drop_at = static_cast<int>(tcfg.steps * tcfg.lr_drop_frac);

    for (int step = 0; step < tcfg.steps; ++step) {
        std::vector<int> batch(tcfg.batch);
        for (int& b : batch) b = rng.uniform_int(0, static_cast<int>(scenes.size()) - 1);

        std::vector<std::vector<Mat>> scene_grads(tcfg.batch);
        std::vector<SceneTerms> scene_terms(tcfg.batch);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
        for (int b = 0; b < tcfg.batch; ++b) {
            scene_terms[b] =
                scene_backward(dec, scenes[batch[b]], sched, w, mcfg, tcfg.reassign,
                               tcfg.reassign_per_layer, scene_grads[b]);
        }

        SceneTerms mean;
        for (const auto& t : scene_terms) {
            mean.cls += t.cls / (t.layers * tcfg.batch);
            mean.l1 += t.l1 / (t.layers * tcfg.batch);
            mean.iou += t.iou / (t.layers * tcfg.batch);
            mean.total += t.total / (t.layers * tcfg.batch);
        }
        if (!std::isfinite(mean.total))
            throw std::runtime_error("train_toy: loss diverged (non-finite) at step " +
                                     std::to_string(step));

        // Merge per-scene gradients in batch order (thread-count independent).
        std::vector<Mat> grads(np);
        for (int b = 0; b < tcfg.batch; ++b) {
            for (size_t i = 0; i < np; ++i) {
                if (scene_grads[b].size() <= i || scene_grads[b][i].empty()) continue;
                if (grads[i].empty()) grads[i] = Mat(m[i].rows, m[i].cols);
                for (size_t e = 0; e < grads[i].d.size(); ++e)
                    grads[i].d[e] += scene_grads[b][i].d[e] / tcfg.batch;
            }
        }

        if (tcfg.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& gm : grads)
                for (double x : gm.d) sq += x * x;
            const double norm = std::sqrt(sq);
            if (norm > tcfg.grad_clip) {
                const double s = tcfg.grad_clip / norm;
                for (auto& gm : grads)
                    for (double& x : gm.d) x *= s;
            }
        }

        const double lr = (step >= drop_at && drop_at < tcfg.steps) ? tcfg.lr * 0.1 : tcfg.lr;
        const double b1t = 1.0 - std::pow(tcfg.beta1, step + 1);
        const double b2t = 1.0 - std::pow(tcfg.beta2, step + 1);
        for (size_t i = 0; i < np; ++i) {
            if (grads[i].empty()) continue;
            Mat& theta = params.values[i];
            const bool decay = theta.rows > 1;  // skip biases and LN affines
            for (size_t e = 0; e < theta.d.size(); ++e) {
                const double gr = grads[i].d[e];
                m[i].d[e] = tcfg.beta1 * m[i].d[e] + (1.0 - tcfg.beta1) * gr;
                v[i].d[e] = tcfg.beta2 * v[i].d[e] + (1.0 - tcfg.beta2) * gr * gr;
                const double mhat = m[i].d[e] / b1t;
                const double vhat = v[i].d[e] / b2t;
                theta.d[e] -= lr * (mhat / (std::sqrt(vhat) + tcfg.adam_eps) +
                                    (decay ? tcfg.weight_decay * theta.d[e] : 0.0));
            }
        }

        if (step % std::max(tcfg.log_every, 1) == 0 || step + 1 == tcfg.steps) {
            StepLog log;
            log.step = step;
            log.cls = mean.cls;
            log.l1 = mean.l1;
            log.iou = mean.iou;
            log.total = mean.total;
            log.query_counts = counts;
            result.log.push_back(std::move(log));
        }
        result.final_total = mean.total;
    }
    return result;
}

namespace {

// Total loss over all layers with a frozen per-layer assignment.
double fixed_assignment_loss(const Decoder& dec, const Mat& feats, const QuerySchedule& sched,
                             const std::vector<loss::Target>& targets,
                             const loss::LossWeights& w, double diag,
                             const std::vector<LayerAssignment>& fixed) {
    Graph g;
    g.bind(&dec.params());
    const auto out = dec.forward(g, feats, sched);
    double total = 0.0;
    for (size_t l = 0; l < out.layers.size(); ++l) {
        const auto logits = rows_as_logits(out.layers[l].logits->val);
        const auto points = rows_as_points(out.layers[l].points->val, dec.config().k_points);
        total +=
            loss::total_loss(logits, points, fixed[l].pairs, fixed[l].labels, targets, w, diag)
                .total;
    }
    return total;
}

}  // namespace

double gradient_spot_check(Decoder& dec, const synth::Scene& scene, const QuerySchedule& sched,
                           const loss::LossWeights& w, const match::MatchConfig& mcfg, int count,
                           std::uint64_t seed) {
    const Mat feats = scene_memory_features(scene, dec.config());
    const auto targets = normalized_targets(scene);

    // Freeze the assignment computed at the current parameters.
    std::vector<LayerAssignment> fixed;
    {
        Graph g;
        g.bind(&dec.params());
        const auto out = dec.forward(g, feats, sched);
        for (const auto& lo : out.layers) {
            fixed.push_back(assign_layer(rows_as_logits(lo.logits->val),
                                         rows_as_points(lo.points->val, dec.config().k_points),
                                         targets, w, mcfg, true));
        }
    }

    // Analytic gradient under the frozen assignment.
    std::vector<Mat> grads;
    {
        Graph g;
        g.bind(&dec.params());
        auto out = dec.forward(g, feats, sched);
        for (size_t l = 0; l < out.layers.size(); ++l)
            seed_layer(out.layers[l], fixed[l], targets, w, mcfg.diag, dec.config().k_points);
        g.backward();
        g.collect_param_grads(grads);
    }

    nn::ParamStore& params = dec.params();
    Rng rng(seed);
    double worst = 0.0;
    for (int probe = 0; probe < count; ++probe) {
        const int id = rng.uniform_int(0, static_cast<int>(params.size()) - 1);
        const int e = rng.uniform_int(0, static_cast<int>(params.values[id].d.size()) - 1);
        const double theta = params.values[id].d[e];
        const double h = 1e-5 * std::max(1.0, std::abs(theta));
        params.values[id].d[e] = theta + h;
        const double up = fixed_assignment_loss(dec, feats, sched, targets, w, mcfg.diag, fixed);
        params.values[id].d[e] = theta - h;
        const double dn = fixed_assignment_loss(dec, feats, sched, targets, w, mcfg.diag, fixed);
        params.values[id].d[e] = theta;
        const double fd = (up - dn) / (2.0 * h);
        const double an = grads.size() > static_cast<size_t>(id) && !grads[id].empty()
                              ? grads[id].d[e]
                              : 0.0;
        const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, rel);
    }
    return worst;
}

double evaluate_scenes(const Decoder& dec, const std::vector<synth::Scene>& scenes,
                       const QuerySchedule& sched, double iou_thresh) {
    std::vector<eval::Detection> dets;
    std::vector<eval::GroundTruth> gts;
    for (const auto& scene : scenes) {
        const auto d = predict(dec, scene, sched);
        dets.insert(dets.end(), d.begin(), d.end());
        for (const auto& o : scene.objects)
            gts.push_back(eval::GroundTruth{scene.id, o.cls, o.box, o.difficult});
    }
    return eval::mean_ap(dets, gts, iou_thresh);
}

}  // namespace rdet::model
