#include "rdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "rdet/rng.hpp"

namespace rdet::model {

using nn::Graph;
using nn::Mat;
using nn::Var;

void QuerySchedule::validate() const {
    if (n_first < 1 || n_last < 1) throw std::invalid_argument("QuerySchedule: counts must be >= 1");
    if (n_last > n_first) throw std::invalid_argument("QuerySchedule: n_last > n_first");
    if (!(rho > 0.0) || !(rho < 1.0)) throw std::invalid_argument("QuerySchedule: rho outside (0,1)");
    if (layers < 1) throw std::invalid_argument("QuerySchedule: layers < 1");
}

int query_count(const QuerySchedule& s, int i) {
    s.validate();
    if (i < 0 || i >= s.layers) throw std::out_of_range("query_count: layer index out of range");
    const double raw = (s.n_first - s.n_last) * std::pow(s.rho, i) + s.n_last;
    const int rounded = static_cast<int>(std::floor(raw + 0.5));  // round half up
    return std::clamp(rounded, s.n_last, s.n_first);
}

std::vector<int> schedule_counts(const QuerySchedule& s) {
    std::vector<int> out(s.layers);
    for (int i = 0; i < s.layers; ++i) out[i] = query_count(s, i);
    return out;
}

std::vector<int> topk_indices(const std::vector<double>& probs, int k) {
    const int n = static_cast<int>(probs.size());
    if (k > n) throw std::invalid_argument("topk_indices: k exceeds count");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    order.resize(k);
    std::sort(order.begin(), order.end());  // survivors keep original order
    return order;
}

void DecoderConfig::validate() const {
    if (d < 1 || heads < 1 || d % heads != 0)
        throw std::invalid_argument("DecoderConfig: d must be divisible by heads");
    if (k_points < 3) throw std::invalid_argument("DecoderConfig: k_points < 3");
    if (layers < 1 || classes < 1 || ffn < 1 || grid < 1 || n_queries < 1)
        throw std::invalid_argument("DecoderConfig: non-positive dimension");
}

Mat scene_memory_features(const synth::Scene& scene, const DecoderConfig& cfg) {
    const int g = cfg.grid;
    const double cell = scene.size / g;
    Mat feats(g * g, cfg.feat_dim());
    for (int r = 0; r < g; ++r) {
        for (int c = 0; c < g; ++c) {
            const double cx = (c + 0.5) * cell;
            const double cy = (r + 0.5) * cell;
            int best = -1;
            double best_d = 0.0;
            for (size_t o = 0; o < scene.objects.size(); ++o) {
                const auto& b = scene.objects[o].box;
                const double dist = std::hypot(b.cx - cx, b.cy - cy);
                const double reach = std::max(1.5 * cell, 0.5 * std::hypot(b.w, b.h));
                if (dist <= reach && (best < 0 || dist < best_d)) {
                    best = static_cast<int>(o);
                    best_d = dist;
                }
            }
            double* f = feats.row(r * g + c);
            if (best >= 0) {
                const auto& obj = scene.objects[best];
                f[0] = 1.0;
                f[1 + obj.cls] = 1.0;
                const int base = 1 + cfg.classes;
                f[base + 0] = (obj.box.cx - cx) / scene.size;
                f[base + 1] = (obj.box.cy - cy) / scene.size;
                f[base + 2] = obj.box.w / scene.size;
                f[base + 3] = obj.box.h / scene.size;
                f[base + 4] = std::cos(2.0 * obj.box.theta);
                f[base + 5] = std::sin(2.0 * obj.box.theta);
            }
        }
    }
    return feats;
}

namespace {

Mat xavier(Rng& rng, int rows, int cols, double gain = 1.0) {
    Mat m(rows, cols);
    const double a = gain * std::sqrt(6.0 / (rows + cols));
    for (double& v : m.d) v = rng.uniform(-a, a);
    return m;
}

Mat constant(int rows, int cols, double value) {
    Mat m(rows, cols);
    for (double& v : m.d) v = value;
    return m;
}

}  // namespace

Decoder::Decoder(const DecoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const int d = cfg_.d;

    Mat qe(cfg_.n_queries, d);
    for (double& v : qe.d) v = rng.normal();
    query_embed_ = params_.add("query_embed", std::move(qe));

    Mat qr(cfg_.n_queries, 2);
    for (double& v : qr.d) {
        const double u = rng.uniform(0.1, 0.9);
        v = std::log(u / (1.0 - u));  // sigmoid(v) spreads over the image
    }
    query_ref_ = params_.add("query_ref", std::move(qr));

    mem_w_ = params_.add("mem_w", xavier(rng, cfg_.feat_dim(), d));
    mem_b_ = params_.add("mem_b", Mat(1, d));
    Mat pos(cfg_.memory_tokens(), d);
    for (double& v : pos.d) v = 0.02 * rng.normal();
    mem_pos_ = params_.add("mem_pos", std::move(pos));

    auto add_branch = [&](const std::string& p) {
        BranchIds b;
        b.wq = params_.add(p + ".wq", xavier(rng, d, d));
        b.bq = params_.add(p + ".bq", Mat(1, d));
        b.wk = params_.add(p + ".wk", xavier(rng, d, d));
        b.bk = params_.add(p + ".bk", Mat(1, d));
        b.wv = params_.add(p + ".wv", xavier(rng, d, d));
        b.bv = params_.add(p + ".bv", Mat(1, d));
        b.wo = params_.add(p + ".wo", xavier(rng, d, d));
        b.bo = params_.add(p + ".bo", Mat(1, d));
        b.ln_g = params_.add(p + ".ln_g", constant(1, d, 1.0));
        b.ln_b = params_.add(p + ".ln_b", Mat(1, d));
        b.f1 = params_.add(p + ".f1", xavier(rng, d, cfg_.ffn));
        b.f1b = params_.add(p + ".f1b", Mat(1, cfg_.ffn));
        b.f2 = params_.add(p + ".f2", xavier(rng, cfg_.ffn, d));
        b.f2b = params_.add(p + ".f2b", Mat(1, d));
        b.fln_g = params_.add(p + ".fln_g", constant(1, d, 1.0));
        b.fln_b = params_.add(p + ".fln_b", Mat(1, d));
        return b;
    };

    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l);
        LayerIds ids;
        ids.sa_wq = params_.add(p + ".sa.wq", xavier(rng, d, d));
        ids.sa_bq = params_.add(p + ".sa.bq", Mat(1, d));
        ids.sa_wk = params_.add(p + ".sa.wk", xavier(rng, d, d));
        ids.sa_bk = params_.add(p + ".sa.bk", Mat(1, d));
        ids.sa_wv = params_.add(p + ".sa.wv", xavier(rng, d, d));
        ids.sa_bv = params_.add(p + ".sa.bv", Mat(1, d));
        ids.sa_wo = params_.add(p + ".sa.wo", xavier(rng, d, d));
        ids.sa_bo = params_.add(p + ".sa.bo", Mat(1, d));
        ids.sa_ln_g = params_.add(p + ".sa.ln_g", constant(1, d, 1.0));
        ids.sa_ln_b = params_.add(p + ".sa.ln_b", Mat(1, d));
        ids.cls = add_branch(p + ".cls");
        ids.box = add_branch(p + ".box");
        layer_ids_.push_back(ids);
    }

    cls_w_ = params_.add("cls_head.w", xavier(rng, d, cfg_.classes));
    // Bias such that initial class probabilities sit near 0.01; keeps the
    // background focal term small at the start.
    cls_b_ = params_.add("cls_head.b", constant(1, cfg_.classes, -std::log(99.0)));
    pts_w_ = params_.add("pts_head.w", xavier(rng, d, 2 * cfg_.k_points, 0.01));
    pts_b_ = params_.add("pts_head.b", Mat(1, 2 * cfg_.k_points));
}

Var Decoder::attention(Graph& g, const Var& q_in, const Var& kv_in, int wq, int bq, int wk,
                       int bk, int wv, int bv, int wo, int bo, bool self_quadratic,
                       std::vector<Var>* attn_sink) const {
    const int dh = cfg_.d / cfg_.heads;
    const Var q = g.add_row(g.mm(q_in, false, g.param(wq), false), g.param(bq));
    const Var k = g.add_row(g.mm(kv_in, false, g.param(wk), false), g.param(bk));
    const Var v = g.add_row(g.mm(kv_in, false, g.param(wv), false), g.param(bv));
    std::vector<Var> heads;
    for (int h = 0; h < cfg_.heads; ++h) {
        const Var qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        const Var kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        const Var vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        g.scope_self_attn_quadratic = self_quadratic;
        const Var scores = g.mm(qh, false, kh, true);
        g.scope_self_attn_quadratic = false;
        const Var probs = g.softmax_rows(g.scale(scores, 1.0 / std::sqrt(double(dh))));
        if (attn_sink) attn_sink->push_back(probs);
        g.scope_self_attn_quadratic = self_quadratic;
        const Var ctx = g.mm(probs, false, vh, false);
        g.scope_self_attn_quadratic = false;
        heads.push_back(ctx);
    }
    const Var ctx = g.concat_cols(heads);
    return g.add_row(g.mm(ctx, false, g.param(wo), false), g.param(bo));
}

Var Decoder::branch(Graph& g, const Var& x, const Var& mem, const BranchIds& ids,
                    std::vector<Var>* attn_sink) const {
    const Var ca = attention(g, x, mem, ids.wq, ids.bq, ids.wk, ids.bk, ids.wv, ids.bv, ids.wo,
                             ids.bo, false, attn_sink);
    const Var h = g.layernorm_rows(g.add(x, ca), g.param(ids.ln_g), g.param(ids.ln_b));
    const Var f = g.add_row(
        g.mm(g.relu(g.add_row(g.mm(h, false, g.param(ids.f1), false), g.param(ids.f1b))), false,
             g.param(ids.f2), false),
        g.param(ids.f2b));
    return g.layernorm_rows(g.add(h, f), g.param(ids.fln_g), g.param(ids.fln_b));
}

Decoder::LayerOut Decoder::decoder_layer(Graph& g, const Var& x, const Var& memory,
                                         const Var& ref, int layer) const {
    if (x->val.cols != cfg_.d || memory->val.cols != cfg_.d)
        throw std::invalid_argument("decoder_layer: feature dimension mismatch");
    const LayerIds& ids = layer_ids_.at(layer);
    LayerOut out;
    const Var sa = attention(g, x, x, ids.sa_wq, ids.sa_bq, ids.sa_wk, ids.sa_bk, ids.sa_wv,
                             ids.sa_bv, ids.sa_wo, ids.sa_bo, true, &out.attn);
    const Var x1 = g.layernorm_rows(g.add(x, sa), g.param(ids.sa_ln_g), g.param(ids.sa_ln_b));
    out.class_feat = branch(g, x1, memory, ids.cls, &out.attn);
    out.box_feat = branch(g, x1, memory, ids.box, &out.attn);
    out.logits = g.add_row(g.mm(out.class_feat, false, g.param(cls_w_), false), g.param(cls_b_));
    const Var offsets =
        g.add_row(g.mm(out.box_feat, false, g.param(pts_w_), false), g.param(pts_b_));
    out.points = g.sigmoid(g.tile_add(offsets, ref, cfg_.k_points));
    return out;
}

Var Decoder::fuse_features(Graph& g, const Var& class_feat, const Var& box_feat) {
    return g.add(class_feat, box_feat);
}

Var Decoder::memory(Graph& g, const Mat& feats) const {
    if (feats.rows != cfg_.memory_tokens() || feats.cols != cfg_.feat_dim())
        throw std::invalid_argument("memory: feature shape mismatch");
    const Var raw = g.leaf(feats);
    return g.add(g.add_row(g.mm(raw, false, g.param(mem_w_), false), g.param(mem_b_)),
                 g.param(mem_pos_));
}

std::vector<double> Decoder::class_probs(const Mat& logits) {
    std::vector<double> probs(logits.rows);
    for (int i = 0; i < logits.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < logits.cols; ++c) mx = std::max(mx, logits.at(i, c));
        probs[i] = 1.0 / (1.0 + std::exp(-mx));
    }
    return probs;
}

Decoder::ForwardOut Decoder::forward(Graph& g, const Mat& memory_feats,
                                     const QuerySchedule& sched, nn::OpCount* ops) const {
    sched.validate();
    if (sched.n_first != cfg_.n_queries)
        throw std::invalid_argument("forward: schedule n_first != model n_queries");
    if (sched.layers != cfg_.layers)
        throw std::invalid_argument("forward: schedule layers != model layers");
    if (!g.bound_to(&params_)) g.bind(&params_);
    g.counter = ops;

    g.scope_layer = -1;  // memory embedding is encoder-side, not counted
    const Var mem = memory(g, memory_feats);

    Var x = g.param(query_embed_);
    Var ref = g.param(query_ref_);
    std::vector<int> ids(cfg_.n_queries);
    std::iota(ids.begin(), ids.end(), 0);

    ForwardOut out;
    for (int l = 0; l < cfg_.layers; ++l) {
        if (l > 0) {
            const int k = query_count(sched, l);
            if (k < static_cast<int>(ids.size())) {
                const auto probs = class_probs(out.layers.back().logits->val);
                const auto sel = topk_indices(probs, k);
                x = g.gather_rows(x, sel);
                ref = g.gather_rows(ref, sel);
                std::vector<int> kept;
                kept.reserve(sel.size());
                for (int s : sel) kept.push_back(ids[s]);
                ids = std::move(kept);
            }
        }
        g.scope_layer = l;
        LayerOut lo = decoder_layer(g, x, mem, ref, l);
        lo.query_ids = ids;
        x = fuse_features(g, lo.class_feat, lo.box_feat);
        out.layers.push_back(std::move(lo));
    }
    g.scope_layer = -1;
    g.counter = nullptr;
    return out;
}

std::vector<loss::Target> normalized_targets(const synth::Scene& scene) {
    std::vector<loss::Target> targets;
    targets.reserve(scene.objects.size());
    for (const auto& o : scene.objects) {
        loss::Target t;
        t.cls = o.cls;
        t.box = geom::RotatedBox{o.box.cx / scene.size, o.box.cy / scene.size,
                                 o.box.w / scene.size, o.box.h / scene.size, o.box.theta};
        targets.push_back(t);
    }
    return targets;
}

std::vector<eval::Detection> predict(const Decoder& dec, const synth::Scene& scene,
                                     const QuerySchedule& sched, double score_thresh) {
    Graph g;
    const auto out = dec.forward(g, scene_memory_features(scene, dec.config()), sched);
    const auto& last = out.layers.back();
    const Mat& logits = last.logits->val;
    const Mat& points = last.points->val;
    const int k = dec.config().k_points;

    std::vector<eval::Detection> dets;
    for (int i = 0; i < logits.rows; ++i) {
        int best_c = 0;
        for (int c = 1; c < logits.cols; ++c)
            if (logits.at(i, c) > logits.at(i, best_c)) best_c = c;
        const double score = 1.0 / (1.0 + std::exp(-logits.at(i, best_c)));
        if (score < score_thresh) continue;
        geom::PointSet ps;
        ps.reserve(k);
        for (int p = 0; p < k; ++p)
            ps.push_back(geom::Point2{points.at(i, 2 * p) * scene.size,
                                      points.at(i, 2 * p + 1) * scene.size});
        const geom::RotatedBox box = geom::min_area_rect(ps);
        dets.push_back(eval::Detection{scene.id, best_c, score, box});
    }
    return dets;
}

}  // namespace rdet::model
