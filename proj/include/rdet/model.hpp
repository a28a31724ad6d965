#pragma once

#include <cstdint>
#include <vector>

#include "rdet/autodiff.hpp"
#include "rdet/eval.hpp"
#include "rdet/loss.hpp"
#include "rdet/synth.hpp"

namespace rdet::model {

// Per-layer query budget: N_i = round((n_first - n_last) * rho^i + n_last).
// n_last == n_first disables pruning (constant-N baseline).
struct QuerySchedule {
    int n_first = 300;
    int n_last = 100;
    double rho = 0.5;
    int layers = 6;

    void validate() const;
};

// Round-half-up evaluation of the schedule at layer i, clamped to
// [n_last, n_first]. Layer 0 is exactly n_first.
int query_count(const QuerySchedule& s, int i);
std::vector<int> schedule_counts(const QuerySchedule& s);

// Indices of the k largest probabilities, ties to the lower index; the
// returned survivor list preserves the original order.
std::vector<int> topk_indices(const std::vector<double>& probs, int k);

struct DecoderConfig {
    int d = 64;
    int heads = 4;
    int layers = 4;
    int k_points = 9;
    int classes = 3;
    int ffn = 128;
    int grid = 12;       // synthetic memory grid side (tokens = grid^2)
    int n_queries = 60;  // query slots; schedules must start at this count

    int memory_tokens() const { return grid * grid; }
    // Per-cell features: occupancy, class one-hot, center offset (2),
    // size (2), cos/sin of twice the angle.
    int feat_dim() const { return 7 + classes; }
    void validate() const;
};

// Rasterized scene features on the config grid, the synthetic stand-in for
// an encoder: each cell describes the nearest object (normalized coords).
nn::Mat scene_memory_features(const synth::Scene& scene, const DecoderConfig& cfg);

// Minimal decoupled-query decoder: self-attention over queries, a split into
// class/box cross-attention+FFN branches, shared classification and points
// heads, element-wise-add fusion between layers, and top-k query pruning by
// the schedule.
class Decoder {
  public:
    Decoder(const DecoderConfig& cfg, std::uint64_t seed);

    struct LayerOut {
        nn::Var class_feat;          // N_i x d, class branch output
        nn::Var box_feat;            // N_i x d, box branch output
        nn::Var logits;              // N_i x classes
        nn::Var points;              // N_i x 2K, interleaved (x,y), in (0,1)
        std::vector<nn::Var> attn;   // every attention row-softmax of the layer
        std::vector<int> query_ids;  // original query slots of the rows
    };
    struct ForwardOut {
        std::vector<LayerOut> layers;
    };

    ForwardOut forward(nn::Graph& g, const nn::Mat& memory_feats, const QuerySchedule& sched,
                       nn::OpCount* ops = nullptr) const;

    // One decoder layer on explicit inputs (x: N x d query features, ref:
    // N x 2 reference-point logits).
    LayerOut decoder_layer(nn::Graph& g, const nn::Var& x, const nn::Var& memory,
                           const nn::Var& ref, int layer) const;

    // Element-wise sum of the two branch outputs; input of the next layer.
    static nn::Var fuse_features(nn::Graph& g, const nn::Var& class_feat,
                                 const nn::Var& box_feat);

    // Learned memory tokens from raw per-cell features.
    nn::Var memory(nn::Graph& g, const nn::Mat& feats) const;

    // Max per-class sigmoid score per query (the pruning key).
    static std::vector<double> class_probs(const nn::Mat& logits);

    const DecoderConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

  private:
    struct BranchIds {
        int wq, bq, wk, bk, wv, bv, wo, bo;
        int ln_g, ln_b;
        int f1, f1b, f2, f2b;
        int fln_g, fln_b;
    };
    struct LayerIds {
        int sa_wq, sa_bq, sa_wk, sa_bk, sa_wv, sa_bv, sa_wo, sa_bo;
        int sa_ln_g, sa_ln_b;
        BranchIds cls, box;
    };

    nn::Var attention(nn::Graph& g, const nn::Var& q_in, const nn::Var& kv_in, int wq, int bq,
                      int wk, int bk, int wv, int bv, int wo, int bo, bool self_quadratic,
                      std::vector<nn::Var>* attn_sink) const;
    nn::Var branch(nn::Graph& g, const nn::Var& x, const nn::Var& mem, const BranchIds& ids,
                   std::vector<nn::Var>* attn_sink) const;

    DecoderConfig cfg_;
    nn::ParamStore params_;
    int query_embed_ = -1, query_ref_ = -1;
    int mem_w_ = -1, mem_b_ = -1, mem_pos_ = -1;
    std::vector<LayerIds> layer_ids_;
    int cls_w_ = -1, cls_b_ = -1, pts_w_ = -1, pts_b_ = -1;
};

// Last-layer detections for one scene, denormalized to pixels. score = max
// sigmoid class probability, class = argmax.
std::vector<eval::Detection> predict(const Decoder& dec, const synth::Scene& scene,
                                     const QuerySchedule& sched, double score_thresh = 0.0);

// Scene objects as matching/loss targets in normalized [0,1]^2 coordinates.
std::vector<loss::Target> normalized_targets(const synth::Scene& scene);

}  // namespace rdet::model
