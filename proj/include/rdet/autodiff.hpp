#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rdet/kernels.hpp"
#include "rdet/mat.hpp"

namespace rdet::nn {

struct Node {
    Mat val;
    Mat grad;                    // same shape as val, zero-initialized
    std::function<void()> back;  // accumulates this node's grad into its parents'
};
using Var = std::shared_ptr<Node>;

// Multiply-add counts of one forward pass, attributed per decoder layer.
// self_attn_quadratic covers the two matmuls of self-attention whose cost
// scales with the square of the query count (QK^T scores and the weighted
// value sum); everything else lands in `other`.
struct OpCount {
    struct Layer {
        std::uint64_t self_attn_quadratic = 0;
        std::uint64_t other = 0;
        std::uint64_t total() const { return self_attn_quadratic + other; }
    };
    std::vector<Layer> layers;

    void ensure(int layer) {
        if (layer >= static_cast<int>(layers.size())) layers.resize(layer + 1);
    }
    std::uint64_t total() const {
        std::uint64_t t = 0;
        for (const auto& l : layers) t += l.total();
        return t;
    }
};

// Named parameter tensors of a model.
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Mat> values;

    int add(std::string name, Mat init) {
        names.push_back(std::move(name));
        values.push_back(std::move(init));
        return static_cast<int>(values.size()) - 1;
    }
    size_t size() const { return values.size(); }
};

// Reverse-mode tape over Mats. One Graph per forward pass; parameters are
// materialized as per-graph leaves so independent graphs can run and
// backpropagate concurrently against a shared ParamStore.
class Graph {
  public:
    kern::Exec exec = kern::Exec::Auto;

    // MAC attribution scope for forward matmuls (backward is not counted).
    OpCount* counter = nullptr;
    int scope_layer = -1;
    bool scope_self_attn_quadratic = false;

    void bind(const ParamStore* store);
    bool bound_to(const ParamStore* store) const { return params_ == store; }
    Var param(int id);  // cached leaf per id
    // Adds each touched parameter leaf's grad into acc[id] (lazily sized).
    void collect_param_grads(std::vector<Mat>& acc) const;

    Var leaf(Mat v);

    Var mm(const Var& a, bool ta, const Var& b, bool tb);
    Var add(const Var& a, const Var& b);
    Var add_row(const Var& a, const Var& bias);  // bias 1 x cols, broadcast
    Var scale(const Var& a, double s);
    Var relu(const Var& a);
    Var sigmoid(const Var& a);
    Var softmax_rows(const Var& a);
    Var layernorm_rows(const Var& a, const Var& gain, const Var& bias);
    Var slice_cols(const Var& a, int c0, int c1);
    Var concat_cols(const std::vector<Var>& parts);
    Var gather_rows(const Var& a, std::vector<int> rows);
    // wide N x (reps*c) plus narrow N x c tiled reps times.
    Var tile_add(const Var& wide, const Var& narrow, int reps);

    // Runs backward over the tape in reverse creation order. Callers seed the
    // grads of whichever outputs they care about first.
    void backward();

    size_t tape_size() const { return tape_.size(); }

  private:
    std::vector<Var> tape_;
    const ParamStore* params_ = nullptr;
    std::vector<Var> param_cache_;

    Var make(Mat v, std::function<void()> back);
    void count(std::uint64_t macs);
};

constexpr double kLayerNormEps = 1e-5;

}  // namespace rdet::nn
