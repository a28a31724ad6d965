#include "rdet/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace rdet::nn {

namespace {

void add_into(Mat& dst, const Mat& src) {
    for (size_t i = 0; i < dst.d.size(); ++i) dst.d[i] += src.d[i];
}

}  // namespace

void Graph::bind(const ParamStore* store) {
    params_ = store;
    param_cache_.assign(store->size(), nullptr);
}

Var Graph::param(int id) {
    if (!params_) throw std::logic_error("Graph::param: no ParamStore bound");
    if (!param_cache_[id]) {
        auto node = std::make_shared<Node>();
        node->val = params_->values[id];
        node->grad = Mat(node->val.rows, node->val.cols);
        param_cache_[id] = node;
        tape_.push_back(node);
    }
    return param_cache_[id];
}

void Graph::collect_param_grads(std::vector<Mat>& acc) const {
    if (!params_) return;
    if (acc.size() < params_->size()) acc.resize(params_->size());
    for (size_t id = 0; id < param_cache_.size(); ++id) {
        if (!param_cache_[id]) continue;
        const Mat& g = param_cache_[id]->grad;
        if (acc[id].empty()) acc[id] = Mat(g.rows, g.cols);
        add_into(acc[id], g);
    }
}

Var Graph::leaf(Mat v) {
    auto node = std::make_shared<Node>();
    node->grad = Mat(v.rows, v.cols);
    node->val = std::move(v);
    tape_.push_back(node);
    return node;
}

Var Graph::make(Mat v, std::function<void()> back) {
    auto node = std::make_shared<Node>();
    node->grad = Mat(v.rows, v.cols);
    node->val = std::move(v);
    node->back = std::move(back);
    tape_.push_back(node);
    return node;
}

void Graph::count(std::uint64_t macs) {
    if (!counter || scope_layer < 0) return;
    counter->ensure(scope_layer);
    auto& l = counter->layers[scope_layer];
    if (scope_self_attn_quadratic)
        l.self_attn_quadratic += macs;
    else
        l.other += macs;
}

Var Graph::mm(const Var& a, bool ta, const Var& b, bool tb) {
    Mat c;
    std::uint64_t macs = 0;
    kern::matmul(a->val, ta, b->val, tb, c, exec, &macs);
    count(macs);
    const kern::Exec ex = exec;
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, ta, b, tb, o, ex]() {
        Mat tmp;
        if (!ta) {  // dA += dC * op(B)^T
            kern::matmul(o->grad, false, b->val, !tb, tmp, ex);
            add_into(a->grad, tmp);
        } else {  // dA += op(B) * dC^T
            kern::matmul(b->val, tb, o->grad, true, tmp, ex);
            add_into(a->grad, tmp);
        }
        if (!tb) {  // dB += op(A)^T * dC
            kern::matmul(a->val, !ta, o->grad, false, tmp, ex);
            add_into(b->grad, tmp);
        } else {  // dB += dC^T * op(A)
            kern::matmul(o->grad, true, a->val, ta, tmp, ex);
            add_into(b->grad, tmp);
        }
    };
    return out;
}

Var Graph::add(const Var& a, const Var& b) {
    if (a->val.rows != b->val.rows || a->val.cols != b->val.cols)
        throw std::invalid_argument("add: shape mismatch");
    Mat c = a->val;
    add_into(c, b->val);
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, b, o]() {
        add_into(a->grad, o->grad);
        add_into(b->grad, o->grad);
    };
    return out;
}

Var Graph::add_row(const Var& a, const Var& bias) {
    if (bias->val.rows != 1 || bias->val.cols != a->val.cols)
        throw std::invalid_argument("add_row: bias shape mismatch");
    Mat c = a->val;
    for (int i = 0; i < c.rows; ++i) {
        double* row = c.row(i);
        for (int j = 0; j < c.cols; ++j) row[j] += bias->val.d[j];
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, bias, o]() {
        add_into(a->grad, o->grad);
        for (int i = 0; i < o->grad.rows; ++i) {
            const double* row = o->grad.row(i);
            for (int j = 0; j < o->grad.cols; ++j) bias->grad.d[j] += row[j];
        }
    };
    return out;
}

Var Graph::scale(const Var& a, double s) {
    Mat c = a->val;
    for (double& v : c.d) v *= s;
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, s, o]() {
        for (size_t i = 0; i < a->grad.d.size(); ++i) a->grad.d[i] += s * o->grad.d[i];
    };
    return out;
}

Var Graph::relu(const Var& a) {
    Mat c = a->val;
    for (double& v : c.d) v = v > 0.0 ? v : 0.0;
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, o]() {
        for (size_t i = 0; i < a->grad.d.size(); ++i)
            if (a->val.d[i] > 0.0) a->grad.d[i] += o->grad.d[i];
    };
    return out;
}

Var Graph::sigmoid(const Var& a) {
    Mat c = a->val;
    for (double& v : c.d) {
        if (v >= 0.0) {
            v = 1.0 / (1.0 + std::exp(-v));
        } else {
            const double e = std::exp(v);
            v = e / (1.0 + e);
        }
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, o]() {
        for (size_t i = 0; i < a->grad.d.size(); ++i) {
            const double y = o->val.d[i];
            a->grad.d[i] += o->grad.d[i] * y * (1.0 - y);
        }
    };
    return out;
}

Var Graph::softmax_rows(const Var& a) {
    Mat c = a->val;
    for (int i = 0; i < c.rows; ++i) {
        double* row = c.row(i);
        double mx = row[0];
        for (int j = 1; j < c.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < c.cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (int j = 0; j < c.cols; ++j) row[j] /= sum;
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, o]() {
        for (int i = 0; i < o->val.rows; ++i) {
            const double* y = o->val.row(i);
            const double* dy = o->grad.row(i);
            double dot = 0.0;
            for (int j = 0; j < o->val.cols; ++j) dot += y[j] * dy[j];
            double* dx = a->grad.row(i);
            for (int j = 0; j < o->val.cols; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    };
    return out;
}

Var Graph::layernorm_rows(const Var& a, const Var& gain, const Var& bias) {
    const int rows = a->val.rows, cols = a->val.cols;
    if (gain->val.cols != cols || bias->val.cols != cols)
        throw std::invalid_argument("layernorm_rows: affine shape mismatch");
    Mat c(rows, cols);
    auto xhat = std::make_shared<Mat>(rows, cols);
    auto inv_sigma = std::make_shared<std::vector<double>>(rows);
    for (int i = 0; i < rows; ++i) {
        const double* x = a->val.row(i);
        double mu = 0.0;
        for (int j = 0; j < cols; ++j) mu += x[j];
        mu /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= cols;
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_sigma)[i] = is;
        double* xh = xhat->row(i);
        double* y = c.row(i);
        for (int j = 0; j < cols; ++j) {
            xh[j] = (x[j] - mu) * is;
            y[j] = xh[j] * gain->val.d[j] + bias->val.d[j];
        }
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, gain, bias, o, xhat, inv_sigma]() {
        const int rows = o->val.rows, cols = o->val.cols;
        for (int i = 0; i < rows; ++i) {
            const double* dy = o->grad.row(i);
            const double* xh = xhat->row(i);
            double mean_dxh = 0.0, mean_dxh_xh = 0.0;
            for (int j = 0; j < cols; ++j) {
                const double dxh = dy[j] * gain->val.d[j];
                mean_dxh += dxh;
                mean_dxh_xh += dxh * xh[j];
                gain->grad.d[j] += dy[j] * xh[j];
                bias->grad.d[j] += dy[j];
            }
            mean_dxh /= cols;
            mean_dxh_xh /= cols;
            double* dx = a->grad.row(i);
            const double is = (*inv_sigma)[i];
            for (int j = 0; j < cols; ++j) {
                const double dxh = dy[j] * gain->val.d[j];
                dx[j] += is * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
            }
        }
    };
    return out;
}

Var Graph::slice_cols(const Var& a, int c0, int c1) {
    const int rows = a->val.rows, cols = c1 - c0;
    Mat c(rows, cols);
    for (int i = 0; i < rows; ++i) {
        const double* src = a->val.row(i);
        double* dst = c.row(i);
        for (int j = 0; j < cols; ++j) dst[j] = src[c0 + j];
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    out->back = [a, c0, o]() {
        for (int i = 0; i < o->grad.rows; ++i) {
            const double* src = o->grad.row(i);
            double* dst = a->grad.row(i);
            for (int j = 0; j < o->grad.cols; ++j) dst[c0 + j] += src[j];
        }
    };
    return out;
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    const int rows = parts[0]->val.rows;
    int cols = 0;
    for (const auto& p : parts) {
        if (p->val.rows != rows) throw std::invalid_argument("concat_cols: row mismatch");
        cols += p->val.cols;
    }
    Mat c(rows, cols);
    int off = 0;
    for (const auto& p : parts) {
        for (int i = 0; i < rows; ++i) {
            const double* src = p->val.row(i);
            double* dst = c.row(i) + off;
            for (int j = 0; j < p->val.cols; ++j) dst[j] = src[j];
        }
        off += p->val.cols;
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    auto ps = parts;
    out->back = [ps, o]() {
        int off = 0;
        for (const auto& p : ps) {
            for (int i = 0; i < o->grad.rows; ++i) {
                const double* src = o->grad.row(i) + off;
                double* dst = p->grad.row(i);
                for (int j = 0; j < p->val.cols; ++j) dst[j] += src[j];
            }
            off += p->val.cols;
        }
    };
    return out;
}

Var Graph::gather_rows(const Var& a, std::vector<int> rows) {
    Mat c(static_cast<int>(rows.size()), a->val.cols);
    for (size_t r = 0; r < rows.size(); ++r) {
        const double* src = a->val.row(rows[r]);
        double* dst = c.row(static_cast<int>(r));
        for (int j = 0; j < a->val.cols; ++j) dst[j] = src[j];
    }
    auto out = make(std::move(c), nullptr);
    Node* o = out.get();
    auto idx = std::move(rows);
    out->back = [a, idx, o]() {
        for (size_t r = 0; r < idx.size(); ++r) {
            const double* src = o->grad.row(static_cast<int>(r));
            double* dst = a->grad.row(idx[r]);
            for (int j = 0; j < o->grad.cols; ++j) dst[j] += src[j];
        }
    };
    return out;
}

Var Graph::tile_add(const Var& wide, const Var& narrow, int reps) {
    const int rows = wide->val.rows, c = narrow->val.cols;
    if (narrow->val.rows != rows || wide->val.cols != reps * c)
        throw std::invalid_argument("tile_add: shape mismatch");
    Mat out_m = wide->val;
    for (int i = 0; i < rows; ++i) {
        double* dst = out_m.row(i);
        const double* nv = narrow->val.row(i);
        for (int r = 0; r < reps; ++r)
            for (int j = 0; j < c; ++j) dst[r * c + j] += nv[j];
    }
    auto out = make(std::move(out_m), nullptr);
    Node* o = out.get();
    out->back = [wide, narrow, reps, c, o]() {
        add_into(wide->grad, o->grad);
        for (int i = 0; i < o->grad.rows; ++i) {
            const double* src = o->grad.row(i);
            double* dst = narrow->grad.row(i);
            for (int r = 0; r < reps; ++r)
                for (int j = 0; j < c; ++j) dst[j] += src[r * c + j];
        }
    };
    return out;
}

void Graph::backward() {
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
        if ((*it)->back) (*it)->back();
    }
}

}  // namespace rdet::nn
