#pragma once

#include <cassert>
#include <cstdint>
#include <vector>

namespace rdet::nn {

// Dense row-major matrix of doubles. The only tensor type used by the model.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, std::vector<double> data) : rows(r), cols(c), d(std::move(data)) {
        assert(static_cast<size_t>(r) * c == d.size());
    }

    double& at(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }
    double* row(int r) { return d.data() + static_cast<size_t>(r) * cols; }
    const double* row(int r) const { return d.data() + static_cast<size_t>(r) * cols; }
    size_t size() const { return d.size(); }
    bool empty() const { return d.empty(); }
    void zero() { std::fill(d.begin(), d.end(), 0.0); }
};

}  // namespace rdet::nn
