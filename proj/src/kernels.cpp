#include "rdet/kernels.hpp"

#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rdet::kern {

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace {

inline void check_shapes(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c) {
    const int m = ta ? a.cols : a.rows;
    const int k = ta ? a.rows : a.cols;
    const int kb = tb ? b.cols : b.rows;
    const int n = tb ? b.rows : b.cols;
    if (k != kb) throw std::invalid_argument("matmul: inner dimensions do not match");
    if (c.rows != m || c.cols != n) {
        c = nn::Mat(m, n);
    }
}

// One output row of C = op(A)*op(B). Sequential over k so the result does not
// depend on thread count.
inline void matmul_row(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c, int i) {
    const int n = c.cols;
    const int k = ta ? a.rows : a.cols;
    double* crow = c.row(i);
    for (int j = 0; j < n; ++j) crow[j] = 0.0;
    if (!ta && !tb) {
        const double* arow = a.row(i);
        for (int l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b.row(l);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else if (!ta && tb) {
        const double* arow = a.row(i);
        for (int j = 0; j < n; ++j) {
            const double* brow = b.row(j);
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
            crow[j] = s;
        }
    } else if (ta && !tb) {
        for (int l = 0; l < k; ++l) {
            const double av = a.at(l, i);
            const double* brow = b.row(l);
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    } else {
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += a.at(l, i) * b.at(j, l);
            crow[j] = s;
        }
    }
}

}  // namespace

void matmul_serial(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c) {
    check_shapes(a, ta, b, tb, c);
    for (int i = 0; i < c.rows; ++i) matmul_row(a, ta, b, tb, c, i);
}

void matmul_parallel(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c) {
    check_shapes(a, ta, b, tb, c);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < c.rows; ++i) matmul_row(a, ta, b, tb, c, i);
}

void matmul(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c, Exec exec,
            std::uint64_t* macs) {
    const std::uint64_t m = ta ? a.cols : a.rows;
    const std::uint64_t k = ta ? a.rows : a.cols;
    const std::uint64_t n = tb ? b.rows : b.cols;
    const std::uint64_t work = m * n * k;
    if (macs) *macs += work;
    const bool parallel =
        exec == Exec::Parallel || (exec == Exec::Auto && work >= kParallelMacThreshold);
    if (parallel) {
        matmul_parallel(a, ta, b, tb, c);
    } else {
        matmul_serial(a, ta, b, tb, c);
    }
}

}  // namespace rdet::kern
