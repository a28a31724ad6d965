// Serial-vs-OpenMP timings for the data-parallel kernels: the dense matmul
// behind the decoder and pairwise cost-matrix construction. Run: rdet_bench
// [repeats]

#include <chrono>
#include <cstdio>
#include <string>
#include <vector>

#include "rdet/kernels.hpp"
#include "rdet/matching.hpp"
#include "rdet/rng.hpp"

using namespace rdet;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

nn::Mat random_mat(Rng& rng, int r, int c) {
    nn::Mat m(r, c);
    for (double& v : m.d) v = rng.uniform(-1.0, 1.0);
    return m;
}

void bench_matmul(int m, int k, int n, int repeats) {
    Rng rng(7);
    const nn::Mat a = random_mat(rng, m, k);
    const nn::Mat b = random_mat(rng, k, n);
    nn::Mat c;
    kern::matmul_serial(a, false, b, false, c);  // warm up + allocate

    auto t0 = Clock::now();
    for (int r = 0; r < repeats; ++r) kern::matmul_serial(a, false, b, false, c);
    const double ts = seconds_since(t0) / repeats;

    t0 = Clock::now();
    for (int r = 0; r < repeats; ++r) kern::matmul_parallel(a, false, b, false, c);
    const double tp = seconds_since(t0) / repeats;

    const double gmacs = 1e-9 * m * k * n;
    std::printf("matmul %4dx%4dx%4d  serial %8.3f ms (%6.2f GMAC/s)  omp %8.3f ms (%6.2f GMAC/s)  speedup %.2fx\n",
                m, k, n, 1e3 * ts, gmacs / ts, 1e3 * tp, gmacs / tp, ts / tp);
}

void bench_cost_matrix(int queries, int targets, int repeats) {
    Rng rng(11);
    std::vector<loss::ClassLogits> logits(queries);
    std::vector<geom::PointSet> points(queries);
    for (int i = 0; i < queries; ++i) {
        logits[i] = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
        for (int p = 0; p < 9; ++p)
            points[i].push_back(geom::Point2{rng.uniform(), rng.uniform()});
    }
    std::vector<loss::Target> tgts(targets);
    for (int j = 0; j < targets; ++j) {
        tgts[j].cls = j % 3;
        tgts[j].box = geom::RotatedBox{rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8),
                                       rng.uniform(0.1, 0.3), rng.uniform(0.05, 0.1),
                                       rng.uniform(-1.5, 1.5)};
    }
    loss::LossWeights w;

    auto run = [&](kern::Exec exec) {
        const auto t0 = Clock::now();
        for (int r = 0; r < repeats; ++r)
            (void)match::matching_cost(logits, points, tgts, w, 1.0, exec);
        return seconds_since(t0) / repeats;
    };
    const double ts = run(kern::Exec::Serial);
    const double tp = run(kern::Exec::Parallel);
    std::printf("cost_matrix %4d x %3d      serial %8.3f ms               omp %8.3f ms               speedup %.2fx\n",
                queries, targets, 1e3 * ts, 1e3 * tp, ts / tp);
}

}  // namespace

int main(int argc, char** argv) {
    const int repeats = argc > 1 ? std::stoi(argv[1]) : 20;
    std::printf("threads: %d, repeats: %d\n", kern::max_threads(), repeats);
    bench_matmul(60, 64, 64, repeats * 10);
    bench_matmul(256, 64, 64, repeats * 5);
    bench_matmul(256, 256, 256, repeats);
    bench_matmul(512, 512, 512, std::max(1, repeats / 4));
    bench_cost_matrix(60, 8, repeats);
    bench_cost_matrix(300, 16, std::max(1, repeats / 4));
    return 0;
}
