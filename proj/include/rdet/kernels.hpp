#pragma once

#include <cstdint>

#include "rdet/mat.hpp"

namespace rdet::kern {

// Execution policy for the data-parallel kernels. Serial is the reference
// implementation; Parallel uses OpenMP threads; Auto picks by problem size.
// Both produce bitwise-identical results: every output element is reduced
// sequentially by exactly one thread.
enum class Exec { Serial, Parallel, Auto };

// C = op(A) * op(B), op(X) = X or X^T per the transpose flags.
// macs, when non-null, is incremented by m*n*k multiply-adds.
void matmul(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c,
            Exec exec = Exec::Auto, std::uint64_t* macs = nullptr);

void matmul_serial(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c);
void matmul_parallel(const nn::Mat& a, bool ta, const nn::Mat& b, bool tb, nn::Mat& c);

// Work threshold (in multiply-adds) above which Auto dispatches to Parallel.
// Below ~2M MACs the fork/join overhead eats the gain (see rdet_bench).
inline constexpr std::uint64_t kParallelMacThreshold = 1u << 21;

int max_threads();

}  // namespace rdet::kern
