#pragma once

#include <cstddef>
#include <span>

// Dense inner loops. Each parallel kernel has a plain serial twin kept as the
// reference for tests and benchmarks; both accumulate every output element in
// the same order, so results are bitwise identical.
namespace pavad::kernels {

struct GemmShape {
  std::size_t m = 0;  // rows of op(A) and C
  std::size_t n = 0;  // cols of op(B) and C
  std::size_t k = 0;  // inner dimension
  bool trans_a = false;
  bool trans_b = false;
};

// C = op(A) * op(B), or C += op(A) * op(B) when accumulate is set.
// A is stored row-major as (trans_a ? k x m : m x k); B as (trans_b ? n x k : k x n).
void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate = false);
void gemm_serial(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c,
                 bool accumulate = false);

// out[i] = <rows[i, :], query> for a row-major (n x dim) float block.
void row_dots(std::span<const float> rows, std::size_t dim, std::span<const float> query, std::span<double> out);
void row_dots_serial(std::span<const float> rows, std::size_t dim, std::span<const float> query,
                     std::span<double> out);

// Work (m*n*k) below which gemm stays on the calling thread.
inline constexpr std::size_t kParallelGemmWork = 1u << 16;

}  // namespace pavad::kernels
