#include "pavad/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace pavad::kernels {
namespace {

void check(const GemmShape& s, std::size_t a, std::size_t b, std::size_t c) {
  if (a < s.m * s.k || b < s.k * s.n || c < s.m * s.n) throw std::invalid_argument("gemm: buffer too small");
}

inline double a_at(const GemmShape& s, const double* a, std::size_t i, std::size_t p) {
  return s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
}

inline double b_at(const GemmShape& s, const double* b, std::size_t p, std::size_t j) {
  return s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
}

}  // namespace

void gemm_serial(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c,
                 bool accumulate) {
  check(s, a.size(), b.size(), c.size());
  for (std::size_t i = 0; i < s.m; ++i) {
    for (std::size_t j = 0; j < s.n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < s.k; ++p) acc += a_at(s, a.data(), i, p) * b_at(s, b.data(), p, j);
      c[i * s.n + j] = accumulate ? c[i * s.n + j] + acc : acc;
    }
  }
}

void gemm(const GemmShape& s, std::span<const double> a, std::span<const double> b, std::span<double> c,
          bool accumulate) {
  check(s, a.size(), b.size(), c.size());
  const double* A = a.data();
  const double* B = b.data();
  double* C = c.data();
  const long m = static_cast<long>(s.m);
  const bool big = s.m * s.n * s.k >= kParallelGemmWork;

  if (!s.trans_b) {
    // i-p-j order streams rows of B; per element the sum still runs p = 0..k-1.
#pragma omp parallel if (big)
    {
      std::vector<double> acc(s.n);
#pragma omp for schedule(static)
      for (long ii = 0; ii < m; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t p = 0; p < s.k; ++p) {
          const double av = a_at(s, A, i, p);
          const double* brow = B + p * s.n;
          for (std::size_t j = 0; j < s.n; ++j) acc[j] += av * brow[j];
        }
        double* crow = C + i * s.n;
        for (std::size_t j = 0; j < s.n; ++j) crow[j] = accumulate ? crow[j] + acc[j] : acc[j];
      }
    }
  } else {
#pragma omp parallel for schedule(static) if (big)
    for (long ii = 0; ii < m; ++ii) {
      const auto i = static_cast<std::size_t>(ii);
      for (std::size_t j = 0; j < s.n; ++j) {
        const double* brow = B + j * s.k;
        double acc = 0.0;
        for (std::size_t p = 0; p < s.k; ++p) acc += a_at(s, A, i, p) * brow[p];
        C[i * s.n + j] = accumulate ? C[i * s.n + j] + acc : acc;
      }
    }
  }
}

void row_dots_serial(std::span<const float> rows, std::size_t dim, std::span<const float> query,
                     std::span<double> out) {
  if (query.size() != dim || rows.size() != out.size() * dim) throw std::invalid_argument("row_dots: shape mismatch");
  for (std::size_t i = 0; i < out.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += static_cast<double>(rows[i * dim + j]) * query[j];
    out[i] = acc;
  }
}

void row_dots(std::span<const float> rows, std::size_t dim, std::span<const float> query, std::span<double> out) {
  if (query.size() != dim || rows.size() != out.size() * dim) throw std::invalid_argument("row_dots: shape mismatch");
  const long n = static_cast<long>(out.size());
#pragma omp parallel for schedule(static) if (out.size() * dim >= kParallelGemmWork)
  for (long ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const float* r = rows.data() + i * dim;
    double acc = 0.0;
    for (std::size_t j = 0; j < dim; ++j) acc += static_cast<double>(r[j]) * query[j];
    out[i] = acc;
  }
}

}  // namespace pavad::kernels
