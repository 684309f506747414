#pragma once

#include <cstddef>

// Row-major accumulate-into kernels. Loop order keeps the innermost loop
// contiguous; reductions use a fixed order so results are reproducible.

namespace fontcnn::nn::gemm {

/// C[m x n] += A[m x k] * B[k x n]
template <typename T>
void nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
        T* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      if (av == T(0)) continue;
      const T* bp = b + p * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

/// C[m x n] += A[m x k] * B[n x k]^T
template <typename T>
void nt(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
        T* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
#pragma omp simd reduction(+ : acc)
      for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      c[i * n + j] += acc;
    }
  }
}

/// C[m x n] += A[k x m]^T * B[k x n]
template <typename T>
void tn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a, const T* __restrict b,
        T* __restrict c) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = a[p * m + i];
      if (av == T(0)) continue;
      T* ci = c + i * n;
#pragma omp simd
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace fontcnn::nn::gemm
