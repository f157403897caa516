#pragma once

#include <cstdint>
#include <cstring>
#include <vector>

namespace smrnet {

// Small dense GEMM kernels, row-major. Loop orders are chosen so the innermost
// loop runs over contiguous memory and auto-vectorizes.

// C[M,N] (+)= A[M,K] * B[K,N]
template <class T>
void gemm_nn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  if (!accumulate) std::memset(C, 0, sizeof(T) * static_cast<size_t>(M * N));
  for (int64_t m = 0; m < M; ++m) {
    const T* a_row = A + m * K;
    T* c_row = C + m * N;
    for (int64_t k = 0; k < K; ++k) {
      const T a = a_row[k];
      if (a == T(0)) continue;
      const T* b_row = B + k * N;
      for (int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
    }
  }
}

// C[M,N] (+)= A[M,K] * B^T where B is [N,K]. Materializes B^T so the kernel
// runs in the vectorizable saxpy form; the transpose is O(N*K) against the
// O(M*N*K) multiply.
template <class T>
void gemm_nt(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  std::vector<T> bt(static_cast<size_t>(K * N));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k) bt[static_cast<size_t>(k * N + n)] = B[n * K + k];
  gemm_nn(M, N, K, A, bt.data(), C, accumulate);
}

// C[M,N] (+)= A^T * B where A is [K,M], B is [K,N]
template <class T>
void gemm_tn(int64_t M, int64_t N, int64_t K, const T* A, const T* B, T* C,
             bool accumulate) {
  if (!accumulate) std::memset(C, 0, sizeof(T) * static_cast<size_t>(M * N));
  for (int64_t k = 0; k < K; ++k) {
    const T* a_row = A + k * M;
    const T* b_row = B + k * N;
    for (int64_t m = 0; m < M; ++m) {
      const T a = a_row[m];
      if (a == T(0)) continue;
      T* c_row = C + m * N;
      for (int64_t n = 0; n < N; ++n) c_row[n] += a * b_row[n];
    }
  }
}

}  // namespace smrnet
