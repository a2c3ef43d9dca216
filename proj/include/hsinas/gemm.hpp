#pragma once

#include <cblas.h>

#include <cstddef>

#include "hsinas/common.hpp"

// Row-major matrix products tuned for the shapes convolution produces here:
// very tall A (one row per output voxel), small K and N (kernel taps, channels).
// OpenBLAS packing overhead dominates in that regime, so for float and a fixed
// set of N values a direct register-blocked kernel is used instead; everything
// else (double precision, odd N, transposed contractions) goes through cblas.

namespace hsinas {

namespace gemmdetail {

template <int N, int R, bool ACC>
void fixed_n_rows(i64 m_count, i64 k, const float* __restrict a, const float* __restrict b,
                  float* __restrict c) {
  i64 m = 0;
  for (; m + R <= m_count; m += R) {
    float acc[R][N] = {};
    const float* ar[R];
    for (int r = 0; r < R; r++) ar[r] = a + size_t(m + r) * k;
    for (i64 kk = 0; kk < k; kk++) {
      const float* bk = b + size_t(kk) * N;
      for (int r = 0; r < R; r++) {
        float v = ar[r][kk];
#pragma GCC ivdep
        for (int n = 0; n < N; n++) acc[r][n] += v * bk[n];
      }
    }
    for (int r = 0; r < R; r++) {
      float* cr = c + size_t(m + r) * N;
      if constexpr (ACC)
        for (int n = 0; n < N; n++) cr[n] += acc[r][n];
      else
        for (int n = 0; n < N; n++) cr[n] = acc[r][n];
    }
  }
  for (; m < m_count; m++) {
    float acc[N] = {};
    const float* am = a + size_t(m) * k;
    for (i64 kk = 0; kk < k; kk++) {
      float v = am[kk];
      const float* bk = b + size_t(kk) * N;
      for (int n = 0; n < N; n++) acc[n] += v * bk[n];
    }
    float* cm = c + size_t(m) * N;
    if constexpr (ACC)
      for (int n = 0; n < N; n++) cm[n] += acc[n];
    else
      for (int n = 0; n < N; n++) cm[n] = acc[n];
  }
}

// Narrow outputs need more parallel accumulator rows to fill the FMA pipes.
template <int N, bool ACC>
void fixed_n(i64 m, i64 k, const float* a, const float* b, float* c) {
  if constexpr (N <= 8)
    fixed_n_rows<N, 16, ACC>(m, k, a, b, c);
  else if constexpr (N == 12)
    fixed_n_rows<N, 8, ACC>(m, k, a, b, c);
  else
    fixed_n_rows<N, 4, ACC>(m, k, a, b, c);
}

template <bool ACC>
bool dispatch_fixed_n(i64 m, i64 n, i64 k, const float* a, const float* b, float* c) {
  switch (n) {
    case 4: fixed_n<4, ACC>(m, k, a, b, c); return true;
    case 8: fixed_n<8, ACC>(m, k, a, b, c); return true;
    case 12: fixed_n<12, ACC>(m, k, a, b, c); return true;
    case 16: fixed_n<16, ACC>(m, k, a, b, c); return true;
    case 24: fixed_n<24, ACC>(m, k, a, b, c); return true;
    case 32: fixed_n<32, ACC>(m, k, a, b, c); return true;
    case 36: fixed_n<36, ACC>(m, k, a, b, c); return true;
    case 40: fixed_n<40, ACC>(m, k, a, b, c); return true;
    case 48: fixed_n<48, ACC>(m, k, a, b, c); return true;
    case 64: fixed_n<64, ACC>(m, k, a, b, c); return true;
    case 72: fixed_n<72, ACC>(m, k, a, b, c); return true;
    case 80: fixed_n<80, ACC>(m, k, a, b, c); return true;
    case 96: fixed_n<96, ACC>(m, k, a, b, c); return true;
    case 128: fixed_n<128, ACC>(m, k, a, b, c); return true;
    default: return false;
  }
}

}  // namespace gemmdetail

// C[m x n] = (or +=) A[m x k] * B[k x n], all packed row-major.
inline void gemm(i64 m, i64 n, i64 k, const float* a, const float* b, float* c, bool acc) {
  if (m == 0 || n == 0 || k == 0) return;
  if (m >= 64) {
    bool hit = acc ? gemmdetail::dispatch_fixed_n<true>(m, n, k, a, b, c)
                   : gemmdetail::dispatch_fixed_n<false>(m, n, k, a, b, c);
    if (hit) return;
  }
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0f, a, int(k), b,
              int(n), acc ? 1.0f : 0.0f, c, int(n));
}

inline void gemm(i64 m, i64 n, i64 k, const double* a, const double* b, double* c, bool acc) {
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(k), b,
              int(n), acc ? 1.0 : 0.0, c, int(n));
}

// C[m x n] += A^T * B with A[k x m], B[k x n]: the long contraction over k
// (one summand per output voxel) used for kernel gradients.
inline void gemm_at_b_acc(i64 m, i64 n, i64 k, const float* a, const float* b, float* c) {
  if (m == 0 || n == 0 || k == 0) return;
  cblas_sgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(m), int(n), int(k), 1.0f, a, int(m), b,
              int(n), 1.0f, c, int(n));
}

inline void gemm_at_b_acc(i64 m, i64 n, i64 k, const double* a, const double* b, double* c) {
  if (m == 0 || n == 0 || k == 0) return;
  cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, int(m), int(n), int(k), 1.0, a, int(m), b,
              int(n), 1.0, c, int(n));
}

}  // namespace hsinas
