#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "numvae/util.hpp"

namespace numvae {

template <typename T>
using MatMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// GEMM helpers over row-major buffers. Work is split across contiguous
// row blocks of the output; every output element is a single
// fixed-order contraction, so values are identical for any worker count.

namespace detail {
template <typename Fn>
void row_blocks(int64_t rows, Fn&& fn) {
  const int threads = max_threads();
  if (threads <= 1 || rows < 2 * threads) {
    fn(0, rows);
    return;
  }
  const int64_t block = (rows + threads - 1) / threads;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(threads)
#endif
  for (int t = 0; t < threads; ++t) {
    const int64_t r0 = t * block;
    const int64_t r1 = std::min(rows, r0 + block);
    if (r0 < r1) fn(r0, r1 - r0);
  }
}
}  // namespace detail

// C(M,N) = A(M,K) * B(K,N), optionally accumulating into C.
template <typename T>
void matmul(T* C, const T* A, const T* B, int64_t M, int64_t K, int64_t N,
            bool accumulate = false) {
  detail::row_blocks(M, [&](int64_t r0, int64_t rows) {
    ConstMatMap<T> a(A + r0 * K, rows, K);
    ConstMatMap<T> b(B, K, N);
    MatMap<T> c(C + r0 * N, rows, N);
    if (accumulate)
      c.noalias() += a * b;
    else
      c.noalias() = a * b;
  });
}

// C(M,N) = A(K,M)^T * B(K,N).
template <typename T>
void matmul_tA(T* C, const T* A, const T* B, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
  detail::row_blocks(M, [&](int64_t r0, int64_t rows) {
    ConstMatMap<T> a(A, K, M);
    ConstMatMap<T> b(B, K, N);
    MatMap<T> c(C + r0 * N, rows, N);
    if (accumulate)
      c.noalias() += a.middleCols(r0, rows).transpose() * b;
    else
      c.noalias() = a.middleCols(r0, rows).transpose() * b;
  });
}

// C(M,N) = A(M,K) * B(N,K)^T.
template <typename T>
void matmul_tB(T* C, const T* A, const T* B, int64_t M, int64_t K, int64_t N,
               bool accumulate = false) {
  detail::row_blocks(M, [&](int64_t r0, int64_t rows) {
    ConstMatMap<T> a(A + r0 * K, rows, K);
    ConstMatMap<T> b(B, N, K);
    MatMap<T> c(C + r0 * N, rows, N);
    if (accumulate)
      c.noalias() += a * b.transpose();
    else
      c.noalias() = a * b.transpose();
  });
}

}  // namespace numvae
