#pragma once

#include <cstddef>

#include <Eigen/Core>

// Row-major GEMM kernels backing the convolutions. float goes through Eigen;
// double uses plain loops so every output sums its terms in k order, which
// keeps f64 results identical to a nested-loop reference.

namespace cascade::autonet::detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

// C(MxN) = A(MxK) * B(KxN)
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) {
    MMap<T>(c, m, n).noalias() = CMap<T>(a, m, k) * CMap<T>(b, k, n);
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] = T{0};
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        const T* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

// C(MxN) += A(MxK) * B(NxK)^T
template <class T>
void gemm_nt_acc(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) {
    MMap<T>(c, m, n).noalias() += CMap<T>(a, m, k) * CMap<T>(b, n, k).transpose();
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T acc = c[i * n + j];
        const T* arow = a + i * k;
        const T* brow = b + j * k;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] = acc;
      }
    }
  }
}

// C(MxN) = A(KxM)^T * B(KxN)
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  if constexpr (std::is_same_v<T, float>) {
    MMap<T>(c, m, n).noalias() = CMap<T>(a, k, m).transpose() * CMap<T>(b, k, n);
  } else {
    for (std::size_t idx = 0; idx < m * n; ++idx) c[idx] = T{0};
    for (std::size_t p = 0; p < k; ++p) {
      const T* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T av = a[p * m + i];
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

}  // namespace cascade::autonet::detail
