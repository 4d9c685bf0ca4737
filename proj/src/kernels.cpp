#include "dialcomp/kernels.hpp"

#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dialcomp::kernels {

namespace {

inline void matmul_row(const double* a, const double* b, double* c, int k, int n,
                       bool accumulate) {
  if (!accumulate) {
    for (int j = 0; j < n; ++j) c[j] = 0.0;
  }
  for (int p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int k, int n,
                          bool accumulate) {
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<size_t>(j) * k;
    double s = 0.0;
    for (int p = 0; p < k; ++p) s += a[p] * brow[p];
    c[j] = accumulate ? c[j] + s : s;
  }
}

// Output row i of A^T * B is a k-weighted combination of B's rows using
// column i of A.
inline void matmul_tn_row(const double* a, const double* b, double* c, int i, int m,
                          int k, int n, bool accumulate) {
  if (!accumulate) {
    for (int j = 0; j < n; ++j) c[j] = 0.0;
  }
  for (int p = 0; p < k; ++p) {
    const double av = a[static_cast<size_t>(p) * m + i];
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void softmax_row(double* row, int lo, int hi, int cols) {
  double mx = row[lo];
  for (int j = lo; j < hi; ++j) mx = row[j] > mx ? row[j] : mx;
  double sum = 0.0;
  for (int j = lo; j < hi; ++j) {
    row[j] = std::exp(row[j] - mx);
    sum += row[j];
  }
  const double inv = 1.0 / sum;
  for (int j = lo; j < hi; ++j) row[j] *= inv;
  for (int j = 0; j < lo; ++j) row[j] = 0.0;
  for (int j = hi; j < cols; ++j) row[j] = 0.0;
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, false);
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, true);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, false);
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, true);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<size_t>(i) * n, i, m, k, n, false);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<size_t>(i) * n, i, m, k, n, true);
}

void softmax_rows(double* x, int rows, int cols) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i) softmax_row(x + static_cast<size_t>(i) * cols, 0, cols, cols);
}

void softmax_rows_causal(double* x, int rows, int cols, int offset) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < rows; ++i) {
    int hi = i + offset + 1;
    if (hi > cols) hi = cols;
    if (hi < 1) hi = 1;
    softmax_row(x + static_cast<size_t>(i) * cols, 0, hi, cols);
  }
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, false);
}

void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, true);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, false);
}

void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<size_t>(i) * k, b, c + static_cast<size_t>(i) * n, k, n, true);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<size_t>(i) * n, i, m, k, n, false);
}

void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    matmul_tn_row(a, b, c + static_cast<size_t>(i) * n, i, m, k, n, true);
}

void softmax_rows(double* x, int rows, int cols) {
  for (int i = 0; i < rows; ++i) softmax_row(x + static_cast<size_t>(i) * cols, 0, cols, cols);
}

void softmax_rows_causal(double* x, int rows, int cols, int offset) {
  for (int i = 0; i < rows; ++i) {
    int hi = i + offset + 1;
    if (hi > cols) hi = cols;
    if (hi < 1) hi = 1;
    softmax_row(x + static_cast<size_t>(i) * cols, 0, hi, cols);
  }
}

}  // namespace serial

}  // namespace dialcomp::kernels
