#pragma once

#include <cstddef>

// Dense double-precision kernels backing the model's forward and backward
// passes. All matrices are row-major. The parallel variants split work over
// output rows with disjoint writes and keep the per-row arithmetic order
// identical to the serial reference, so results are bit-equal regardless of
// thread count. kernels::serial holds the plain-loop reference used by the
// equivalence tests and the benchmark tool.
namespace dialcomp::kernels {

// C (m x n) = A (m x k) * B (k x n)
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// C += A * B
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
// C (m x n) = A (m x k) * B^T, with B stored n x k
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
// C (m x n) = A^T * B, with A stored k x m and B stored k x n
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

// In-place row-wise softmax with max subtraction.
void softmax_rows(double* x, int rows, int cols);
// Row-wise softmax over a causal window: in row i only columns
// j <= i + offset participate; the rest are set to zero.
void softmax_rows_causal(double* x, int rows, int cols, int offset);

int max_threads();

namespace serial {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);
void softmax_rows(double* x, int rows, int cols);
void softmax_rows_causal(double* x, int rows, int cols, int offset);
}  // namespace serial

}  // namespace dialcomp::kernels
