#pragma once

#include <cstddef>

// Dense double-precision kernels behind the tensor ops.
//
// Every kernel exists twice: a plain serial reference under kernels::serial
// and a dispatching wrapper under kernels:: that runs the same per-row code
// across OpenMP threads when that pays off. Both paths share the row
// routines, so for each output element the reduction order is identical and
// results are bit-for-bit equal regardless of thread count.
//
// Matrix arguments are row-major with no padding.

namespace graphnav::kernels {

// Upper bound on threads used by the dispatching wrappers. Defaults to the
// OpenMP limit (1 when built without OpenMP). Setting 1 forces serial.
int max_threads();
void set_max_threads(int n);

// True when the dispatching wrappers may actually fan out.
bool parallel_available();

namespace serial {

// C[m x n] = A[m x k] * B[k x n]
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C[m x n] += A[m x k] * B[k x n]
void matmul_nn_acc(const double* a, const double* b, double* c, int m, int k, int n);
// C[m x n] = A[m x k] * B[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
// C[m x n] = A[k x m]^T * B[k x n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

void gelu_forward(const double* x, double* y, size_t n);
// dx += dgelu(x) * dy
void gelu_backward_acc(const double* x, const double* dy, double* dx, size_t n);

}  // namespace serial

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nn_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt_acc(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn_acc(const double* a, const double* b, double* c, int m, int k, int n);

void gelu_forward(const double* x, double* y, size_t n);
void gelu_backward_acc(const double* x, const double* dy, double* dx, size_t n);

}  // namespace graphnav::kernels
