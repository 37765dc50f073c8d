#pragma once

#include <cstdint>

namespace flowvc::kern {

// Every kernel exists twice: a plain serial reference in kern::serial and an
// OpenMP variant in kern::par. The parallel variants partition work by output
// element and never share accumulators across threads, so both variants
// produce bit-identical results for any thread count; tests assert exact
// equality and tools/bench_kernels compares throughput.

// Runtime switch for the dispatching wrappers below. Parallel by default;
// set_parallel(false) or env FLOWVC_SERIAL=1 forces the reference path.
bool parallel_enabled();
void set_parallel(bool on);

namespace serial {

// c[m x n] = a[m x k] * b[k x n]   (+= when accumulate)
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate);
// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate);
// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate);

// y[t_out x c_out] from x[t_in x c_in], weights w[c_out x (kw*c_in)] laid out
// tap-major as w[o, j*c_in + i], zero padding on both sides (pad_left given,
// tail implied by t_out), bias optional.
void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t t_in,
            int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
            int64_t stride, int64_t pad_left);
// dx[t_in x c_in] += gather of dy[t_out x c_out] through w.
void conv1d_grad_input(const double* dy, const double* w, double* dx, int64_t t_in, int64_t c_in,
                       int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation, int64_t stride,
                       int64_t pad_left);
// dw[c_out x (kw*c_in)] +=, dbias[c_out] += column sums of dy.
void conv1d_grad_weight(const double* x, const double* dy, double* dw, double* dbias,
                        int64_t t_in, int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                        int64_t dilation, int64_t stride, int64_t pad_left);

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
// Row-wise layer norm without affine; mean/rstd are cached per row for the
// backward pass.
void layernorm_rows(const double* x, double* y, double* mean, double* rstd, int64_t rows,
                    int64_t cols, double eps);
void layernorm_rows_grad(const double* dy, const double* y, const double* rstd, double* dx,
                         int64_t rows, int64_t cols);

}  // namespace serial

namespace par {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate);
void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t t_in,
            int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
            int64_t stride, int64_t pad_left);
void conv1d_grad_input(const double* dy, const double* w, double* dx, int64_t t_in, int64_t c_in,
                       int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation, int64_t stride,
                       int64_t pad_left);
void conv1d_grad_weight(const double* x, const double* dy, double* dw, double* dbias,
                        int64_t t_in, int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                        int64_t dilation, int64_t stride, int64_t pad_left);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
void layernorm_rows(const double* x, double* y, double* mean, double* rstd, int64_t rows,
                    int64_t cols, double eps);
void layernorm_rows_grad(const double* dy, const double* y, const double* rstd, double* dx,
                         int64_t rows, int64_t cols);

}  // namespace par

// Dispatching wrappers used by the rest of the library.
void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate = false);
void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t t_in,
            int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
            int64_t stride, int64_t pad_left);
void conv1d_grad_input(const double* dy, const double* w, double* dx, int64_t t_in, int64_t c_in,
                       int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation, int64_t stride,
                       int64_t pad_left);
void conv1d_grad_weight(const double* x, const double* dy, double* dw, double* dbias,
                        int64_t t_in, int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                        int64_t dilation, int64_t stride, int64_t pad_left);
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols);
void layernorm_rows(const double* x, double* y, double* mean, double* rstd, int64_t rows,
                    int64_t cols, double eps);
void layernorm_rows_grad(const double* dy, const double* y, const double* rstd, double* dx,
                         int64_t rows, int64_t cols);

}  // namespace flowvc::kern
