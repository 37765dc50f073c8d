#include "flowvc/kernels.hpp"

#include <cmath>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace flowvc::kern {

namespace {
bool read_env_default() {
    const char* s = std::getenv("FLOWVC_SERIAL");
    return !(s != nullptr && s[0] == '1');
}
bool g_parallel = read_env_default();
}  // namespace

bool parallel_enabled() { return g_parallel; }
void set_parallel(bool on) { g_parallel = on; }

// ---------------------------------------------------------------------------
// Shared element-level routines. Both variants call these per output row so
// the arithmetic (and therefore the rounding) is identical; the parallel
// variants only change which thread owns which row.

namespace {

inline void matmul_row(const double* a, const double* b, double* c, int64_t k, int64_t n,
                       bool accumulate) {
    if (!accumulate)
        for (int64_t j = 0; j < n; ++j) c[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
        const double av = a[p];
        const double* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, int64_t k, int64_t n,
                          bool accumulate) {
    for (int64_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (int64_t p = 0; p < k; ++p) acc += a[p] * brow[p];
        c[j] = accumulate ? c[j] + acc : acc;
    }
}

// Row i of c = a^T b, i.e. c[i,:] = sum_p a[p,i] * b[p,:].
inline void matmul_tn_row(const double* a, const double* b, double* c, int64_t i, int64_t m,
                          int64_t k, int64_t n, bool accumulate) {
    if (!accumulate)
        for (int64_t j = 0; j < n; ++j) c[j] = 0.0;
    for (int64_t p = 0; p < k; ++p) {
        const double av = a[p * m + i];
        const double* brow = b + p * n;
        for (int64_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
}

inline void conv1d_row(const double* x, const double* w, const double* bias, double* y,
                       int64_t t, int64_t t_in, int64_t c_in, int64_t c_out, int64_t kw,
                       int64_t dilation, int64_t stride, int64_t pad_left) {
    for (int64_t o = 0; o < c_out; ++o) {
        double acc = bias != nullptr ? bias[o] : 0.0;
        const double* wrow = w + o * kw * c_in;
        for (int64_t j = 0; j < kw; ++j) {
            const int64_t r = t * stride - pad_left + j * dilation;
            if (r < 0 || r >= t_in) continue;
            const double* xrow = x + r * c_in;
            const double* wtap = wrow + j * c_in;
            double s = 0.0;
            for (int64_t i = 0; i < c_in; ++i) s += wtap[i] * xrow[i];
            acc += s;
        }
        y[t * c_out + o] = acc;
    }
}

inline void conv1d_grad_input_row(const double* dy, const double* w, double* dxrow, int64_t r,
                                  int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                                  int64_t dilation, int64_t stride, int64_t pad_left) {
    for (int64_t j = 0; j < kw; ++j) {
        const int64_t num = r + pad_left - j * dilation;
        if (num < 0 || num % stride != 0) continue;
        const int64_t t = num / stride;
        if (t >= t_out) continue;
        const double* dyrow = dy + t * c_out;
        for (int64_t o = 0; o < c_out; ++o) {
            const double g = dyrow[o];
            if (g == 0.0) continue;
            const double* wtap = w + o * kw * c_in + j * c_in;
            for (int64_t i = 0; i < c_in; ++i) dxrow[i] += g * wtap[i];
        }
    }
}

inline void conv1d_grad_weight_out(const double* x, const double* dy, double* dwrow,
                                   double* dbias, int64_t o, int64_t t_in, int64_t c_in,
                                   int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
                                   int64_t stride, int64_t pad_left) {
    double db = 0.0;
    for (int64_t t = 0; t < t_out; ++t) {
        const double g = dy[t * c_out + o];
        db += g;
        if (g == 0.0) continue;
        for (int64_t j = 0; j < kw; ++j) {
            const int64_t r = t * stride - pad_left + j * dilation;
            if (r < 0 || r >= t_in) continue;
            const double* xrow = x + r * c_in;
            double* wtap = dwrow + j * c_in;
            for (int64_t i = 0; i < c_in; ++i) wtap[i] += g * xrow[i];
        }
    }
    if (dbias != nullptr) dbias[o] += db;
}

inline void softmax_row(const double* x, double* y, int64_t cols) {
    double mx = x[0];
    for (int64_t j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    double sum = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        const double e = std::exp(x[j] - mx);
        y[j] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (int64_t j = 0; j < cols; ++j) y[j] *= inv;
}

inline void layernorm_row(const double* x, double* y, double* mean, double* rstd, int64_t cols,
                          double eps) {
    double mu = 0.0;
    for (int64_t j = 0; j < cols; ++j) mu += x[j];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        const double d = x[j] - mu;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double rs = 1.0 / std::sqrt(var + eps);
    for (int64_t j = 0; j < cols; ++j) y[j] = (x[j] - mu) * rs;
    *mean = mu;
    *rstd = rs;
}

inline void layernorm_grad_row(const double* dy, const double* y, double rstd, double* dx,
                               int64_t cols) {
    double sum_dy = 0.0;
    double sum_dyy = 0.0;
    for (int64_t j = 0; j < cols; ++j) {
        sum_dy += dy[j];
        sum_dyy += dy[j] * y[j];
    }
    const double inv_c = 1.0 / static_cast<double>(cols);
    sum_dy *= inv_c;
    sum_dyy *= inv_c;
    for (int64_t j = 0; j < cols; ++j) dx[j] += rstd * (dy[j] - sum_dy - y[j] * sum_dyy);
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference.

namespace serial {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
    for (int64_t i = 0; i < m; ++i) matmul_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    for (int64_t i = 0; i < m; ++i) matmul_nt_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    for (int64_t i = 0; i < m; ++i) matmul_tn_row(a, b, c + i * n, i, m, k, n, accumulate);
}

void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t t_in,
            int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
            int64_t stride, int64_t pad_left) {
    for (int64_t t = 0; t < t_out; ++t)
        conv1d_row(x, w, bias, y, t, t_in, c_in, c_out, kw, dilation, stride, pad_left);
}

void conv1d_grad_input(const double* dy, const double* w, double* dx, int64_t t_in, int64_t c_in,
                       int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation, int64_t stride,
                       int64_t pad_left) {
    for (int64_t r = 0; r < t_in; ++r)
        conv1d_grad_input_row(dy, w, dx + r * c_in, r, c_in, t_out, c_out, kw, dilation, stride,
                              pad_left);
}

void conv1d_grad_weight(const double* x, const double* dy, double* dw, double* dbias,
                        int64_t t_in, int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                        int64_t dilation, int64_t stride, int64_t pad_left) {
    for (int64_t o = 0; o < c_out; ++o)
        conv1d_grad_weight_out(x, dy, dw + o * kw * c_in, dbias, o, t_in, c_in, t_out, c_out, kw,
                               dilation, stride, pad_left);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void layernorm_rows(const double* x, double* y, double* mean, double* rstd, int64_t rows,
                    int64_t cols, double eps) {
    for (int64_t i = 0; i < rows; ++i)
        layernorm_row(x + i * cols, y + i * cols, mean + i, rstd + i, cols, eps);
}

void layernorm_rows_grad(const double* dy, const double* y, const double* rstd, double* dx,
                         int64_t rows, int64_t cols) {
    for (int64_t i = 0; i < rows; ++i)
        layernorm_grad_row(dy + i * cols, y + i * cols, rstd[i], dx + i * cols, cols);
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP variants: same per-row arithmetic, rows spread across threads.

namespace par {

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_nt_row(a + i * k, b, c + i * n, k, n, accumulate);
}

void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < m; ++i) matmul_tn_row(a, b, c + i * n, i, m, k, n, accumulate);
}

void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t t_in,
            int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
            int64_t stride, int64_t pad_left) {
#pragma omp parallel for schedule(static)
    for (int64_t t = 0; t < t_out; ++t)
        conv1d_row(x, w, bias, y, t, t_in, c_in, c_out, kw, dilation, stride, pad_left);
}

void conv1d_grad_input(const double* dy, const double* w, double* dx, int64_t t_in, int64_t c_in,
                       int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation, int64_t stride,
                       int64_t pad_left) {
#pragma omp parallel for schedule(static)
    for (int64_t r = 0; r < t_in; ++r)
        conv1d_grad_input_row(dy, w, dx + r * c_in, r, c_in, t_out, c_out, kw, dilation, stride,
                              pad_left);
}

void conv1d_grad_weight(const double* x, const double* dy, double* dw, double* dbias,
                        int64_t t_in, int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                        int64_t dilation, int64_t stride, int64_t pad_left) {
#pragma omp parallel for schedule(static)
    for (int64_t o = 0; o < c_out; ++o)
        conv1d_grad_weight_out(x, dy, dw + o * kw * c_in, dbias, o, t_in, c_in, t_out, c_out, kw,
                               dilation, stride, pad_left);
}

void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void layernorm_rows(const double* x, double* y, double* mean, double* rstd, int64_t rows,
                    int64_t cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i)
        layernorm_row(x + i * cols, y + i * cols, mean + i, rstd + i, cols, eps);
}

void layernorm_rows_grad(const double* dy, const double* y, const double* rstd, double* dx,
                         int64_t rows, int64_t cols) {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < rows; ++i)
        layernorm_grad_row(dy + i * cols, y + i * cols, rstd[i], dx + i * cols, cols);
}

}  // namespace par

// ---------------------------------------------------------------------------
// Dispatch.

#define FLOWVC_DISPATCH(fn, ...)      \
    do {                              \
        if (g_parallel)               \
            par::fn(__VA_ARGS__);     \
        else                          \
            serial::fn(__VA_ARGS__);  \
    } while (0)

void matmul(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
            bool accumulate) {
    FLOWVC_DISPATCH(matmul, a, b, c, m, k, n, accumulate);
}
void matmul_nt(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    FLOWVC_DISPATCH(matmul_nt, a, b, c, m, k, n, accumulate);
}
void matmul_tn(const double* a, const double* b, double* c, int64_t m, int64_t k, int64_t n,
               bool accumulate) {
    FLOWVC_DISPATCH(matmul_tn, a, b, c, m, k, n, accumulate);
}
void conv1d(const double* x, const double* w, const double* bias, double* y, int64_t t_in,
            int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation,
            int64_t stride, int64_t pad_left) {
    FLOWVC_DISPATCH(conv1d, x, w, bias, y, t_in, c_in, t_out, c_out, kw, dilation, stride,
                    pad_left);
}
void conv1d_grad_input(const double* dy, const double* w, double* dx, int64_t t_in, int64_t c_in,
                       int64_t t_out, int64_t c_out, int64_t kw, int64_t dilation, int64_t stride,
                       int64_t pad_left) {
    FLOWVC_DISPATCH(conv1d_grad_input, dy, w, dx, t_in, c_in, t_out, c_out, kw, dilation, stride,
                    pad_left);
}
void conv1d_grad_weight(const double* x, const double* dy, double* dw, double* dbias,
                        int64_t t_in, int64_t c_in, int64_t t_out, int64_t c_out, int64_t kw,
                        int64_t dilation, int64_t stride, int64_t pad_left) {
    FLOWVC_DISPATCH(conv1d_grad_weight, x, dy, dw, dbias, t_in, c_in, t_out, c_out, kw, dilation,
                    stride, pad_left);
}
void softmax_rows(const double* x, double* y, int64_t rows, int64_t cols) {
    FLOWVC_DISPATCH(softmax_rows, x, y, rows, cols);
}
void layernorm_rows(const double* x, double* y, double* mean, double* rstd, int64_t rows,
                    int64_t cols, double eps) {
    FLOWVC_DISPATCH(layernorm_rows, x, y, mean, rstd, rows, cols, eps);
}
void layernorm_rows_grad(const double* dy, const double* y, const double* rstd, double* dx,
                         int64_t rows, int64_t cols) {
    FLOWVC_DISPATCH(layernorm_rows_grad, dy, y, rstd, dx, rows, cols);
}

#undef FLOWVC_DISPATCH

}  // namespace flowvc::kern
