#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "flowvc/tensor.hpp"

namespace flowvc::ag {

// Reverse-mode autodiff over 2-D tensors. A Var wraps a graph node; ops build
// the DAG; backward() runs the tape in reverse topological order. Gradients
// accumulate into leaves (params) until zero_grad.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::string name;  // set for parameters
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad() {
        if (grad.rows == 0) grad = Tensor::zeros(val.rows, val.cols);
        return grad;
    }
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr n) : n_(std::move(n)) {}

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& val() const { return n_->val; }
    Tensor& val_mut() { return n_->val; }
    Tensor& grad() { return n_->ensure_grad(); }
    bool has_grad() const { return n_->grad.rows != 0; }
    bool requires_grad() const { return n_->requires_grad; }
    int64_t rows() const { return n_->val.rows; }
    int64_t cols() const { return n_->val.cols; }
    const std::string& name() const { return n_->name; }
    NodePtr node() const { return n_; }

private:
    NodePtr n_;
};

// Leaf constructors.
Var param(Tensor v, std::string name);
Var constant(Tensor v);

// While a NoGradGuard is alive, ops compute values only (no tape).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

void backward(const Var& loss);

// Elementwise / broadcast.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var add_rowvec(const Var& a, const Var& v);   // a[T x C] + v[1 x C] per row
Var mul_rowvec(const Var& a, const Var& v);   // a[T x C] * v[1 x C] per row
Var mul_colvec(const Var& a, const Var& u);   // a[T x C] * u[T x 1] per col
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var broadcast_rows(const Var& v, int64_t t);  // v[1 x C] -> [T x C]

// Linear algebra.
Var matmul(const Var& a, const Var& b);
Var matmul_nt(const Var& a, const Var& b);  // a[M x K] * b[N x K]^T
Var matmul_tn(const Var& a, const Var& b);  // a[K x M]^T * b[K x N]
Var linear(const Var& x, const Var& w, const Var& b);  // x[T x I] w[I x O] + b

// Shape.
Var concat_cols(const std::vector<Var>& xs);
Var slice_cols(const Var& a, int64_t c0, int64_t c1);
Var upsample_rows(const Var& a, int64_t factor, int64_t t_out);  // nearest

// Nonlinearities.
Var tanh_op(const Var& a);
Var sigmoid_op(const Var& a);
Var gelu(const Var& a);  // exact erf form
Var silu(const Var& a);
Var softmax_rows(const Var& a);
Var layernorm(const Var& a, double eps = 1e-6);

// Reductions.
Var mean_all(const Var& a);
Var sum_all(const Var& a);
Var mean_rows(const Var& a);  // [T x C] -> [1 x C]

// Losses: frame_mask[T x 1] in {0,1} selects contributing rows. masked_mean
// divides by the number of selected elements; otherwise by all elements.
Var masked_mse(const Var& pred, const Tensor& target, const Tensor& frame_mask,
               bool masked_mean = true);
Var masked_l1(const Var& pred, const Tensor& target, const Tensor& frame_mask);

// Convolution over rows (time). Weight w[C_out x (kw*C_in)] tap-major,
// b[1 x C_out] or undefined Var for none.
Var conv1d(const Var& x, const Var& w, const Var& b, int64_t kw, int64_t dilation,
           int64_t stride, int64_t pad_left, int64_t t_out);

// Rotary position encoding: x[T x C] with C even, cos/sin[T x C/2].
Var rope(const Var& x, const Tensor& cos_tab, const Tensor& sin_tab);

// Sinusoidal features of a scalar [1 x 1]: [sin(t w_i) .. cos(t w_i)],
// differentiable in t. freqs has C/2 entries.
Var time_features(const Var& t, const std::vector<double>& freqs);

}  // namespace flowvc::ag
