#include "flowvc/autograd.hpp"

#include <cmath>
#include <unordered_set>

#include "flowvc/kernels.hpp"

namespace flowvc::ag {

namespace {

thread_local int g_no_grad_depth = 0;

NodePtr make_node(Tensor val, std::vector<NodePtr> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->val = std::move(val);
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p->requires_grad) {
                n->requires_grad = true;
                break;
            }
        if (n->requires_grad) {
            n->parents = std::move(parents);
            n->backprop = std::move(bp);
        }
    }
    return n;
}

void check(bool cond, const char* msg) {
    if (!cond) throw InvalidInput(msg);
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var param(Tensor v, std::string name) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    n->requires_grad = true;
    n->name = std::move(name);
    return Var(n);
}

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->val = std::move(v);
    return Var(n);
}

void backward(const Var& loss) {
    check(loss.rows() == 1 && loss.cols() == 1, "backward: loss must be 1x1");
    if (!loss.node()->requires_grad) return;

    // Iterative post-order DFS for topological order.
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* parent = node->parents[idx].get();
            ++idx;
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad().v[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.rows != 0) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise.

Var add(const Var& a, const Var& b) {
    check(a.val().same_shape(b.val()), "add: shape mismatch");
    Tensor out = a.val();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += b.val().v[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        for (int s = 0; s < 2; ++s) {
            Node& p = *self.parents[s];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i];
        }
    }));
}

Var sub(const Var& a, const Var& b) {
    check(a.val().same_shape(b.val()), "sub: shape mismatch");
    Tensor out = a.val();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] -= b.val().v[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] -= self.grad.v[i];
        }
    }));
}

Var mul(const Var& a, const Var& b) {
    check(a.val().same_shape(b.val()), "mul: shape mismatch");
    Tensor out = a.val();
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] *= b.val().v[i];
    return Var(make_node(std::move(out), {a.node(), b.node()}, [](Node& self) {
        const Tensor& av = self.parents[0]->val;
        const Tensor& bv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i] * bv.v[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i] * av.v[i];
        }
    }));
}

Var add_rowvec(const Var& a, const Var& v) {
    check(v.rows() == 1 && v.cols() == a.cols(), "add_rowvec: shape mismatch");
    Tensor out = a.val();
    const int64_t t = out.rows, c = out.cols;
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[i * c + j] += v.val().v[j];
    return Var(make_node(std::move(out), {a.node(), v.node()}, [](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < c; ++j) g.v[j] += self.grad.v[i * c + j];
        }
    }));
}

Var mul_rowvec(const Var& a, const Var& v) {
    check(v.rows() == 1 && v.cols() == a.cols(), "mul_rowvec: shape mismatch");
    Tensor out = a.val();
    const int64_t t = out.rows, c = out.cols;
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[i * c + j] *= v.val().v[j];
    return Var(make_node(std::move(out), {a.node(), v.node()}, [](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        const Tensor& av = self.parents[0]->val;
        const Tensor& vv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < c; ++j) g.v[i * c + j] += self.grad.v[i * c + j] * vv.v[j];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < c; ++j) g.v[j] += self.grad.v[i * c + j] * av.v[i * c + j];
        }
    }));
}

Var mul_colvec(const Var& a, const Var& u) {
    check(u.cols() == 1 && u.rows() == a.rows(), "mul_colvec: shape mismatch");
    Tensor out = a.val();
    const int64_t t = out.rows, c = out.cols;
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[i * c + j] *= u.val().v[i];
    return Var(make_node(std::move(out), {a.node(), u.node()}, [](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        const Tensor& av = self.parents[0]->val;
        const Tensor& uv = self.parents[1]->val;
        if (self.parents[0]->requires_grad) {
            Tensor& g = self.parents[0]->ensure_grad();
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < c; ++j) g.v[i * c + j] += self.grad.v[i * c + j] * uv.v[i];
        }
        if (self.parents[1]->requires_grad) {
            Tensor& g = self.parents[1]->ensure_grad();
            for (int64_t i = 0; i < t; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < c; ++j) acc += self.grad.v[i * c + j] * av.v[i * c + j];
                g.v[i] += acc;
            }
        }
    }));
}

Var scale(const Var& a, double s) {
    Tensor out = a.val();
    for (auto& x : out.v) x *= s;
    return Var(make_node(std::move(out), {a.node()}, [s](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += s * self.grad.v[i];
    }));
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.val();
    for (auto& x : out.v) x += s;
    return Var(make_node(std::move(out), {a.node()}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i];
    }));
}

Var broadcast_rows(const Var& v, int64_t t) {
    check(v.rows() == 1, "broadcast_rows: expects a row vector");
    const int64_t c = v.cols();
    Tensor out(t, c);
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[i * c + j] = v.val().v[j];
    return Var(make_node(std::move(out), {v.node()}, [](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j < c; ++j) g.v[j] += self.grad.v[i * c + j];
    }));
}

// ---------------------------------------------------------------------------
// Matrix products.

Var matmul(const Var& a, const Var& b) {
    check(a.cols() == b.rows(), "matmul: inner dims differ");
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out(m, n);
    kern::matmul(a.val().data(), b.val().data(), out.data(), m, k, n, false);
    return Var(make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)  // dA = dC * B^T
            kern::matmul_nt(self.grad.data(), pb.val.data(), pa.ensure_grad().data(), m, n, k,
                            true);
        if (pb.requires_grad)  // dB = A^T * dC
            kern::matmul_tn(pa.val.data(), self.grad.data(), pb.ensure_grad().data(), k, m, n,
                            true);
    }));
}

Var matmul_nt(const Var& a, const Var& b) {
    check(a.cols() == b.cols(), "matmul_nt: inner dims differ");
    const int64_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out(m, n);
    kern::matmul_nt(a.val().data(), b.val().data(), out.data(), m, k, n, false);
    return Var(make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)  // dA = dC * B
            kern::matmul(self.grad.data(), pb.val.data(), pa.ensure_grad().data(), m, n, k, true);
        if (pb.requires_grad)  // dB = dC^T * A
            kern::matmul_tn(self.grad.data(), pa.val.data(), pb.ensure_grad().data(), n, m, k,
                            true);
    }));
}

Var matmul_tn(const Var& a, const Var& b) {
    check(a.rows() == b.rows(), "matmul_tn: inner dims differ");
    const int64_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor out(m, n);
    kern::matmul_tn(a.val().data(), b.val().data(), out.data(), m, k, n, false);
    return Var(make_node(std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        if (pa.requires_grad)  // dA = B * dC^T
            kern::matmul_nt(pb.val.data(), self.grad.data(), pa.ensure_grad().data(), k, n, m,
                            true);
        if (pb.requires_grad)  // dB = A * dC
            kern::matmul(pa.val.data(), self.grad.data(), pb.ensure_grad().data(), k, m, n, true);
    }));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    Var y = matmul(x, w);
    if (b.defined()) y = add_rowvec(y, b);
    return y;
}

// ---------------------------------------------------------------------------
// Shape ops.

Var concat_cols(const std::vector<Var>& xs) {
    check(!xs.empty(), "concat_cols: empty");
    const int64_t t = xs[0].rows();
    int64_t c = 0;
    for (const auto& x : xs) {
        check(x.rows() == t, "concat_cols: row mismatch");
        c += x.cols();
    }
    Tensor out(t, c);
    std::vector<int64_t> offs;
    int64_t off = 0;
    std::vector<NodePtr> parents;
    for (const auto& x : xs) {
        offs.push_back(off);
        const int64_t xc = x.cols();
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j < xc; ++j) out.v[i * c + off + j] = x.val().v[i * xc + j];
        off += xc;
        parents.push_back(x.node());
    }
    return Var(make_node(std::move(out), std::move(parents), [offs](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        for (size_t s = 0; s < self.parents.size(); ++s) {
            Node& p = *self.parents[s];
            if (!p.requires_grad) continue;
            Tensor& g = p.ensure_grad();
            const int64_t xc = p.val.cols;
            const int64_t off = offs[s];
            for (int64_t i = 0; i < t; ++i)
                for (int64_t j = 0; j < xc; ++j) g.v[i * xc + j] += self.grad.v[i * c + off + j];
        }
    }));
}

Var slice_cols(const Var& a, int64_t c0, int64_t c1) {
    check(0 <= c0 && c0 < c1 && c1 <= a.cols(), "slice_cols: bad range");
    const int64_t t = a.rows(), c = a.cols(), w = c1 - c0;
    Tensor out(t, w);
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < w; ++j) out.v[i * w + j] = a.val().v[i * c + c0 + j];
    return Var(make_node(std::move(out), {a.node()}, [c0](Node& self) {
        const int64_t t = self.val.rows, w = self.val.cols;
        Tensor& g = self.parents[0]->ensure_grad();
        const int64_t c = self.parents[0]->val.cols;
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j < w; ++j) g.v[i * c + c0 + j] += self.grad.v[i * w + j];
    }));
}

Var upsample_rows(const Var& a, int64_t factor, int64_t t_out) {
    check(factor >= 1 && t_out <= a.rows() * factor, "upsample_rows: bad target length");
    const int64_t c = a.cols();
    Tensor out(t_out, c);
    for (int64_t i = 0; i < t_out; ++i) {
        const int64_t src = i / factor;
        for (int64_t j = 0; j < c; ++j) out.v[i * c + j] = a.val().v[src * c + j];
    }
    return Var(make_node(std::move(out), {a.node()}, [factor](Node& self) {
        const int64_t t_out = self.val.rows, c = self.val.cols;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int64_t i = 0; i < t_out; ++i) {
            const int64_t src = i / factor;
            for (int64_t j = 0; j < c; ++j) g.v[src * c + j] += self.grad.v[i * c + j];
        }
    }));
}

// ---------------------------------------------------------------------------
// Nonlinearities.

namespace {
template <typename F, typename DF>
Var unary(const Var& a, F f, DF df) {
    Tensor out = a.val();
    for (auto& x : out.v) x = f(x);
    return Var(make_node(std::move(out), {a.node()}, [df](Node& self) {
        const Tensor& x = self.parents[0]->val;
        Tensor& g = self.parents[0]->ensure_grad();
        for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += self.grad.v[i] * df(x.v[i], self.val.v[i]);
    }));
}
}  // namespace

Var tanh_op(const Var& a) {
    return unary(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid_op(const Var& a) {
    return unary(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Var gelu(const Var& a) {
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    return unary(
        a, [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [=](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Var silu(const Var& a) {
    return unary(
        a, [](double x) { return x / (1.0 + std::exp(-x)); },
        [](double x, double) {
            const double s = 1.0 / (1.0 + std::exp(-x));
            return s * (1.0 + x * (1.0 - s));
        });
}

Var softmax_rows(const Var& a) {
    Tensor out(a.rows(), a.cols());
    kern::softmax_rows(a.val().data(), out.data(), a.rows(), a.cols());
    return Var(make_node(std::move(out), {a.node()}, [](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int64_t i = 0; i < t; ++i) {
            const double* y = self.val.data() + i * c;
            const double* dy = self.grad.data() + i * c;
            double dot = 0.0;
            for (int64_t j = 0; j < c; ++j) dot += y[j] * dy[j];
            for (int64_t j = 0; j < c; ++j) g.v[i * c + j] += y[j] * (dy[j] - dot);
        }
    }));
}

Var layernorm(const Var& a, double eps) {
    const int64_t t = a.rows(), c = a.cols();
    Tensor out(t, c);
    auto mean = std::make_shared<std::vector<double>>(t);
    auto rstd = std::make_shared<std::vector<double>>(t);
    kern::layernorm_rows(a.val().data(), out.data(), mean->data(), rstd->data(), t, c, eps);
    return Var(make_node(std::move(out), {a.node()}, [rstd](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols;
        Tensor& g = self.parents[0]->ensure_grad();
        kern::layernorm_rows_grad(self.grad.data(), self.val.data(), rstd->data(), g.data(), t, c);
    }));
}

// ---------------------------------------------------------------------------
// Reductions and losses.

Var sum_all(const Var& a) {
    Tensor out(1, 1);
    double s = 0.0;
    for (double x : a.val().v) s += x;
    out.v[0] = s;
    return Var(make_node(std::move(out), {a.node()}, [](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gv = self.grad.v[0];
        for (auto& x : g.v) x += gv;
    }));
}

Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.val().size());
    Tensor out(1, 1);
    double s = 0.0;
    for (double x : a.val().v) s += x;
    out.v[0] = s * inv;
    return Var(make_node(std::move(out), {a.node()}, [inv](Node& self) {
        Tensor& g = self.parents[0]->ensure_grad();
        const double gv = self.grad.v[0] * inv;
        for (auto& x : g.v) x += gv;
    }));
}

Var mean_rows(const Var& a) {
    const int64_t t = a.rows(), c = a.cols();
    const double inv = 1.0 / static_cast<double>(t);
    Tensor out(1, c);
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < c; ++j) out.v[j] += a.val().v[i * c + j];
    for (auto& x : out.v) x *= inv;
    return Var(make_node(std::move(out), {a.node()}, [inv](Node& self) {
        const int64_t c = self.val.cols;
        Tensor& g = self.parents[0]->ensure_grad();
        const int64_t t = g.rows;
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j < c; ++j) g.v[i * c + j] += self.grad.v[j] * inv;
    }));
}

Var masked_mse(const Var& pred, const Tensor& target, const Tensor& frame_mask,
               bool masked_mean) {
    check(pred.val().same_shape(target), "masked_mse: shape mismatch");
    check(frame_mask.cols == 1 && frame_mask.rows == pred.rows(), "masked_mse: bad mask shape");
    const int64_t t = pred.rows(), c = pred.cols();
    int64_t count = 0;
    for (int64_t i = 0; i < t; ++i)
        if (frame_mask.v[i] != 0.0) ++count;
    if (masked_mean && count == 0) throw InvalidInput("masked_mse: mask selects no frames");
    const double denom =
        masked_mean ? static_cast<double>(count * c) : static_cast<double>(t * c);
    double s = 0.0;
    for (int64_t i = 0; i < t; ++i) {
        if (frame_mask.v[i] == 0.0) continue;
        for (int64_t j = 0; j < c; ++j) {
            const double d = pred.val().v[i * c + j] - target.v[i * c + j];
            s += d * d;
        }
    }
    Tensor out(1, 1);
    out.v[0] = s / denom;
    auto tgt = std::make_shared<Tensor>(target);
    auto msk = std::make_shared<Tensor>(frame_mask);
    return Var(make_node(std::move(out), {pred.node()}, [tgt, msk, denom](Node& self) {
        const int64_t t = tgt->rows, c = tgt->cols;
        const Tensor& pv = self.parents[0]->val;
        Tensor& g = self.parents[0]->ensure_grad();
        const double gv = self.grad.v[0] * 2.0 / denom;
        for (int64_t i = 0; i < t; ++i) {
            if (msk->v[i] == 0.0) continue;
            for (int64_t j = 0; j < c; ++j)
                g.v[i * c + j] += gv * (pv.v[i * c + j] - tgt->v[i * c + j]);
        }
    }));
}

Var masked_l1(const Var& pred, const Tensor& target, const Tensor& frame_mask) {
    check(pred.val().same_shape(target), "masked_l1: shape mismatch");
    check(frame_mask.cols == 1 && frame_mask.rows == pred.rows(), "masked_l1: bad mask shape");
    const int64_t t = pred.rows(), c = pred.cols();
    int64_t count = 0;
    for (int64_t i = 0; i < t; ++i)
        if (frame_mask.v[i] != 0.0) ++count;
    if (count == 0) throw InvalidInput("masked_l1: mask selects no frames");
    const double denom = static_cast<double>(count * c);
    double s = 0.0;
    for (int64_t i = 0; i < t; ++i) {
        if (frame_mask.v[i] == 0.0) continue;
        for (int64_t j = 0; j < c; ++j)
            s += std::fabs(pred.val().v[i * c + j] - target.v[i * c + j]);
    }
    Tensor out(1, 1);
    out.v[0] = s / denom;
    auto tgt = std::make_shared<Tensor>(target);
    auto msk = std::make_shared<Tensor>(frame_mask);
    return Var(make_node(std::move(out), {pred.node()}, [tgt, msk, denom](Node& self) {
        const int64_t t = tgt->rows, c = tgt->cols;
        const Tensor& pv = self.parents[0]->val;
        Tensor& g = self.parents[0]->ensure_grad();
        const double gv = self.grad.v[0] / denom;
        for (int64_t i = 0; i < t; ++i) {
            if (msk->v[i] == 0.0) continue;
            for (int64_t j = 0; j < c; ++j) {
                const double d = pv.v[i * c + j] - tgt->v[i * c + j];
                g.v[i * c + j] += gv * (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0));
            }
        }
    }));
}

// ---------------------------------------------------------------------------
// Convolution.

Var conv1d(const Var& x, const Var& w, const Var& b, int64_t kw, int64_t dilation,
           int64_t stride, int64_t pad_left, int64_t t_out) {
    const int64_t c_in = x.cols();
    check(w.cols() == kw * c_in, "conv1d: weight layout mismatch");
    const int64_t c_out = w.rows();
    if (b.defined()) check(b.rows() == 1 && b.cols() == c_out, "conv1d: bad bias");
    Tensor out(t_out, c_out);
    kern::conv1d(x.val().data(), w.val().data(), b.defined() ? b.val().data() : nullptr,
                 out.data(), x.rows(), c_in, t_out, c_out, kw, dilation, stride, pad_left);
    std::vector<NodePtr> parents = {x.node(), w.node()};
    if (b.defined()) parents.push_back(b.node());
    return Var(make_node(std::move(out), std::move(parents),
                         [kw, dilation, stride, pad_left](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        const int64_t t_in = px.val.rows, c_in = px.val.cols;
        const int64_t t_out = self.val.rows, c_out = self.val.cols;
        if (px.requires_grad)
            kern::conv1d_grad_input(self.grad.data(), pw.val.data(), px.ensure_grad().data(),
                                    t_in, c_in, t_out, c_out, kw, dilation, stride, pad_left);
        const bool has_bias = self.parents.size() == 3;
        Node* pb = has_bias ? self.parents[2].get() : nullptr;
        if (pw.requires_grad || (pb != nullptr && pb->requires_grad)) {
            double* dbias =
                (pb != nullptr && pb->requires_grad) ? pb->ensure_grad().data() : nullptr;
            // grad_weight also accumulates dbias; when only the bias needs a
            // gradient we still need a weight-sized scratch target.
            if (pw.requires_grad) {
                kern::conv1d_grad_weight(px.val.data(), self.grad.data(),
                                         pw.ensure_grad().data(), dbias, t_in, c_in, t_out, c_out,
                                         kw, dilation, stride, pad_left);
            } else {
                Tensor scratch(pw.val.rows, pw.val.cols);
                kern::conv1d_grad_weight(px.val.data(), self.grad.data(), scratch.data(), dbias,
                                         t_in, c_in, t_out, c_out, kw, dilation, stride,
                                         pad_left);
            }
        }
    }));
}

// ---------------------------------------------------------------------------
// Rotary encoding and time features.

Var rope(const Var& x, const Tensor& cos_tab, const Tensor& sin_tab) {
    const int64_t t = x.rows(), c = x.cols();
    check(c % 2 == 0, "rope: odd width");
    check(cos_tab.rows == t && cos_tab.cols == c / 2, "rope: cos table shape");
    check(sin_tab.rows == t && sin_tab.cols == c / 2, "rope: sin table shape");
    Tensor out(t, c);
    const int64_t h = c / 2;
    for (int64_t i = 0; i < t; ++i)
        for (int64_t j = 0; j < h; ++j) {
            const double cs = cos_tab.v[i * h + j], sn = sin_tab.v[i * h + j];
            const double x0 = x.val().v[i * c + 2 * j], x1 = x.val().v[i * c + 2 * j + 1];
            out.v[i * c + 2 * j] = x0 * cs - x1 * sn;
            out.v[i * c + 2 * j + 1] = x0 * sn + x1 * cs;
        }
    auto ct = std::make_shared<Tensor>(cos_tab);
    auto st = std::make_shared<Tensor>(sin_tab);
    return Var(make_node(std::move(out), {x.node()}, [ct, st](Node& self) {
        const int64_t t = self.val.rows, c = self.val.cols, h = c / 2;
        Tensor& g = self.parents[0]->ensure_grad();
        for (int64_t i = 0; i < t; ++i)
            for (int64_t j = 0; j < h; ++j) {
                const double cs = ct->v[i * h + j], sn = st->v[i * h + j];
                const double g0 = self.grad.v[i * c + 2 * j], g1 = self.grad.v[i * c + 2 * j + 1];
                g.v[i * c + 2 * j] += g0 * cs + g1 * sn;
                g.v[i * c + 2 * j + 1] += -g0 * sn + g1 * cs;
            }
    }));
}

Var time_features(const Var& t, const std::vector<double>& freqs) {
    check(t.rows() == 1 && t.cols() == 1, "time_features: t must be 1x1");
    const int64_t h = static_cast<int64_t>(freqs.size());
    const double tv = t.val().v[0];
    Tensor out(1, 2 * h);
    for (int64_t i = 0; i < h; ++i) {
        out.v[i] = std::sin(tv * freqs[i]);
        out.v[h + i] = std::cos(tv * freqs[i]);
    }
    auto fr = std::make_shared<std::vector<double>>(freqs);
    return Var(make_node(std::move(out), {t.node()}, [fr](Node& self) {
        const int64_t h = static_cast<int64_t>(fr->size());
        const double tv = self.parents[0]->val.v[0];
        double acc = 0.0;
        for (int64_t i = 0; i < h; ++i) {
            const double w = (*fr)[i];
            acc += self.grad.v[i] * w * std::cos(tv * w);
            acc += self.grad.v[h + i] * (-w * std::sin(tv * w));
        }
        self.parents[0]->ensure_grad().v[0] += acc;
    }));
}

}  // namespace flowvc::ag
