#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "protomargin/kernels.hpp"
#include "protomargin/param_store.hpp"
#include "protomargin/tensor.hpp"

// Reverse-mode autodiff over a dynamically built DAG. Each primitive records a
// node holding the forward value and a closure that routes the node's gradient
// into its parents. Nodes whose inputs require no gradient skip both, so
// untracked forwards cost only the kernel calls.

namespace protomargin {

template <typename T>
struct GradNode {
    Tensor<T> value;
    Tensor<T> grad;  // empty until backward reaches the node
    bool requires_grad = false;
    const char* op = "leaf";
    std::string param_name;  // nonempty for parameter leaves
    std::vector<std::shared_ptr<GradNode>> parents;
    std::function<void(GradNode&)> backprop;

    void accum_grad(const Tensor<T>& g) {
        if (grad.empty()) grad = Tensor<T>(value.shape());
        T* d = grad.data();
        const T* s = g.data();
        int64_t n = grad.numel();
        for (int64_t i = 0; i < n; ++i) d[i] += s[i];
    }
};

/// Handle to a graph node. Cheap to copy; the graph is freed when the last
/// handle to its sink goes away.
template <typename T>
class Value {
  public:
    Value() = default;
    explicit Value(std::shared_ptr<GradNode<T>> n) : node_(std::move(n)) {}

    const Tensor<T>& tensor() const { return node_->value; }
    const Tensor<T>& grad() const { return node_->grad; }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t numel() const { return node_->value.numel(); }
    bool requires_grad() const { return node_->requires_grad; }
    bool valid() const { return node_ != nullptr; }

    std::shared_ptr<GradNode<T>> node() const { return node_; }

  private:
    std::shared_ptr<GradNode<T>> node_;
};

template <typename T>
Value<T> constant(Tensor<T> t) {
    auto n = std::make_shared<GradNode<T>>();
    n->value = std::move(t);
    return Value<T>(std::move(n));
}

template <typename T>
Value<T> input(Tensor<T> t, bool requires_grad = false) {
    auto n = std::make_shared<GradNode<T>>();
    n->value = std::move(t);
    n->requires_grad = requires_grad;
    return Value<T>(std::move(n));
}

/// Parameter leaf: snapshots the current store value; backward() writes the
/// gradient back into the store's accumulator under the same name.
template <typename T>
Value<T> param(ParamStore<T>& store, const std::string& name) {
    auto n = std::make_shared<GradNode<T>>();
    n->value = store.value(name);
    n->requires_grad = true;
    n->param_name = name;
    return Value<T>(std::move(n));
}

namespace detail {

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch (" + shape_str(a) + " vs " + shape_str(b) + ")");
}

template <typename T>
Value<T> make_node(const char* op, Tensor<T> value, std::vector<std::shared_ptr<GradNode<T>>> parents,
                   std::function<void(GradNode<T>&)> backprop) {
    auto n = std::make_shared<GradNode<T>>();
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Value<T>(std::move(n));
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F f) {
    Tensor<T> y(x.shape());
    const T* xp = x.data();
    T* yp = y.data();
    kernels::parallel_for(x.numel(), [&](int64_t i) { yp[i] = f(xp[i]); });
    return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// primitives
// ---------------------------------------------------------------------------

template <typename T>
Value<T> matmul(const Value<T>& a, const Value<T>& b) {
    const Tensor<T>&A = a.tensor(), &B = b.tensor();
    if (A.rank() != 2 || B.rank() != 2 || A.extent(1) != B.extent(0))
        detail::shape_error("matmul", A.shape(), B.shape());
    int64_t M = A.extent(0), K = A.extent(1), N = B.extent(1);
    Tensor<T> C({M, N});
    kernels::matmul_nn(A.data(), B.data(), C.data(), M, K, N);
    auto an = a.node(), bn = b.node();
    return detail::make_node<T>("matmul", std::move(C), {an, bn}, [M, K, N](GradNode<T>& self) {
        auto& an = self.parents[0];
        auto& bn = self.parents[1];
        if (an->requires_grad) {
            Tensor<T> da({M, K});
            kernels::matmul_nt(self.grad.data(), bn->value.data(), da.data(), M, N, K);
            an->accum_grad(da);
        }
        if (bn->requires_grad) {  // dB = A^T * dC : [K,M] x [M,N]
            Tensor<T> db({K, N});
            kernels::matmul_tn(an->value.data(), self.grad.data(), db.data(), K, M, N);
            bn->accum_grad(db);
        }
    });
}

/// c = a * b^T, the transposed-weight product used by the similarity heads.
template <typename T>
Value<T> matmul_nt(const Value<T>& a, const Value<T>& b) {
    const Tensor<T>&A = a.tensor(), &B = b.tensor();
    if (A.rank() != 2 || B.rank() != 2 || A.extent(1) != B.extent(1))
        detail::shape_error("matmul_nt", A.shape(), B.shape());
    int64_t M = A.extent(0), K = A.extent(1), N = B.extent(0);
    Tensor<T> C({M, N});
    kernels::matmul_nt(A.data(), B.data(), C.data(), M, K, N);
    auto an = a.node(), bn = b.node();
    return detail::make_node<T>("matmul_nt", std::move(C), {an, bn}, [M, K, N](GradNode<T>& self) {
        auto& an = self.parents[0];
        auto& bn = self.parents[1];
        if (an->requires_grad) {  // dA = dC * B : [M,N] x [N,K]
            Tensor<T> da({M, K});
            kernels::matmul_nn(self.grad.data(), bn->value.data(), da.data(), M, N, K);
            an->accum_grad(da);
        }
        if (bn->requires_grad) {  // dB = dC^T * A : [N,M] x [M,K]
            Tensor<T> db({N, K});
            kernels::matmul_tn(self.grad.data(), an->value.data(), db.data(), N, M, K);
            bn->accum_grad(db);
        }
    });
}

enum class Padding { Same, Valid };

template <typename T>
Value<T> conv2d(const Value<T>& x, const Value<T>& w, const Value<T>& bias, Padding padding) {
    const Tensor<T>&X = x.tensor(), &W = w.tensor(), &Bv = bias.tensor();
    if (X.rank() != 4 || W.rank() != 4) detail::shape_error("conv2d", X.shape(), W.shape());
    int64_t B = X.extent(0), H = X.extent(1), Wd = X.extent(2), Ci = X.extent(3);
    int64_t k = W.extent(0), Co = W.extent(3);
    if (W.extent(1) != k || W.extent(2) != Ci) detail::shape_error("conv2d", X.shape(), W.shape());
    if (Bv.rank() != 1 || Bv.extent(0) != Co) detail::shape_error("conv2d bias", W.shape(), Bv.shape());
    int64_t ph = 0, pw = 0, OH, OW;
    if (padding == Padding::Same) {
        if (k % 2 == 0) throw std::invalid_argument("conv2d: same padding requires an odd kernel");
        ph = pw = (k - 1) / 2;
        OH = H;
        OW = Wd;
    } else {
        OH = H - k + 1;
        OW = Wd - k + 1;
        if (OH < 1 || OW < 1)
            throw std::invalid_argument("conv2d: kernel " + std::to_string(k) + " exceeds input " + shape_str(X.shape()));
    }
    Tensor<T> Y({B, OH, OW, Co});
    kernels::conv2d_forward(X.data(), W.data(), Bv.data(), Y.data(), B, H, Wd, Ci, Co, k, ph, pw, OH, OW);
    auto xn = x.node(), wn = w.node(), bn = bias.node();
    return detail::make_node<T>(
        "conv2d", std::move(Y), {xn, wn, bn}, [B, H, Wd, Ci, Co, k, ph, pw, OH, OW](GradNode<T>& self) {
            auto& xn = self.parents[0];
            auto& wn = self.parents[1];
            auto& bn = self.parents[2];
            if (xn->requires_grad) {
                Tensor<T> dx({B, H, Wd, Ci});
                kernels::conv2d_backward_input(self.grad.data(), wn->value.data(), dx.data(), B, H, Wd, Ci,
                                               Co, k, ph, pw, OH, OW);
                xn->accum_grad(dx);
            }
            if (wn->requires_grad) {
                Tensor<T> dw({k, k, Ci, Co});
                kernels::conv2d_backward_weight(xn->value.data(), self.grad.data(), dw.data(), B, H, Wd, Ci,
                                                Co, k, ph, pw, OH, OW);
                wn->accum_grad(dw);
            }
            if (bn->requires_grad) {
                Tensor<T> db({Co});
                kernels::conv2d_backward_bias(self.grad.data(), db.data(), B, OH, OW, Co);
                bn->accum_grad(db);
            }
        });
}

template <typename T>
Value<T> maxpool2x2(const Value<T>& x) {
    const Tensor<T>& X = x.tensor();
    if (X.rank() != 4) throw std::invalid_argument("maxpool2x2: expected rank-4 input, got " + shape_str(X.shape()));
    int64_t B = X.extent(0), H = X.extent(1), W = X.extent(2), C = X.extent(3);
    int64_t OH = H / 2, OW = W / 2;  // odd trailing row/column dropped
    if (OH < 1 || OW < 1) throw std::invalid_argument("maxpool2x2: input too small " + shape_str(X.shape()));
    Tensor<T> Y({B, OH, OW, C});
    auto arg = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(Y.numel()));
    kernels::maxpool2x2_forward(X.data(), Y.data(), arg->data(), B, H, W, C, OH, OW);
    auto xn = x.node();
    Shape in_shape = X.shape();
    return detail::make_node<T>("maxpool2x2", std::move(Y), {xn}, [arg, in_shape](GradNode<T>& self) {
        Tensor<T> dx(in_shape);
        kernels::maxpool2x2_backward(self.grad.data(), arg->data(), dx.data(), self.grad.numel());
        self.parents[0]->accum_grad(dx);
    });
}

template <typename T>
Value<T> relu(const Value<T>& x) {
    Tensor<T> y = detail::map(x.tensor(), [](T v) { return v > T(0) ? v : T(0); });
    auto xn = x.node();
    return detail::make_node<T>("relu", std::move(y), {xn}, [](GradNode<T>& self) {
        const Tensor<T>& xin = self.parents[0]->value;
        Tensor<T> dx(xin.shape());
        const T* xp = xin.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        kernels::parallel_for(xin.numel(), [&](int64_t i) { dp[i] = xp[i] > T(0) ? gp[i] : T(0); });
        self.parents[0]->accum_grad(dx);
    });
}

inline constexpr double kBatchnormEps = 1e-5;

/// Batch normalization over the last axis using current-batch statistics in
/// every mode; gamma and beta are per-channel.
template <typename T>
Value<T> batchnorm(const Value<T>& x, const Value<T>& gamma, const Value<T>& beta) {
    const Tensor<T>& X = x.tensor();
    if (X.rank() < 2) throw std::invalid_argument("batchnorm: expected rank >= 2, got " + shape_str(X.shape()));
    int64_t C = X.extent(X.rank() - 1);
    int64_t rows = X.numel() / C;
    const Tensor<T>&G = gamma.tensor(), &Bt = beta.tensor();
    if (G.rank() != 1 || G.extent(0) != C) detail::shape_error("batchnorm gamma", X.shape(), G.shape());
    if (Bt.rank() != 1 || Bt.extent(0) != C) detail::shape_error("batchnorm beta", X.shape(), Bt.shape());

    Tensor<T> mean({C}), var({C});
    kernels::batchnorm_stats(X.data(), mean.data(), var.data(), rows, C);
    auto inv_std = std::make_shared<Tensor<T>>(Shape{C});
    for (int64_t c = 0; c < C; ++c)
        (*inv_std)[c] = T(1) / std::sqrt(var[c] + static_cast<T>(kBatchnormEps));
    Tensor<T> y(X.shape());
    auto xhat = std::make_shared<Tensor<T>>(X.shape());
    kernels::batchnorm_forward(X.data(), mean.data(), inv_std->data(), G.data(), Bt.data(), y.data(),
                               xhat->data(), rows, C);
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    return detail::make_node<T>("batchnorm", std::move(y), {xn, gn, bn},
                                [xhat, inv_std, rows, C](GradNode<T>& self) {
                                    Tensor<T> sum_dy({C}), sum_dy_xhat({C});
                                    kernels::batchnorm_reduce(self.grad.data(), xhat->data(), sum_dy.data(),
                                                              sum_dy_xhat.data(), rows, C);
                                    auto& xn = self.parents[0];
                                    auto& gn = self.parents[1];
                                    auto& bn = self.parents[2];
                                    if (xn->requires_grad) {
                                        Tensor<T> dx(xn->value.shape());
                                        kernels::batchnorm_backward_input(self.grad.data(), xhat->data(),
                                                                          inv_std->data(), gn->value.data(),
                                                                          sum_dy.data(), sum_dy_xhat.data(),
                                                                          dx.data(), rows, C);
                                        xn->accum_grad(dx);
                                    }
                                    if (gn->requires_grad) gn->accum_grad(sum_dy_xhat);
                                    if (bn->requires_grad) bn->accum_grad(sum_dy);
                                });
}

/// Elementwise sum; also accepts a rank-1 bias matching the last axis.
template <typename T>
Value<T> add(const Value<T>& a, const Value<T>& b) {
    const Tensor<T>&A = a.tensor(), &B = b.tensor();
    bool bias_form = B.rank() == 1 && A.rank() >= 2 && B.extent(0) == A.extent(A.rank() - 1);
    if (!A.same_shape(B) && !bias_form) detail::shape_error("add", A.shape(), B.shape());
    Tensor<T> y(A.shape());
    const T* ap = A.data();
    const T* bp = B.data();
    T* yp = y.data();
    if (bias_form) {
        int64_t C = B.extent(0);
        kernels::parallel_for(A.numel(), [&](int64_t i) { yp[i] = ap[i] + bp[i % C]; });
    } else {
        kernels::parallel_for(A.numel(), [&](int64_t i) { yp[i] = ap[i] + bp[i]; });
    }
    auto an = a.node(), bn = b.node();
    return detail::make_node<T>("add", std::move(y), {an, bn}, [bias_form](GradNode<T>& self) {
        auto& an = self.parents[0];
        auto& bn = self.parents[1];
        if (an->requires_grad) an->accum_grad(self.grad);
        if (bn->requires_grad) {
            if (!bias_form) {
                bn->accum_grad(self.grad);
            } else {
                int64_t C = bn->value.extent(0);
                int64_t rows = self.grad.numel() / C;
                Tensor<T> db({C});
                const T* gp = self.grad.data();
                T* dp = db.data();
                for (int64_t c = 0; c < C; ++c) {
                    T acc = T(0);
                    for (int64_t r = 0; r < rows; ++r) acc += gp[r * C + c];
                    dp[c] = acc;
                }
                bn->accum_grad(db);
            }
        }
    });
}

template <typename T>
Value<T> sub(const Value<T>& a, const Value<T>& b) {
    const Tensor<T>&A = a.tensor(), &B = b.tensor();
    if (!A.same_shape(B)) detail::shape_error("sub", A.shape(), B.shape());
    Tensor<T> y(A.shape());
    const T* ap = A.data();
    const T* bp = B.data();
    T* yp = y.data();
    kernels::parallel_for(A.numel(), [&](int64_t i) { yp[i] = ap[i] - bp[i]; });
    auto an = a.node(), bn = b.node();
    return detail::make_node<T>("sub", std::move(y), {an, bn}, [](GradNode<T>& self) {
        auto& an = self.parents[0];
        auto& bn = self.parents[1];
        if (an->requires_grad) an->accum_grad(self.grad);
        if (bn->requires_grad) {
            Tensor<T> db = detail::map(self.grad, [](T v) { return -v; });
            bn->accum_grad(db);
        }
    });
}

template <typename T>
Value<T> scalar_mul(const Value<T>& x, double s) {
    T sc = static_cast<T>(s);
    Tensor<T> y = detail::map(x.tensor(), [sc](T v) { return sc * v; });
    auto xn = x.node();
    return detail::make_node<T>("scalar_mul", std::move(y), {xn}, [sc](GradNode<T>& self) {
        Tensor<T> dx = detail::map(self.grad, [sc](T v) { return sc * v; });
        self.parents[0]->accum_grad(dx);
    });
}

template <typename T>
Value<T> elementwise_mul(const Value<T>& a, const Value<T>& b) {
    const Tensor<T>&A = a.tensor(), &B = b.tensor();
    if (!A.same_shape(B)) detail::shape_error("elementwise_mul", A.shape(), B.shape());
    Tensor<T> y(A.shape());
    const T* ap = A.data();
    const T* bp = B.data();
    T* yp = y.data();
    kernels::parallel_for(A.numel(), [&](int64_t i) { yp[i] = ap[i] * bp[i]; });
    auto an = a.node(), bn = b.node();
    return detail::make_node<T>("elementwise_mul", std::move(y), {an, bn}, [](GradNode<T>& self) {
        auto& an = self.parents[0];
        auto& bn = self.parents[1];
        const T* gp = self.grad.data();
        if (an->requires_grad) {
            Tensor<T> da(an->value.shape());
            const T* bp = bn->value.data();
            T* dp = da.data();
            kernels::parallel_for(da.numel(), [&](int64_t i) { dp[i] = gp[i] * bp[i]; });
            an->accum_grad(da);
        }
        if (bn->requires_grad) {
            Tensor<T> db(bn->value.shape());
            const T* ap = an->value.data();
            T* dp = db.data();
            kernels::parallel_for(db.numel(), [&](int64_t i) { dp[i] = gp[i] * ap[i]; });
            bn->accum_grad(db);
        }
    });
}

namespace detail {

template <typename T>
Value<T> reduce_all(const Value<T>& x, bool mean, const char* op) {
    int64_t n = x.numel();
    const T* xp = x.tensor().data();
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += xp[i];
    if (mean) acc /= static_cast<T>(n);
    auto xn = x.node();
    return make_node<T>(op, Tensor<T>::scalar(acc), {xn}, [mean, n](GradNode<T>& self) {
        T g = self.grad[0];
        if (mean) g /= static_cast<T>(n);
        Tensor<T> dx(self.parents[0]->value.shape(), g);
        self.parents[0]->accum_grad(dx);
    });
}

// rank-2 only, keepdim: axis 0 -> [1,N], axis 1 -> [M,1]
template <typename T>
Value<T> reduce_axis(const Value<T>& x, int axis, bool mean, const char* op) {
    const Tensor<T>& X = x.tensor();
    if (X.rank() != 2 || (axis != 0 && axis != 1))
        throw std::invalid_argument(std::string(op) + ": axis reduction supports rank-2 tensors, axis 0 or 1, got " +
                                    shape_str(X.shape()) + " axis " + std::to_string(axis));
    int64_t M = X.extent(0), N = X.extent(1);
    int64_t count = axis == 0 ? M : N;
    Shape oshape = axis == 0 ? Shape{1, N} : Shape{M, 1};
    Tensor<T> y(oshape);
    if (axis == 0) {
        for (int64_t j = 0; j < N; ++j) {
            T acc = T(0);
            for (int64_t i = 0; i < M; ++i) acc += X.at(i, j);
            y[j] = mean ? acc / static_cast<T>(count) : acc;
        }
    } else {
        for (int64_t i = 0; i < M; ++i) {
            T acc = T(0);
            for (int64_t j = 0; j < N; ++j) acc += X.at(i, j);
            y[i] = mean ? acc / static_cast<T>(count) : acc;
        }
    }
    auto xn = x.node();
    return make_node<T>(op, std::move(y), {xn}, [axis, mean, M, N, count](GradNode<T>& self) {
        Tensor<T> dx({M, N});
        T scale = mean ? T(1) / static_cast<T>(count) : T(1);
        const T* gp = self.grad.data();
        for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j) dx.at(i, j) = scale * (axis == 0 ? gp[j] : gp[i]);
        self.parents[0]->accum_grad(dx);
    });
}

}  // namespace detail

inline constexpr int kReduceAll = -1;

template <typename T>
Value<T> reduce_sum(const Value<T>& x, int axis = kReduceAll) {
    return axis == kReduceAll ? detail::reduce_all(x, false, "reduce_sum")
                              : detail::reduce_axis(x, axis, false, "reduce_sum");
}

template <typename T>
Value<T> reduce_mean(const Value<T>& x, int axis = kReduceAll) {
    return axis == kReduceAll ? detail::reduce_all(x, true, "reduce_mean")
                              : detail::reduce_axis(x, axis, true, "reduce_mean");
}

inline constexpr double kNormFloor = 1e-12;

/// Row-wise L2 normalization along the last axis with a norm floor.
template <typename T>
Value<T> l2_normalize(const Value<T>& x) {
    const Tensor<T>& X = x.tensor();
    int64_t C = X.extent(X.rank() - 1);
    int64_t rows = X.numel() / C;
    Tensor<T> y(X.shape());
    auto norms = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
    const T* xp = X.data();
    T* yp = y.data();
    for (int64_t r = 0; r < rows; ++r) {
        T ss = T(0);
        for (int64_t c = 0; c < C; ++c) ss += xp[r * C + c] * xp[r * C + c];
        T n = std::sqrt(ss);
        (*norms)[static_cast<size_t>(r)] = n;
        T s = T(1) / std::max(n, static_cast<T>(kNormFloor));
        for (int64_t c = 0; c < C; ++c) yp[r * C + c] = s * xp[r * C + c];
    }
    auto xn = x.node();
    return detail::make_node<T>("l2_normalize", std::move(y), {xn}, [norms, rows, C](GradNode<T>& self) {
        // d/dx (x/n) = (I - y y^T)/n above the floor; below it the scale is constant.
        Tensor<T> dx(self.parents[0]->value.shape());
        const T* yp = self.value.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        for (int64_t r = 0; r < rows; ++r) {
            T n = (*norms)[static_cast<size_t>(r)];
            T s = T(1) / std::max(n, static_cast<T>(kNormFloor));
            if (n > static_cast<T>(kNormFloor)) {
                T dot = T(0);
                for (int64_t c = 0; c < C; ++c) dot += yp[r * C + c] * gp[r * C + c];
                for (int64_t c = 0; c < C; ++c) dp[r * C + c] = s * (gp[r * C + c] - yp[r * C + c] * dot);
            } else {
                for (int64_t c = 0; c < C; ++c) dp[r * C + c] = s * gp[r * C + c];
            }
        }
        self.parents[0]->accum_grad(dx);
    });
}

template <typename T>
Value<T> cos(const Value<T>& x) {
    Tensor<T> y = detail::map(x.tensor(), [](T v) { return std::cos(v); });
    auto xn = x.node();
    return detail::make_node<T>("cos", std::move(y), {xn}, [](GradNode<T>& self) {
        const Tensor<T>& xin = self.parents[0]->value;
        Tensor<T> dx(xin.shape());
        const T* xp = xin.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        kernels::parallel_for(xin.numel(), [&](int64_t i) { dp[i] = -std::sin(xp[i]) * gp[i]; });
        self.parents[0]->accum_grad(dx);
    });
}

inline constexpr double kArccosClamp = 1e-7;
inline constexpr double kArccosDomainSlack = 1e-3;

/// arccos with the argument clamped to [-1+1e-7, 1-1e-7] in both the forward
/// value and the gradient; inputs further than 1e-3 outside [-1,1] indicate an
/// upstream normalization bug and are rejected.
template <typename T>
Value<T> arccos(const Value<T>& x) {
    const Tensor<T>& X = x.tensor();
    const T lo = static_cast<T>(-1.0 + kArccosClamp), hi = static_cast<T>(1.0 - kArccosClamp);
    const T* xp = X.data();
    for (int64_t i = 0; i < X.numel(); ++i) {
        double v = static_cast<double>(xp[i]);
        if (v < -1.0 - kArccosDomainSlack || v > 1.0 + kArccosDomainSlack)
            throw std::domain_error("arccos: input " + std::to_string(v) + " outside [-1,1] beyond tolerance");
    }
    Tensor<T> y = detail::map(X, [lo, hi](T v) { return std::acos(std::min(std::max(v, lo), hi)); });
    auto xn = x.node();
    return detail::make_node<T>("arccos", std::move(y), {xn}, [lo, hi](GradNode<T>& self) {
        const Tensor<T>& xin = self.parents[0]->value;
        Tensor<T> dx(xin.shape());
        const T* xp = xin.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        kernels::parallel_for(xin.numel(), [&](int64_t i) {
            T c = std::min(std::max(xp[i], lo), hi);
            dp[i] = -gp[i] / std::sqrt(T(1) - c * c);
        });
        self.parents[0]->accum_grad(dx);
    });
}

template <typename T>
Value<T> exp(const Value<T>& x) {
    Tensor<T> y = detail::map(x.tensor(), [](T v) { return std::exp(v); });
    auto xn = x.node();
    return detail::make_node<T>("exp", std::move(y), {xn}, [](GradNode<T>& self) {
        Tensor<T> dx(self.value.shape());
        const T* yp = self.value.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        kernels::parallel_for(dx.numel(), [&](int64_t i) { dp[i] = yp[i] * gp[i]; });
        self.parents[0]->accum_grad(dx);
    });
}

template <typename T>
Value<T> log(const Value<T>& x) {
    const Tensor<T>& X = x.tensor();
    const T* xp = X.data();
    for (int64_t i = 0; i < X.numel(); ++i)
        if (xp[i] <= T(0)) throw std::domain_error("log: non-positive input " + std::to_string(static_cast<double>(xp[i])));
    Tensor<T> y = detail::map(X, [](T v) { return std::log(v); });
    auto xn = x.node();
    return detail::make_node<T>("log", std::move(y), {xn}, [](GradNode<T>& self) {
        const Tensor<T>& xin = self.parents[0]->value;
        Tensor<T> dx(xin.shape());
        const T* xp = xin.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        kernels::parallel_for(xin.numel(), [&](int64_t i) { dp[i] = gp[i] / xp[i]; });
        self.parents[0]->accum_grad(dx);
    });
}

/// Numerically stable log-softmax along the last axis (max subtraction form).
template <typename T>
Value<T> log_softmax(const Value<T>& x) {
    const Tensor<T>& X = x.tensor();
    int64_t C = X.extent(X.rank() - 1);
    int64_t rows = X.numel() / C;
    Tensor<T> y(X.shape());
    const T* xp = X.data();
    T* yp = y.data();
    for (int64_t r = 0; r < rows; ++r) {
        T mx = xp[r * C];
        for (int64_t c = 1; c < C; ++c) mx = std::max(mx, xp[r * C + c]);
        T sum = T(0);
        for (int64_t c = 0; c < C; ++c) sum += std::exp(xp[r * C + c] - mx);
        T lse = mx + std::log(sum);
        for (int64_t c = 0; c < C; ++c) yp[r * C + c] = xp[r * C + c] - lse;
    }
    auto xn = x.node();
    return detail::make_node<T>("log_softmax", std::move(y), {xn}, [rows, C](GradNode<T>& self) {
        Tensor<T> dx(self.value.shape());
        const T* yp = self.value.data();
        const T* gp = self.grad.data();
        T* dp = dx.data();
        for (int64_t r = 0; r < rows; ++r) {
            T gsum = T(0);
            for (int64_t c = 0; c < C; ++c) gsum += gp[r * C + c];
            for (int64_t c = 0; c < C; ++c) dp[r * C + c] = gp[r * C + c] - std::exp(yp[r * C + c]) * gsum;
        }
        self.parents[0]->accum_grad(dx);
    });
}

template <typename T>
Value<T> negate(const Value<T>& x) {
    Tensor<T> y = detail::map(x.tensor(), [](T v) { return -v; });
    auto xn = x.node();
    return detail::make_node<T>("negate", std::move(y), {xn}, [](GradNode<T>& self) {
        Tensor<T> dx = detail::map(self.grad, [](T v) { return -v; });
        self.parents[0]->accum_grad(dx);
    });
}

/// Concatenation along axis 0; trailing extents must match.
template <typename T>
Value<T> concat(const Value<T>& a, const Value<T>& b) {
    const Tensor<T>&A = a.tensor(), &B = b.tensor();
    if (A.rank() != B.rank()) detail::shape_error("concat", A.shape(), B.shape());
    for (int i = 1; i < A.rank(); ++i)
        if (A.extent(i) != B.extent(i)) detail::shape_error("concat", A.shape(), B.shape());
    Shape oshape = A.shape();
    oshape[0] += B.extent(0);
    Tensor<T> y(oshape);
    std::copy(A.data(), A.data() + A.numel(), y.data());
    std::copy(B.data(), B.data() + B.numel(), y.data() + A.numel());
    auto an = a.node(), bn = b.node();
    int64_t na = A.numel();
    return detail::make_node<T>("concat", std::move(y), {an, bn}, [na](GradNode<T>& self) {
        auto& an = self.parents[0];
        auto& bn = self.parents[1];
        if (an->requires_grad) {
            Tensor<T> da(an->value.shape());
            std::copy(self.grad.data(), self.grad.data() + na, da.data());
            an->accum_grad(da);
        }
        if (bn->requires_grad) {
            Tensor<T> db(bn->value.shape());
            std::copy(self.grad.data() + na, self.grad.data() + self.grad.numel(), db.data());
            bn->accum_grad(db);
        }
    });
}

/// [B, ...] -> [B, product of the rest]; shape change only.
template <typename T>
Value<T> flatten(const Value<T>& x) {
    const Tensor<T>& X = x.tensor();
    int64_t B = X.extent(0);
    Tensor<T> y = X.reshaped({B, X.numel() / B});
    auto xn = x.node();
    return detail::make_node<T>("flatten", std::move(y), {xn}, [](GradNode<T>& self) {
        self.parents[0]->accum_grad(self.grad.reshaped(self.parents[0]->value.shape()));
    });
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
std::vector<GradNode<T>*> topo_order(GradNode<T>* sink) {
    std::vector<GradNode<T>*> order;
    std::vector<std::pair<GradNode<T>*, size_t>> stack;
    std::unordered_set<GradNode<T>*> visited;
    stack.push_back({sink, 0});
    visited.insert(sink);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            GradNode<T>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // post-order: parents before consumers
}

}  // namespace detail

/// Reverse sweep from a scalar loss. Gradients land on every requiring node;
/// with a store, parameter-leaf gradients are written into its accumulators
/// (unreached parameters are left at zero).
template <typename T>
void backward(const Value<T>& loss, ParamStore<T>* store = nullptr) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (store) store->zero_grads();
    GradNode<T>* sink = loss.node().get();
    if (!sink->requires_grad) return;
    auto order = detail::topo_order(sink);
    sink->grad = Tensor<T>::scalar(T(1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        GradNode<T>* n = *it;
        if (n->grad.empty()) continue;
        if (n->backprop) n->backprop(*n);
    }
    if (store) {
        for (GradNode<T>* n : order) {
            if (!n->param_name.empty() && !n->grad.empty()) {
                Tensor<T>& acc = store->grad(n->param_name);
                const T* g = n->grad.data();
                T* a = acc.data();
                for (int64_t i = 0; i < acc.numel(); ++i) a[i] += g[i];
            }
        }
    }
}

/// Max relative error between analytic gradients and central finite
/// differences of a scalar function over every parameter in the store.
/// Meant to run in f64.
template <typename T>
double gradient_check(const std::function<Value<T>()>& fn, ParamStore<T>& store, double epsilon) {
    Value<T> loss = fn();
    if (loss.numel() != 1) throw std::invalid_argument("gradient_check: function must return a scalar");
    if (!std::isfinite(static_cast<double>(loss.tensor()[0])))
        throw std::domain_error("gradient_check: non-finite function value");
    backward(loss, &store);

    std::vector<Tensor<T>> analytic;
    analytic.reserve(store.size());
    for (const auto& e : store.entries()) analytic.push_back(e.grad);

    double max_rel = 0.0;
    for (size_t pi = 0; pi < store.size(); ++pi) {
        auto& e = store.entries()[pi];
        T* v = e.value.data();
        for (int64_t i = 0; i < e.value.numel(); ++i) {
            T orig = v[i];
            v[i] = orig + static_cast<T>(epsilon);
            double fp = static_cast<double>(fn().tensor()[0]);
            v[i] = orig - static_cast<T>(epsilon);
            double fm = static_cast<double>(fn().tensor()[0]);
            v[i] = orig;
            double numeric = (fp - fm) / (2.0 * epsilon);
            double rel = std::abs(static_cast<double>(analytic[pi][i]) - numeric) /
                         std::max(1.0, std::abs(numeric));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace protomargin
