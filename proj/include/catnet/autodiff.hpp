#pragma once

// Reverse-mode differentiation over dense tensors.
//
// A Graph owns every node created during one forward pass. Nodes are kept in
// creation order, which is a topological order, so backward() simply walks the
// list in reverse. Ops whose inputs do not require gradients record no
// backward closure and keep no saved state.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "catnet/tensor.hpp"

namespace catnet::ad {

/// A learnable tensor with its gradient accumulator.
template <class S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Buffer<S> grad;

    Parameter() = default;
    Parameter(std::string n, Tensor<S> v)
        : name(std::move(n)), value(std::move(v)), grad(value.size(), S(0)) {}

    void zero_grad() { std::fill(grad.begin(), grad.end(), S(0)); }
};

template <class S>
struct Node {
    Tensor<S> value;
    Buffer<S> grad;  // lazily allocated, same size as value
    bool requires_grad = false;
    std::function<void()> backward;
    Parameter<S>* param = nullptr;

    S* grad_ptr() {
        if (grad.empty()) grad.assign(value.size(), S(0));
        return grad.data();
    }
    bool has_grad() const { return !grad.empty(); }
};

template <class S>
class Graph;

/// Handle to a node inside a Graph. Cheap to copy; valid while the Graph lives.
template <class S>
class Var {
public:
    Var() = default;
    Var(Graph<S>* g, Node<S>* n) : graph_(g), node_(n) {}

    bool valid() const { return node_ != nullptr; }
    const Tensor<S>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape; }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    Node<S>* node() const { return node_; }
    Graph<S>* graph() const { return graph_; }

    /// Gradient as a tensor; zeros when backward never reached this node.
    Tensor<S> grad() const {
        Tensor<S> g(shape());
        if (node_->has_grad()) g.data = node_->grad;
        return g;
    }

    S item() const {
        if (size() != 1) throw std::invalid_argument("item() on non-scalar " + shape_str(shape()));
        return node_->value.data[0];
    }

private:
    Graph<S>* graph_ = nullptr;
    Node<S>* node_ = nullptr;
};

template <class S>
class Graph {
public:
    explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }

    /// Raise std::runtime_error as soon as any op produces a non-finite value.
    void set_check_finite(bool on) { check_finite_ = on; }

    Var<S> constant(Tensor<S> t) { return make(std::move(t), false); }
    Var<S> variable(Tensor<S> t) { return make(std::move(t), grad_enabled_); }

    /// Leaf bound to a parameter; its gradient is added to p.grad by backward().
    Var<S> param(Parameter<S>& p) {
        auto it = param_nodes_.find(&p);
        if (it != param_nodes_.end()) return Var<S>(this, it->second);
        Var<S> v = make(p.value, grad_enabled_);
        v.node()->param = &p;
        param_nodes_.emplace(&p, v.node());
        return v;
    }

    /// Make later param(p) calls return `v` instead of a fresh leaf.
    void bind_param(Parameter<S>& p, Var<S> v) {
        if (v.graph() != this) throw std::invalid_argument("bind_param: variable belongs to another graph");
        if (v.shape() != p.value.shape)
            throw std::invalid_argument("bind_param: shape " + shape_str(v.shape()) + " does not match parameter '" +
                                        p.name + "' " + shape_str(p.value.shape));
        if (param_nodes_.count(&p)) throw std::logic_error("bind_param: '" + p.name + "' already bound");
        param_nodes_.emplace(&p, v.node());
    }

    Var<S> make(Tensor<S> value, bool requires_grad) {
        if (check_finite_ && !value.all_finite())
            throw std::runtime_error("non-finite value produced at node " + std::to_string(nodes_.size()) +
                                     " with shape " + shape_str(value.shape));
        auto n = std::make_unique<Node<S>>();
        n->value = std::move(value);
        n->requires_grad = requires_grad && grad_enabled_;
        nodes_.push_back(std::move(n));
        return Var<S>(this, nodes_.back().get());
    }

    /// Propagate dloss/dnode to every reachable node and flush parameter grads.
    void backward(Var<S> loss) {
        if (loss.graph() != this) throw std::invalid_argument("backward: loss belongs to another graph");
        if (loss.size() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        if (done_) throw std::logic_error("backward: graph already differentiated");
        done_ = true;
        if (!loss.requires_grad()) return;
        loss.node()->grad_ptr()[0] = S(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
            Node<S>& n = **it;
            if (n.backward && n.has_grad()) n.backward();
        }
        for (auto& [p, n] : param_nodes_) {
            if (!n->has_grad()) continue;
            for (std::size_t i = 0; i < n->grad.size(); ++i) p->grad[i] += n->grad[i];
        }
    }

private:
    std::vector<std::unique_ptr<Node<S>>> nodes_;
    std::unordered_map<Parameter<S>*, Node<S>*> param_nodes_;
    bool grad_enabled_;
    bool check_finite_ = false;
    bool done_ = false;
};

namespace detail {

template <class S>
Graph<S>& graph_of(std::initializer_list<Var<S>> vs) {
    Graph<S>* g = nullptr;
    for (const auto& v : vs) {
        if (!v.valid()) continue;
        if (g && v.graph() != g) throw std::invalid_argument("operands belong to different graphs");
        g = v.graph();
    }
    if (!g) throw std::invalid_argument("op called without operands");
    return *g;
}

template <class S>
bool any_rg(std::initializer_list<Var<S>> vs) {
    for (const auto& v : vs)
        if (v.requires_grad()) return true;
    return false;
}

template <class S>
void require_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

/// Splits a rank-2/3 sequence tensor into (batch, time, features).
inline void seq_dims(const char* op, const Shape& s, std::size_t& B, std::size_t& T, std::size_t& F) {
    if (s.size() == 2) {
        B = 1, T = s[0], F = s[1];
    } else if (s.size() == 3) {
        B = s[0], T = s[1], F = s[2];
    } else {
        throw std::invalid_argument(std::string(op) + ": expected [T x F] or [B x T x F], got " + shape_str(s));
    }
}

inline Shape seq_shape(std::size_t rank, std::size_t B, std::size_t T, std::size_t F) {
    return rank == 2 ? Shape{T, F} : Shape{B, T, F};
}

template <class S>
S sigmoid(S x) {
    if (x >= 0) return S(1) / (S(1) + std::exp(-x));
    S e = std::exp(x);
    return e / (S(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Affine and elementwise ops

/// out = x W (+ b), x viewed as [rows x D].
template <class S>
Var<S> linear(Var<S> x, Var<S> W, Var<S> b = {}) {
    auto& g = detail::graph_of<S>({x, W, b});
    if (W.shape().size() != 2 || x.shape().empty() || x.shape().back() != W.shape()[0])
        throw std::invalid_argument("linear: shape mismatch x " + shape_str(x.shape()) + " vs W " +
                                    shape_str(W.shape()));
    const std::size_t D = W.shape()[0], F = W.shape()[1], N = x.size() / D;
    if (b.valid() && (b.shape().size() != 1 || b.shape()[0] != F))
        throw std::invalid_argument("linear: bias shape " + shape_str(b.shape()) + " does not match W " +
                                    shape_str(W.shape()));
    Shape os = x.shape();
    os.back() = F;
    Tensor<S> out(os);
    auto Y = as_mat(out.data.data(), N, F);
    Y.noalias() = as_mat(x.value().data.data(), N, D) * as_mat(W.value().data.data(), D, F);
    if (b.valid()) Y.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.value().data.data(), F);
    const bool rg = detail::any_rg<S>({x, W, b});
    Var<S> o = g.make(std::move(out), rg);
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), wn = W.node(), bn = b.node(), on = o.node(), N, D, F] {
            auto dY = as_mat(on->grad.data(), N, F);
            if (xn->requires_grad)
                as_mat(xn->grad_ptr(), N, D).noalias() += dY * as_mat(wn->value.data.data(), D, F).transpose();
            if (wn->requires_grad)
                as_mat(wn->grad_ptr(), D, F).noalias() += as_mat(xn->value.data.data(), N, D).transpose() * dY;
            if (bn && bn->requires_grad)
                Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(bn->grad_ptr(), F) += dY.colwise().sum();
        };
    }
    return o;
}

enum class Activation { relu, sigmoid, tanh };

inline Activation parse_activation(std::string_view kind) {
    if (kind == "relu") return Activation::relu;
    if (kind == "sigmoid") return Activation::sigmoid;
    if (kind == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + std::string(kind) + "'");
}

namespace detail {
template <class S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <class S>
using ConstArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

/// Logistic function through tanh, which Eigen vectorizes.
template <class Derived>
auto logistic(const Eigen::ArrayBase<Derived>& x) {
    using S = typename Derived::Scalar;
    return (x * S(0.5)).tanh() * S(0.5) + S(0.5);
}
}  // namespace detail

template <class S>
Var<S> activation(Var<S> x, Activation kind) {
    auto& g = *x.graph();
    Tensor<S> out(x.shape());
    const auto n = static_cast<Eigen::Index>(out.size());
    detail::ConstArrMap<S> X(x.value().data.data(), n);
    detail::ArrMap<S> Y(out.data.data(), n);
    switch (kind) {
        case Activation::relu: Y = X.max(S(0)); break;
        case Activation::sigmoid: Y = detail::logistic(X); break;
        case Activation::tanh: Y = X.tanh(); break;
    }
    Var<S> o = g.make(std::move(out), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), kind, n] {
            detail::ArrMap<S> dX(xn->grad_ptr(), n);
            detail::ConstArrMap<S> Y(on->value.data.data(), n), Xv(xn->value.data.data(), n), dY(on->grad.data(), n);
            switch (kind) {
                case Activation::relu: dX += (Xv > S(0)).select(dY, S(0)); break;
                case Activation::sigmoid: dX += dY * Y * (S(1) - Y); break;
                case Activation::tanh: dX += dY * (S(1) - Y * Y); break;
            }
        };
    }
    return o;
}

template <class S>
Var<S> activation(Var<S> x, std::string_view kind) {
    return activation(x, parse_activation(kind));
}
template <class S>
Var<S> relu(Var<S> x) { return activation(x, Activation::relu); }
template <class S>
Var<S> sigmoid(Var<S> x) { return activation(x, Activation::sigmoid); }
template <class S>
Var<S> tanh(Var<S> x) { return activation(x, Activation::tanh); }

namespace detail {
template <class S, class Fwd, class Bwd>
Var<S> binary_same_shape(const char* name, Var<S> a, Var<S> b, Fwd fwd, Bwd bwd) {
    auto& g = graph_of<S>({a, b});
    require_same_shape(name, a, b);
    Tensor<S> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = fwd(a.value().data[i], b.value().data[i]);
    Var<S> o = g.make(std::move(out), any_rg<S>({a, b}));
    if (o.requires_grad()) {
        o.node()->backward = [an = a.node(), bn = b.node(), on = o.node(), bwd] {
            const auto& dy = on->grad;
            S* da = an->requires_grad ? an->grad_ptr() : nullptr;
            S* db = bn->requires_grad ? bn->grad_ptr() : nullptr;
            for (std::size_t i = 0; i < dy.size(); ++i) {
                auto [ga, gb] = bwd(an->value.data[i], bn->value.data[i], dy[i]);
                if (da) da[i] += ga;
                if (db) db[i] += gb;
            }
        };
    }
    return o;
}
}  // namespace detail

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    return detail::binary_same_shape<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [](S, S, S d) { return std::pair<S, S>{d, d}; });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
    return detail::binary_same_shape<S>(
        "sub", a, b, [](S x, S y) { return x - y; },
        [](S, S, S d) { return std::pair<S, S>{d, -d}; });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
    return detail::binary_same_shape<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [](S x, S y, S d) { return std::pair<S, S>{d * y, d * x}; });
}

template <class S>
Var<S> scale(Var<S> x, S c) {
    auto& g = *x.graph();
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.value().data[i] * c;
    Var<S> o = g.make(std::move(out), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), c] {
            S* dx = xn->grad_ptr();
            for (std::size_t i = 0; i < on->grad.size(); ++i) dx[i] += on->grad[i] * c;
        };
    }
    return o;
}

/// Sum of all elements, as a scalar.
template <class S>
Var<S> sum(Var<S> x) {
    auto& g = *x.graph();
    S acc = S(0);
    for (S v : x.value().data) acc += v;
    Var<S> o = g.make(Tensor<S>::scalar(acc), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node()] {
            S* dx = xn->grad_ptr();
            const S d = on->grad[0];
            for (std::size_t i = 0; i < xn->value.size(); ++i) dx[i] += d;
        };
    }
    return o;
}

template <class S>
Var<S> mean(Var<S> x) {
    return scale(sum(x), S(1) / static_cast<S>(x.size()));
}

template <class S>
Var<S> reshape(Var<S> x, Shape shape) {
    if (shape_size(shape) != x.size())
        throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    auto& g = *x.graph();
    Var<S> o = g.make(Tensor<S>(std::move(shape), x.value().data), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node()] {
            S* dx = xn->grad_ptr();
            for (std::size_t i = 0; i < on->grad.size(); ++i) dx[i] += on->grad[i];
        };
    }
    return o;
}

/// Concatenate along the last axis; all leading dimensions must agree.
template <class S>
Var<S> concat(const std::vector<Var<S>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat: no operands");
    auto& g = *xs.front().graph();
    Shape lead = xs.front().shape();
    if (lead.empty()) lead = {1};
    lead.pop_back();
    std::size_t total = 0;
    bool rg = false;
    std::vector<std::size_t> widths;
    for (const auto& x : xs) {
        if (x.graph() != &g) throw std::invalid_argument("concat: operands belong to different graphs");
        Shape s = x.shape();
        if (s.empty()) s = {1};
        std::size_t w = s.back();
        s.pop_back();
        if (s != lead)
            throw std::invalid_argument("concat: leading shape mismatch " + shape_str(xs.front().shape()) + " vs " +
                                        shape_str(x.shape()));
        widths.push_back(w);
        total += w;
        rg = rg || x.requires_grad();
    }
    const std::size_t rows = shape_size(lead);
    Shape os = lead;
    os.push_back(total);
    Tensor<S> out(os);
    std::size_t off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& src = xs[k].value().data;
        for (std::size_t r = 0; r < rows; ++r)
            std::copy_n(src.begin() + r * widths[k], widths[k], out.data.begin() + r * total + off);
        off += widths[k];
    }
    Var<S> o = g.make(std::move(out), rg);
    if (o.requires_grad()) {
        std::vector<Node<S>*> ins;
        for (const auto& x : xs) ins.push_back(x.node());
        o.node()->backward = [ins, widths, on = o.node(), rows, total] {
            std::size_t off = 0;
            for (std::size_t k = 0; k < ins.size(); ++k) {
                if (ins[k]->requires_grad) {
                    S* dx = ins[k]->grad_ptr();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < widths[k]; ++c)
                            dx[r * widths[k] + c] += on->grad[r * total + off + c];
                }
                off += widths[k];
            }
        };
    }
    return o;
}

/// Columns [begin, end) of the last axis.
template <class S>
Var<S> slice_last(Var<S> x, std::size_t begin, std::size_t end) {
    const std::size_t W = x.value().last();
    if (begin >= end || end > W)
        throw std::invalid_argument("slice_last: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                    ") outside last axis of " + shape_str(x.shape()));
    auto& g = *x.graph();
    const std::size_t rows = x.size() / W, w = end - begin;
    Shape os = x.shape().empty() ? Shape{1} : x.shape();
    os.back() = w;
    Tensor<S> out(os);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x.value().data.begin() + r * W + begin, w, out.data.begin() + r * w);
    Var<S> o = g.make(std::move(out), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), rows, W, w, begin] {
            S* dx = xn->grad_ptr();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < w; ++c) dx[r * W + begin + c] += on->grad[r * w + c];
        };
    }
    return o;
}

// ---------------------------------------------------------------------------
// Normalisation

/// Softmax over the last axis, max-subtracted.
template <class S>
Var<S> softmax(Var<S> x) {
    auto& g = *x.graph();
    const std::size_t K = x.value().last(), rows = x.size() / K;
    Tensor<S> out(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
        const S* in = x.value().data.data() + r * K;
        S* y = out.data.data() + r * K;
        S m = *std::max_element(in, in + K);
        S z = S(0);
        for (std::size_t k = 0; k < K; ++k) z += (y[k] = std::exp(in[k] - m));
        for (std::size_t k = 0; k < K; ++k) y[k] /= z;
    }
    Var<S> o = g.make(std::move(out), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), rows, K] {
            S* dx = xn->grad_ptr();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* y = on->value.data.data() + r * K;
                const S* dy = on->grad.data() + r * K;
                S dot = S(0);
                for (std::size_t k = 0; k < K; ++k) dot += dy[k] * y[k];
                for (std::size_t k = 0; k < K; ++k) dx[r * K + k] += y[k] * (dy[k] - dot);
            }
        };
    }
    return o;
}

/// Layer normalisation over the last axis with affine gain and bias ([F] each).
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
    auto& g = detail::graph_of<S>({x, gain, bias});
    const std::size_t F = x.value().last(), rows = x.size() / F;
    if (F < 2) throw std::invalid_argument("layer_norm: need at least 2 features, got " + shape_str(x.shape()));
    if (gain.size() != F || bias.size() != F)
        throw std::invalid_argument("layer_norm: gain/bias must have " + std::to_string(F) + " elements");
    Tensor<S> out(x.shape());
    Buffer<S> xhat(x.size()), rstd(rows);
    const S* gn = gain.value().data.data();
    const S* bs = bias.value().data.data();
    for (std::size_t r = 0; r < rows; ++r) {
        const S* in = x.value().data.data() + r * F;
        S mu = S(0);
        for (std::size_t f = 0; f < F; ++f) mu += in[f];
        mu /= static_cast<S>(F);
        S var = S(0);
        for (std::size_t f = 0; f < F; ++f) var += (in[f] - mu) * (in[f] - mu);
        var /= static_cast<S>(F);
        rstd[r] = S(1) / std::sqrt(var + eps);
        for (std::size_t f = 0; f < F; ++f) {
            xhat[r * F + f] = (in[f] - mu) * rstd[r];
            out.data[r * F + f] = xhat[r * F + f] * gn[f] + bs[f];
        }
    }
    const bool rg = detail::any_rg<S>({x, gain, bias});
    Var<S> o = g.make(std::move(out), rg);
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), gnn = gain.node(), bn = bias.node(), on = o.node(),
                              xhat = std::move(xhat), rstd = std::move(rstd), rows, F] {
            const S* dy = on->grad.data();
            const S* gv = gnn->value.data.data();
            S* dg = gnn->requires_grad ? gnn->grad_ptr() : nullptr;
            S* db = bn->requires_grad ? bn->grad_ptr() : nullptr;
            S* dx = xn->requires_grad ? xn->grad_ptr() : nullptr;
            for (std::size_t r = 0; r < rows; ++r) {
                S m1 = S(0), m2 = S(0);
                for (std::size_t f = 0; f < F; ++f) {
                    const std::size_t i = r * F + f;
                    if (dg) dg[f] += dy[i] * xhat[i];
                    if (db) db[f] += dy[i];
                    const S dxh = dy[i] * gv[f];
                    m1 += dxh;
                    m2 += dxh * xhat[i];
                }
                if (!dx) continue;
                m1 /= static_cast<S>(F);
                m2 /= static_cast<S>(F);
                for (std::size_t f = 0; f < F; ++f) {
                    const std::size_t i = r * F + f;
                    dx[i] += rstd[r] * (dy[i] * gv[f] - m1 - xhat[i] * m2);
                }
            }
        };
    }
    return o;
}

// ---------------------------------------------------------------------------
// Temporal ops on [T x F] or [B x T x F]

enum class Pool { max, avg };

/// Pooling along the time axis. Output length floor((T - k) / stride) + 1.
/// Max routes the gradient to the first argmax of each window.
template <class S>
Var<S> pool_time(Var<S> x, Pool kind, std::size_t k, std::size_t stride) {
    std::size_t B, T, F;
    detail::seq_dims("pool_time", x.shape(), B, T, F);
    if (k < 1 || stride < 1) throw std::invalid_argument("pool_time: kernel and stride must be >= 1");
    if (T < k)
        throw std::invalid_argument("pool_time: sequence length " + std::to_string(T) + " shorter than kernel " +
                                    std::to_string(k));
    const std::size_t L = (T - k) / stride + 1;
    auto& g = *x.graph();
    Tensor<S> out(detail::seq_shape(x.shape().size(), B, L, F));
    std::vector<std::uint32_t> arg;
    if (kind == Pool::max) arg.resize(out.size());
    const S* in = x.value().data.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l) {
            S* dst = out.data.data() + (b * L + l) * F;
            const S* row0 = in + (b * T + l * stride) * F;
            if (kind == Pool::max) {
                std::uint32_t* a = arg.data() + (b * L + l) * F;
                std::copy_n(row0, F, dst);
                std::fill_n(a, F, static_cast<std::uint32_t>(l * stride));
                for (std::size_t j = 1; j < k; ++j) {
                    const S* row = row0 + j * F;
                    const auto idx = static_cast<std::uint32_t>(l * stride + j);
                    for (std::size_t f = 0; f < F; ++f)
                        if (row[f] > dst[f]) dst[f] = row[f], a[f] = idx;
                }
            } else {
                for (std::size_t j = 0; j < k; ++j) {
                    const S* row = row0 + j * F;
                    for (std::size_t f = 0; f < F; ++f) dst[f] += row[f];
                }
                for (std::size_t f = 0; f < F; ++f) dst[f] /= static_cast<S>(k);
            }
        }
    Var<S> o = g.make(std::move(out), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), arg = std::move(arg), kind, B, T, F, L, k, stride] {
            S* dx = xn->grad_ptr();
            const S* dy = on->grad.data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t l = 0; l < L; ++l) {
                    const S* g = dy + (b * L + l) * F;
                    if (kind == Pool::max) {
                        const std::uint32_t* a = arg.data() + (b * L + l) * F;
                        for (std::size_t f = 0; f < F; ++f) dx[(b * T + a[f]) * F + f] += g[f];
                    } else {
                        for (std::size_t j = 0; j < k; ++j) {
                            S* row = dx + (b * T + l * stride + j) * F;
                            for (std::size_t f = 0; f < F; ++f) row[f] += g[f] / static_cast<S>(k);
                        }
                    }
                }
        };
    }
    return o;
}

/// Global pooling over time: [B x T x F] -> [B x F] (or [T x F] -> [F]).
template <class S>
Var<S> global_pool(Var<S> x, Pool kind) {
    std::size_t B, T, F;
    detail::seq_dims("global_pool", x.shape(), B, T, F);
    Var<S> p = pool_time(x, kind, T, 1);
    return reshape(p, x.shape().size() == 2 ? Shape{F} : Shape{B, F});
}

/// x ⊙ gate with gate [B x F] (or [F]) broadcast across time.
template <class S>
Var<S> gate_time(Var<S> x, Var<S> gate) {
    auto& g = detail::graph_of<S>({x, gate});
    std::size_t B, T, F;
    detail::seq_dims("gate_time", x.shape(), B, T, F);
    if (gate.size() != B * F)
        throw std::invalid_argument("gate_time: gate " + shape_str(gate.shape()) + " does not match " +
                                    shape_str(x.shape()));
    Tensor<S> out(x.shape());
    const S* xv = x.value().data.data();
    const S* gv = gate.value().data.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t f = 0; f < F; ++f) {
                const std::size_t i = (b * T + t) * F + f;
                out.data[i] = xv[i] * gv[b * F + f];
            }
    Var<S> o = g.make(std::move(out), detail::any_rg<S>({x, gate}));
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), gn = gate.node(), on = o.node(), B, T, F] {
            const S* dy = on->grad.data();
            S* dx = xn->requires_grad ? xn->grad_ptr() : nullptr;
            S* dg = gn->requires_grad ? gn->grad_ptr() : nullptr;
            const S* xv = xn->value.data.data();
            const S* gv = gn->value.data.data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t f = 0; f < F; ++f) {
                        const std::size_t i = (b * T + t) * F + f;
                        if (dx) dx[i] += dy[i] * gv[b * F + f];
                        if (dg) dg[b * F + f] += dy[i] * xv[i];
                    }
        };
    }
    return o;
}

/// One direction of an LSTM over [B x T x D] (or [T x D]); gate order i, f, g, o.
/// Wx [D x 4H], Wh [H x 4H], b [4H]. Zero initial state. With reverse=true the
/// cell runs from t = T-1 down to 0 and output row t is the state after
/// consuming x_t..x_{T-1}.
template <class S>
Var<S> lstm(Var<S> x, Var<S> Wx, Var<S> Wh, Var<S> b, bool reverse = false) {
    auto& g = detail::graph_of<S>({x, Wx, Wh, b});
    std::size_t B, T, D;
    detail::seq_dims("lstm", x.shape(), B, T, D);
    if (Wx.shape().size() != 2 || Wx.shape()[0] != D || Wx.shape()[1] % 4 != 0)
        throw std::invalid_argument("lstm: Wx " + shape_str(Wx.shape()) + " does not match input " +
                                    shape_str(x.shape()));
    const std::size_t G = Wx.shape()[1], H = G / 4;
    if (Wh.shape() != Shape{H, G} || b.shape() != Shape{G})
        throw std::invalid_argument("lstm: Wh/b shapes " + shape_str(Wh.shape()) + ", " + shape_str(b.shape()) +
                                    " inconsistent with hidden size " + std::to_string(H));

    // Time-major working buffers: [T][B][*].
    Buffer<S> xt(T * B * D);
    const S* xv = x.value().data.data();
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t t = 0; t < T; ++t) std::copy_n(xv + (bb * T + t) * D, D, xt.data() + (t * B + bb) * D);

    Buffer<S> gates(T * B * G);  // activated i, f, g, o
    Buffer<S> cell(T * B * H), tanh_c(T * B * H), hid(T * B * H);
    {
        auto P = as_mat(gates.data(), T * B, G);
        P.noalias() = as_mat(xt.data(), T * B, D) * as_mat(Wx.value().data.data(), D, G);
        P.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.value().data.data(), G);
    }
    const auto Whm = as_mat(Wh.value().data.data(), H, G);
    for (std::size_t s = 0; s < T; ++s) {
        const std::size_t t = reverse ? T - 1 - s : s;
        auto Z = as_mat(gates.data() + t * B * G, B, G);
        if (s > 0) {
            const std::size_t tp = reverse ? t + 1 : t - 1;
            Z.noalias() += as_mat(static_cast<const S*>(hid.data() + tp * B * H), B, H) * Whm;
        }
        auto Za = Z.array();
        Za.leftCols(H) = detail::logistic(Za.leftCols(H));
        Za.middleCols(H, H) = detail::logistic(Za.middleCols(H, H));
        Za.middleCols(2 * H, H) = Za.middleCols(2 * H, H).tanh();
        Za.rightCols(H) = detail::logistic(Za.rightCols(H));
        auto C = as_mat(cell.data() + t * B * H, B, H).array();
        C = Za.leftCols(H) * Za.middleCols(2 * H, H);
        if (s > 0) C += Za.middleCols(H, H) * as_mat(static_cast<const S*>(cell.data() + (reverse ? t + 1 : t - 1) * B * H), B, H).array();
        auto TC = as_mat(tanh_c.data() + t * B * H, B, H).array();
        TC = C.tanh();
        as_mat(hid.data() + t * B * H, B, H).array() = Za.rightCols(H) * TC;
    }
    Tensor<S> out(detail::seq_shape(x.shape().size(), B, T, H));
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t t = 0; t < T; ++t) std::copy_n(hid.data() + (t * B + bb) * H, H, out.data.data() + (bb * T + t) * H);

    const bool rg = detail::any_rg<S>({x, Wx, Wh, b});
    Var<S> o = g.make(std::move(out), rg);
    if (!o.requires_grad()) return o;
    o.node()->backward = [xn = x.node(), wxn = Wx.node(), whn = Wh.node(), bn = b.node(), on = o.node(),
                          xt = std::move(xt), gates = std::move(gates), cell = std::move(cell),
                          tanh_c = std::move(tanh_c), hid = std::move(hid), B, T, D, G, H, reverse] {
        Buffer<S> dz(T * B * G);
        Buffer<S> dh_next(B * H, S(0)), dc_next(B * H, S(0));
        const auto Whm = as_mat(whn->value.data.data(), H, G);
        const S* dy = on->grad.data();
        RowMat<S> dWh = RowMat<S>::Zero(static_cast<Eigen::Index>(H), static_cast<Eigen::Index>(G));
        for (std::size_t s = T; s-- > 0;) {
            const std::size_t t = reverse ? T - 1 - s : s;
            const auto Z = as_mat(gates.data() + t * B * G, B, G).array();
            const auto I = Z.leftCols(H), Fg = Z.middleCols(H, H), Cg = Z.middleCols(2 * H, H), O = Z.rightCols(H);
            const auto TC = as_mat(tanh_c.data() + t * B * H, B, H).array();
            auto D = as_mat(dz.data() + t * B * G, B, G).array();
            auto dC = as_mat(dc_next.data(), B, H).array();
            // dh_next holds the recurrent part; add this step's output gradient
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t j = 0; j < H; ++j) dh_next[bb * H + j] += dy[(bb * T + t) * H + j];
            const auto dH = as_mat(dh_next.data(), B, H).array();
            dC += dH * O * (S(1) - TC * TC);
            D.leftCols(H) = dC * Cg * I * (S(1) - I);
            if (s > 0)
                D.middleCols(H, H) =
                    dC * as_mat(cell.data() + (reverse ? t + 1 : t - 1) * B * H, B, H).array() * Fg * (S(1) - Fg);
            else
                D.middleCols(H, H).setZero();
            D.middleCols(2 * H, H) = dC * I * (S(1) - Cg * Cg);
            D.rightCols(H) = dH * TC * O * (S(1) - O);
            dC *= Fg;
            auto dZ = as_mat(static_cast<const S*>(dz.data() + t * B * G), B, G);
            as_mat(dh_next.data(), B, H).noalias() = dZ * Whm.transpose();
            if (s > 0) {
                const std::size_t tp = reverse ? t + 1 : t - 1;
                dWh.noalias() += as_mat(static_cast<const S*>(hid.data() + tp * B * H), B, H).transpose() * dZ;
            }
        }
        const auto dZall = as_mat(static_cast<const S*>(dz.data()), T * B, G);
        if (whn->requires_grad) as_mat(whn->grad_ptr(), H, G) += dWh;
        if (wxn->requires_grad)
            as_mat(wxn->grad_ptr(), D, G).noalias() += as_mat(xt.data(), T * B, D).transpose() * dZall;
        if (bn->requires_grad)
            Eigen::Map<Eigen::Matrix<S, 1, Eigen::Dynamic>>(bn->grad_ptr(), G) += dZall.colwise().sum();
        if (xn->requires_grad) {
            RowMat<S> dX = dZall * as_mat(wxn->value.data.data(), D, G).transpose();
            S* dx = xn->grad_ptr();
            for (std::size_t bb = 0; bb < B; ++bb)
                for (std::size_t t = 0; t < T; ++t)
                    for (std::size_t j = 0; j < D; ++j) dx[(bb * T + t) * D + j] += dX(t * B + bb, j);
        }
    };
    return o;
}

/// Multi-head scaled dot-product attention. q [B x Tq x heads*d], k and v
/// [B x Tk x heads*d]; returns the concatenated head outputs [B x Tq x heads*d].
/// When `weights` is given it receives the attention matrices [B x heads x Tq x Tk].
template <class S>
Var<S> attention(Var<S> q, Var<S> k, Var<S> v, std::size_t heads, Tensor<S>* weights = nullptr) {
    auto& g = detail::graph_of<S>({q, k, v});
    std::size_t B, Tq, E, Bk, Tk, Ek;
    detail::seq_dims("attention", q.shape(), B, Tq, E);
    detail::seq_dims("attention", k.shape(), Bk, Tk, Ek);
    if (Bk != B || Ek != E || k.shape() != v.shape())
        throw std::invalid_argument("attention: incompatible q/k/v shapes " + shape_str(q.shape()) + ", " +
                                    shape_str(k.shape()) + ", " + shape_str(v.shape()));
    if (heads == 0 || E % heads != 0)
        throw std::invalid_argument("attention: width " + std::to_string(E) + " not divisible into " +
                                    std::to_string(heads) + " heads");
    const std::size_t d = E / heads;
    const S inv = S(1) / std::sqrt(static_cast<S>(d));
    using Strided = Eigen::Map<const RowMat<S>, 0, Eigen::OuterStride<>>;
    using StridedMut = Eigen::Map<RowMat<S>, 0, Eigen::OuterStride<>>;
    auto view = [&](const S* base, std::size_t rows) {
        return Strided(base, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d), Eigen::OuterStride<>(E));
    };

    Buffer<S> probs(B * heads * Tq * Tk);
    Tensor<S> out(q.shape());
    for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t h = 0; h < heads; ++h) {
            auto Q = view(q.value().data.data() + bb * Tq * E + h * d, Tq);
            auto K = view(k.value().data.data() + bb * Tk * E + h * d, Tk);
            auto V = view(v.value().data.data() + bb * Tk * E + h * d, Tk);
            auto A = as_mat(probs.data() + (bb * heads + h) * Tq * Tk, Tq, Tk);
            A.noalias() = (Q * K.transpose()) * inv;
            for (std::size_t r = 0; r < Tq; ++r) {
                detail::ArrMap<S> row(A.data() + r * Tk, static_cast<Eigen::Index>(Tk));
                row = (row - row.maxCoeff()).exp();
                row *= S(1) / row.sum();
            }
            StridedMut O(out.data.data() + bb * Tq * E + h * d, static_cast<Eigen::Index>(Tq),
                         static_cast<Eigen::Index>(d), Eigen::OuterStride<>(E));
            O.noalias() = A * V;
        }
    if (weights) *weights = Tensor<S>(Shape{B, heads, Tq, Tk}, probs);

    Var<S> o = g.make(std::move(out), detail::any_rg<S>({q, k, v}));
    if (!o.requires_grad()) return o;
    o.node()->backward = [qn = q.node(), kn = k.node(), vn = v.node(), on = o.node(), probs = std::move(probs), B,
                          Tq, Tk, E, d, heads, inv] {
        S* dq = qn->requires_grad ? qn->grad_ptr() : nullptr;
        S* dk = kn->requires_grad ? kn->grad_ptr() : nullptr;
        S* dv = vn->requires_grad ? vn->grad_ptr() : nullptr;
        auto cview = [&](const S* base, std::size_t rows) {
            return Strided(base, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d),
                           Eigen::OuterStride<>(E));
        };
        auto mview = [&](S* base, std::size_t rows) {
            return StridedMut(base, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d),
                              Eigen::OuterStride<>(E));
        };
        RowMat<S> dA, dS;
        for (std::size_t bb = 0; bb < B; ++bb)
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t qo = bb * Tq * E + h * d, ko = bb * Tk * E + h * d;
                auto A = as_mat(probs.data() + (bb * heads + h) * Tq * Tk, Tq, Tk);
                auto dO = cview(on->grad.data() + qo, Tq);
                auto V = cview(vn->value.data.data() + ko, Tk);
                if (dv) mview(dv + ko, Tk).noalias() += A.transpose() * dO;
                if (!dq && !dk) continue;
                dA.noalias() = dO * V.transpose();
                dS = A.array() * (dA.colwise() - (dA.array() * A.array()).rowwise().sum().matrix()).array();
                dS *= inv;
                if (dq) mview(dq + qo, Tq).noalias() += dS * cview(kn->value.data.data() + ko, Tk);
                if (dk) mview(dk + ko, Tk).noalias() += dS.transpose() * cview(qn->value.data.data() + qo, Tq);
            }
    };
    return o;
}

// ---------------------------------------------------------------------------
// Training-specific ops

/// Identity forward; backward multiplies the incoming gradient by -lambda.
template <class S>
Var<S> gradient_reversal(Var<S> x, S lambda) {
    if (lambda < S(0)) throw std::invalid_argument("gradient_reversal: lambda must be >= 0");
    auto& g = *x.graph();
    Var<S> o = g.make(x.value(), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), lambda] {
            S* dx = xn->grad_ptr();
            for (std::size_t i = 0; i < on->grad.size(); ++i) dx[i] += -lambda * on->grad[i];
        };
    }
    return o;
}

/// Inverted dropout: kept units are scaled by 1/(1-p). Identity when !training or p == 0.
template <class S, class Rng>
Var<S> dropout(Var<S> x, S p, Rng& rng, bool training) {
    if (p < S(0) || p >= S(1)) throw std::invalid_argument("dropout: rate must be in [0, 1)");
    if (!training || p == S(0)) return x;
    auto& g = *x.graph();
    std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
    const S s = S(1) / (S(1) - p);
    Buffer<S> mask(x.size());
    for (auto& m : mask) m = keep(rng) ? s : S(0);
    Tensor<S> out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.value().data[i] * mask[i];
    Var<S> o = g.make(std::move(out), x.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [xn = x.node(), on = o.node(), mask = std::move(mask)] {
            S* dx = xn->grad_ptr();
            for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += on->grad[i] * mask[i];
        };
    }
    return o;
}

namespace detail {
template <class S>
void check_labels(const char* op, const std::vector<int>& labels, std::size_t rows, std::size_t classes) {
    if (labels.size() != rows)
        throw std::invalid_argument(std::string(op) + ": " + std::to_string(labels.size()) + " labels for " +
                                    std::to_string(rows) + " rows");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 1 || static_cast<std::size_t>(labels[i]) > classes)
            throw std::invalid_argument(std::string(op) + ": label " + std::to_string(labels[i]) + " at row " +
                                        std::to_string(i) + " outside 1.." + std::to_string(classes));
}

template <class S>
void softmax_row(const S* in, S* out, std::size_t K) {
    S m = *std::max_element(in, in + K);
    S z = S(0);
    for (std::size_t k = 0; k < K; ++k) z += (out[k] = std::exp(in[k] - m));
    for (std::size_t k = 0; k < K; ++k) out[k] /= z;
}
}  // namespace detail

/// Mean over the batch of -alpha_y (1 - p_y)^gamma log p_y, p = softmax(logits),
/// p_y clamped to [1e-12, 1]. Labels are 1-based.
template <class S>
Var<S> focal_loss(Var<S> logits, const std::vector<int>& labels, S gamma, const std::vector<S>& alpha) {
    auto& g = *logits.graph();
    if (logits.shape().size() != 2) throw std::invalid_argument("focal_loss: logits must be [B x K]");
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    detail::check_labels<S>("focal_loss", labels, N, K);
    if (alpha.size() != K) throw std::invalid_argument("focal_loss: alpha needs one weight per class");
    for (S a : alpha)
        if (!(a > S(0))) throw std::invalid_argument("focal_loss: alpha weights must be positive");
    if (gamma < S(0)) throw std::invalid_argument("focal_loss: gamma must be >= 0");
    constexpr S floor_p = S(1e-12);
    Buffer<S> probs(N * K);
    S total = S(0);
    for (std::size_t i = 0; i < N; ++i) {
        detail::softmax_row(logits.value().data.data() + i * K, probs.data() + i * K, K);
        const std::size_t y = static_cast<std::size_t>(labels[i] - 1);
        const S p = std::clamp(probs[i * K + y], floor_p, S(1));
        total += -alpha[y] * std::pow(S(1) - p, gamma) * std::log(p);
    }
    Var<S> o = g.make(Tensor<S>::scalar(total / static_cast<S>(N)), logits.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [ln = logits.node(), on = o.node(), probs = std::move(probs), labels, gamma, alpha, N,
                              K] {
            S* dz = ln->grad_ptr();
            const S scale = on->grad[0] / static_cast<S>(N);
            for (std::size_t i = 0; i < N; ++i) {
                const std::size_t y = static_cast<std::size_t>(labels[i] - 1);
                const S p = probs[i * K + y];
                if (p < floor_p) continue;  // clamped: locally constant
                // p * dL/dp
                S coef = -std::pow(S(1) - p, gamma);
                if (gamma != S(0) && p < S(1)) coef += gamma * std::pow(S(1) - p, gamma - S(1)) * p * std::log(p);
                coef *= alpha[y] * scale;
                for (std::size_t k = 0; k < K; ++k)
                    dz[i * K + k] += coef * ((k == y ? S(1) : S(0)) - probs[i * K + k]);
            }
        };
    }
    return o;
}

/// Mean softmax cross-entropy. Labels are 1-based.
template <class S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
    auto& g = *logits.graph();
    if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy: logits must be [B x K]");
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    detail::check_labels<S>("cross_entropy", labels, N, K);
    Buffer<S> probs(N * K);
    S total = S(0);
    for (std::size_t i = 0; i < N; ++i) {
        const S* z = logits.value().data.data() + i * K;
        const S m = *std::max_element(z, z + K);
        S lse = S(0);
        for (std::size_t k = 0; k < K; ++k) lse += std::exp(z[k] - m);
        lse = m + std::log(lse);
        for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(z[k] - lse);
        total += lse - z[labels[i] - 1];
    }
    Var<S> o = g.make(Tensor<S>::scalar(total / static_cast<S>(N)), logits.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [ln = logits.node(), on = o.node(), probs = std::move(probs), labels, N, K] {
            S* dz = ln->grad_ptr();
            const S scale = on->grad[0] / static_cast<S>(N);
            for (std::size_t i = 0; i < N; ++i)
                for (std::size_t k = 0; k < K; ++k)
                    dz[i * K + k] +=
                        scale * (probs[i * K + k] - (k + 1 == static_cast<std::size_t>(labels[i]) ? S(1) : S(0)));
        };
    }
    return o;
}

/// Mean over the batch of w[y_i] * ||f_i - c_{y_i}||^2. Centers are constants.
template <class S>
Var<S> center_loss(Var<S> f, const std::vector<int>& labels, const Tensor<S>& centers, const std::vector<S>& w) {
    auto& g = *f.graph();
    if (f.shape().size() != 2 || centers.rank() != 2 || centers.dim(1) != f.shape()[1])
        throw std::invalid_argument("center_loss: features " + shape_str(f.shape()) + " vs centers " +
                                    shape_str(centers.shape));
    const std::size_t N = f.shape()[0], F = f.shape()[1], K = centers.dim(0);
    detail::check_labels<S>("center_loss", labels, N, K);
    if (w.size() != K) throw std::invalid_argument("center_loss: need one weight per class");
    S total = S(0);
    for (std::size_t i = 0; i < N; ++i) {
        const std::size_t y = static_cast<std::size_t>(labels[i] - 1);
        S d2 = S(0);
        for (std::size_t j = 0; j < F; ++j) {
            const S d = f.value().data[i * F + j] - centers.data[y * F + j];
            d2 += d * d;
        }
        total += w[y] * d2;
    }
    Var<S> o = g.make(Tensor<S>::scalar(total / static_cast<S>(N)), f.requires_grad());
    if (o.requires_grad()) {
        o.node()->backward = [fn = f.node(), on = o.node(), centers, labels, w, N, F] {
            S* df = fn->grad_ptr();
            const S scale = on->grad[0] / static_cast<S>(N);
            for (std::size_t i = 0; i < N; ++i) {
                const std::size_t y = static_cast<std::size_t>(labels[i] - 1);
                for (std::size_t j = 0; j < F; ++j)
                    df[i * F + j] += scale * w[y] * S(2) * (fn->value.data[i * F + j] - centers.data[y * F + j]);
            }
        };
    }
    return o;
}

}  // namespace catnet::ad
