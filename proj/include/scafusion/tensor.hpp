#pragma once

// Minimal reverse-mode autodiff tensor engine. Dense row-major storage,
// tape-free graph of shared nodes, scalar type templated so the same ops
// run in float for training and double for finite-difference checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace scafusion {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // sized lazily during backward
    bool requires_grad = false;
    std::string name;  // op name or parameter path, used in diagnostics
    std::vector<std::shared_ptr<Node<T>>> inputs;
    std::function<void(Node<T>&)> backward_fn;

    int64_t numel() const { return static_cast<int64_t>(value.size()); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

template <class T>
using NodePtr = std::shared_ptr<Node<T>>;

// Toggled off only in tight benchmark loops; every op checks its output
// for NaN/Inf and aborts naming the producing node.
inline bool& finite_checks_enabled() {
    static bool enabled = true;
    return enabled;
}

template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr<T> n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape) { return full(shape, T(0)); }

    static Tensor full(const Shape& shape, T v) {
        auto n = std::make_shared<Node<T>>();
        n->shape = shape;
        n->value.assign(shape_numel(shape), v);
        n->name = "leaf";
        return Tensor(n);
    }

    static Tensor from(const Shape& shape, std::vector<T> data) {
        if (static_cast<int64_t>(data.size()) != shape_numel(shape))
            throw std::invalid_argument("Tensor::from: data length " +
                                        std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        auto n = std::make_shared<Node<T>>();
        n->shape = shape;
        n->value = std::move(data);
        n->name = "leaf";
        return Tensor(n);
    }

    static Tensor scalar(T v) { return full({1}, v); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int64_t numel() const { return node_->numel(); }
    int64_t dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }

    std::vector<T>& data() { return node_->value; }
    const std::vector<T>& data() const { return node_->value; }
    T item() const {
        if (numel() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(numel()) + " elements");
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        node_->requires_grad = b;
        return *this;
    }
    Tensor& set_name(const std::string& s) {
        node_->name = s;
        return *this;
    }
    const std::string& name() const { return node_->name; }

    const std::vector<T>& grad() const { return node_->grad; }
    void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

    // Value copy with no graph history.
    Tensor detach() const {
        auto n = std::make_shared<Node<T>>();
        n->shape = node_->shape;
        n->value = node_->value;
        n->name = "detach";
        return Tensor(n);
    }

    NodePtr<T> node() const { return node_; }

private:
    NodePtr<T> node_;
};

namespace detail {

template <class T>
NodePtr<T> make_op(const std::string& name, Shape shape,
                   std::vector<NodePtr<T>> inputs) {
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->value.assign(shape_numel(n->shape), T(0));
    n->name = name;
    n->inputs = std::move(inputs);
    for (auto& in : n->inputs)
        if (in->requires_grad) n->requires_grad = true;
    return n;
}

template <class T>
void check_finite(const Node<T>& n) {
    if (!finite_checks_enabled()) return;
    for (T v : n.value) {
        if (!std::isfinite(static_cast<double>(v)))
            throw std::runtime_error("non-finite value produced by op '" + n.name + "'");
    }
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i) + 1] * s[static_cast<size_t>(i) + 1];
    return st;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with numpy-style broadcasting (equal rank; each
// extent must match or be 1).
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* opname) {
    if (a.size() != b.size())
        throw std::invalid_argument(std::string(opname) + ": rank mismatch " +
                                    shape_str(a) + " vs " + shape_str(b));
    Shape out(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i] || a[i] == 1 || b[i] == 1)
            out[i] = std::max(a[i], b[i]);
        else
            throw std::invalid_argument(std::string(opname) + ": dimension " +
                                        std::to_string(i) + " incompatible in " +
                                        shape_str(a) + " vs " + shape_str(b));
    }
    return out;
}

// Strides into a possibly-broadcast operand (0 on broadcast axes).
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
    auto st = row_major_strides(in);
    for (size_t i = 0; i < in.size(); ++i)
        if (in[i] == 1 && out[i] != 1) st[i] = 0;
    return st;
}

template <class T, class FwdFn, class BwdFn>
Tensor<T> binary_broadcast(const char* name, const Tensor<T>& a, const Tensor<T>& b,
                           FwdFn fwd, BwdFn bwd) {
    Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
    auto n = make_op<T>(name, out_shape, {a.node(), b.node()});
    const auto sa = broadcast_strides(a.shape(), out_shape);
    const auto sb = broadcast_strides(b.shape(), out_shape);
    const auto so = row_major_strides(out_shape);
    const int64_t total = n->numel();
    const size_t rank = out_shape.size();
    const auto& av = a.data();
    const auto& bv = b.data();
    for (int64_t i = 0; i < total; ++i) {
        int64_t rem = i, ia = 0, ib = 0;
        for (size_t d = 0; d < rank; ++d) {
            int64_t idx = rem / so[d];
            rem -= idx * so[d];
            ia += idx * sa[d];
            ib += idx * sb[d];
        }
        n->value[static_cast<size_t>(i)] = fwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
    }
    check_finite(*n);
    if (n->requires_grad) {
        n->backward_fn = [sa, sb, so, rank, total, bwd](Node<T>& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            if (na.requires_grad) na.ensure_grad();
            if (nb.requires_grad) nb.ensure_grad();
            for (int64_t i = 0; i < total; ++i) {
                int64_t rem = i, ia = 0, ib = 0;
                for (size_t d = 0; d < rank; ++d) {
                    int64_t idx = rem / so[d];
                    rem -= idx * so[d];
                    ia += idx * sa[d];
                    ib += idx * sb[d];
                }
                T g = self.grad[static_cast<size_t>(i)];
                T da = 0, db = 0;
                bwd(na.value[static_cast<size_t>(ia)], nb.value[static_cast<size_t>(ib)],
                    self.value[static_cast<size_t>(i)], g, da, db);
                if (na.requires_grad) na.grad[static_cast<size_t>(ia)] += da;
                if (nb.requires_grad) nb.grad[static_cast<size_t>(ib)] += db;
            }
        };
    }
    return Tensor<T>(n);
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast<T>(
        "add", a, b, [](T x, T y) { return x + y; },
        [](T, T, T, T g, T& da, T& db) { da = g; db = g; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast<T>(
        "sub", a, b, [](T x, T y) { return x - y; },
        [](T, T, T, T g, T& da, T& db) { da = g; db = -g; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast<T>(
        "mul", a, b, [](T x, T y) { return x * y; },
        [](T x, T y, T, T g, T& da, T& db) { da = g * y; db = g * x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_broadcast<T>(
        "div", a, b, [](T x, T y) { return x / y; },
        [](T x, T y, T, T g, T& da, T& db) {
            da = g / y;
            db = -g * x / (y * y);
        });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class T, class FwdFn, class BwdFn>
Tensor<T> unary(const char* name, const Tensor<T>& a, FwdFn fwd, BwdFn bwd) {
    auto n = make_op<T>(name, a.shape(), {a.node()});
    const auto& av = a.data();
    for (size_t i = 0; i < av.size(); ++i) n->value[i] = fwd(av[i]);
    check_finite(*n);
    if (n->requires_grad) {
        n->backward_fn = [bwd](Node<T>& self) {
            auto& na = *self.inputs[0];
            na.ensure_grad();
            for (size_t i = 0; i < self.value.size(); ++i)
                na.grad[i] += self.grad[i] * bwd(na.value[i], self.value[i]);
        };
    }
    return Tensor<T>(n);
}

}  // namespace detail

template <class T>
Tensor<T> scale(const Tensor<T>& a, T c) {
    return detail::unary<T>("scale", a, [c](T x) { return c * x; },
                            [c](T, T) { return c; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return detail::unary<T>("add_scalar", a, [c](T x) { return x + c; },
                            [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
    return scale(a, T(-1));
}

template <class T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary<T>("exp", a, [](T x) { return std::exp(x); },
                            [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& a) {
    return detail::unary<T>("log", a, [](T x) { return std::log(x); },
                            [](T x, T) { return T(1) / x; });
}

template <class T>
Tensor<T> sqrt(const Tensor<T>& a) {
    return detail::unary<T>("sqrt", a, [](T x) { return std::sqrt(x); },
                            [](T, T y) { return T(0.5) / y; });
}

template <class T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::unary<T>("abs", a, [](T x) { return std::abs(x); },
                            [](T x, T) { return x >= T(0) ? T(1) : T(-1); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary<T>(
        "sigmoid", a,
        [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary<T>("relu", a, [](T x) { return x > T(0) ? x : T(0); },
                            [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

// Exact (erf-based) GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return detail::unary<T>(
        "gelu", a,
        [](T x) {
            double xd = static_cast<double>(x);
            return static_cast<T>(0.5 * xd * (1.0 + std::erf(xd * inv_sqrt2)));
        },
        [](T x, T) {
            double xd = static_cast<double>(x);
            double cdf = 0.5 * (1.0 + std::erf(xd * inv_sqrt2));
            double pdf = inv_sqrt2pi * std::exp(-0.5 * xd * xd);
            return static_cast<T>(cdf + xd * pdf);
        });
}

template <class T>
Tensor<T> square(const Tensor<T>& a) {
    return detail::unary<T>("square", a, [](T x) { return x * x; },
                            [](T x, T) { return T(2) * x; });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) +
                                    " as " + shape_str(shape));
    auto n = detail::make_op<T>("reshape", shape, {a.node()});
    n->value = a.data();
    if (n->requires_grad) {
        n->backward_fn = [](Node<T>& self) {
            auto& na = *self.inputs[0];
            na.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i) na.grad[i] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<int>& axes) {
    const Shape& in = a.shape();
    if (axes.size() != in.size())
        throw std::invalid_argument("permute: axes rank mismatch");
    Shape out(in.size());
    for (size_t i = 0; i < axes.size(); ++i) out[i] = in[static_cast<size_t>(axes[i])];
    auto n = detail::make_op<T>("permute", out, {a.node()});
    const auto sin = detail::row_major_strides(in);
    const auto sout = detail::row_major_strides(out);
    const int64_t total = n->numel();
    const size_t rank = out.size();
    // src stride per output axis
    std::vector<int64_t> map(rank);
    for (size_t i = 0; i < rank; ++i) map[i] = sin[static_cast<size_t>(axes[i])];
    const auto& av = a.data();
    std::vector<int64_t> src_of(static_cast<size_t>(total));
    for (int64_t i = 0; i < total; ++i) {
        int64_t rem = i, src = 0;
        for (size_t d = 0; d < rank; ++d) {
            int64_t idx = rem / sout[d];
            rem -= idx * sout[d];
            src += idx * map[d];
        }
        src_of[static_cast<size_t>(i)] = src;
        n->value[static_cast<size_t>(i)] = av[static_cast<size_t>(src)];
    }
    if (n->requires_grad) {
        n->backward_fn = [src_of](Node<T>& self) {
            auto& na = *self.inputs[0];
            na.ensure_grad();
            for (size_t i = 0; i < self.grad.size(); ++i)
                na.grad[static_cast<size_t>(src_of[i])] += self.grad[i];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    size_t ax = static_cast<size_t>(axis);
    Shape out = s0;
    int64_t total_ax = 0;
    std::vector<NodePtr<T>> ins;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size())
            throw std::invalid_argument("concat: rank mismatch");
        for (size_t d = 0; d < s.size(); ++d)
            if (d != ax && s[d] != s0[d])
                throw std::invalid_argument("concat: dimension " + std::to_string(d) +
                                            " mismatch: " + shape_str(s) + " vs " + shape_str(s0));
        total_ax += s[ax];
        ins.push_back(p.node());
    }
    out[ax] = total_ax;
    auto n = detail::make_op<T>("concat", out, ins);
    // outer = product of dims before axis, inner = product after
    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < ax; ++d) outer *= out[d];
    for (size_t d = ax + 1; d < out.size(); ++d) inner *= out[d];
    int64_t off_ax = 0;
    std::vector<int64_t> part_ax(parts.size()), part_off(parts.size());
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        part_ax[pi] = parts[pi].shape()[ax];
        part_off[pi] = off_ax;
        const auto& pv = parts[pi].data();
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t k = 0; k < part_ax[pi]; ++k)
                std::copy_n(pv.begin() + (o * part_ax[pi] + k) * inner, inner,
                            n->value.begin() + (o * total_ax + off_ax + k) * inner);
        off_ax += part_ax[pi];
    }
    if (n->requires_grad) {
        n->backward_fn = [outer, inner, total_ax, part_ax, part_off](Node<T>& self) {
            for (size_t pi = 0; pi < self.inputs.size(); ++pi) {
                auto& np = *self.inputs[pi];
                if (!np.requires_grad) continue;
                np.ensure_grad();
                for (int64_t o = 0; o < outer; ++o)
                    for (int64_t k = 0; k < part_ax[pi]; ++k) {
                        const T* g = self.grad.data() + (o * total_ax + part_off[pi] + k) * inner;
                        T* dst = np.grad.data() + (o * part_ax[pi] + k) * inner;
                        for (int64_t j = 0; j < inner; ++j) dst[j] += g[j];
                    }
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, int axis, int64_t start, int64_t len) {
    const Shape& in = a.shape();
    size_t ax = static_cast<size_t>(axis);
    if (ax >= in.size() || start < 0 || start + len > in[ax])
        throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                    std::to_string(start + len) + ") out of bounds for axis " +
                                    std::to_string(axis) + " of " + shape_str(in));
    Shape out = in;
    out[ax] = len;
    auto n = detail::make_op<T>("slice", out, {a.node()});
    int64_t outer = 1, inner = 1;
    for (size_t d = 0; d < ax; ++d) outer *= in[d];
    for (size_t d = ax + 1; d < in.size(); ++d) inner *= in[d];
    const int64_t in_ax = in[ax];
    const auto& av = a.data();
    for (int64_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + (o * in_ax + start) * inner, len * inner,
                    n->value.begin() + o * len * inner);
    if (n->requires_grad) {
        n->backward_fn = [outer, inner, in_ax, start, len](Node<T>& self) {
            auto& na = *self.inputs[0];
            na.ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                const T* g = self.grad.data() + o * len * inner;
                T* dst = na.grad.data() + (o * in_ax + start) * inner;
                for (int64_t j = 0; j < len * inner; ++j) dst[j] += g[j];
            }
        };
    }
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

enum class PoolMode { Avg, Max };

// Reduce over the given axis set, keeping reduced axes with extent 1.
template <class T>
Tensor<T> reduce_pool(const Tensor<T>& a, const std::vector<int>& axes, PoolMode mode) {
    if (axes.empty()) throw std::invalid_argument("reduce_pool: empty axis set");
    const Shape& in = a.shape();
    std::vector<bool> reduced(in.size(), false);
    for (int ax : axes) {
        if (ax < 0 || static_cast<size_t>(ax) >= in.size())
            throw std::invalid_argument("reduce_pool: axis " + std::to_string(ax) +
                                        " out of range for " + shape_str(in));
        reduced[static_cast<size_t>(ax)] = true;
    }
    Shape out = in;
    int64_t count = 1;
    for (size_t d = 0; d < in.size(); ++d)
        if (reduced[d]) {
            count *= in[d];
            out[d] = 1;
        }
    auto n = detail::make_op<T>(mode == PoolMode::Avg ? "avg_pool" : "max_pool", out,
                                {a.node()});
    const auto sin = detail::row_major_strides(in);
    const auto sout = detail::row_major_strides(out);
    const size_t rank = in.size();
    const int64_t total_in = a.numel();
    const auto& av = a.data();
    std::vector<int64_t> argmax;
    if (mode == PoolMode::Max) {
        argmax.assign(n->value.size(), -1);
        std::fill(n->value.begin(), n->value.end(), std::numeric_limits<T>::lowest());
    }
    for (int64_t i = 0; i < total_in; ++i) {
        int64_t rem = i, oi = 0;
        for (size_t d = 0; d < rank; ++d) {
            int64_t idx = rem / sin[d];
            rem -= idx * sin[d];
            if (!reduced[d]) oi += idx * sout[d];
        }
        if (mode == PoolMode::Avg) {
            n->value[static_cast<size_t>(oi)] += av[static_cast<size_t>(i)];
        } else {
            // strict > keeps the lowest flat index on ties
            if (av[static_cast<size_t>(i)] > n->value[static_cast<size_t>(oi)]) {
                n->value[static_cast<size_t>(oi)] = av[static_cast<size_t>(i)];
                argmax[static_cast<size_t>(oi)] = i;
            }
        }
    }
    if (mode == PoolMode::Avg)
        for (auto& v : n->value) v /= static_cast<T>(count);
    detail::check_finite(*n);
    if (n->requires_grad) {
        if (mode == PoolMode::Avg) {
            n->backward_fn = [sin, sout, reduced, rank, total_in, count](Node<T>& self) {
                auto& na = *self.inputs[0];
                na.ensure_grad();
                const T inv = T(1) / static_cast<T>(count);
                for (int64_t i = 0; i < total_in; ++i) {
                    int64_t rem = i, oi = 0;
                    for (size_t d = 0; d < rank; ++d) {
                        int64_t idx = rem / sin[d];
                        rem -= idx * sin[d];
                        if (!reduced[d]) oi += idx * sout[d];
                    }
                    na.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(oi)] * inv;
                }
            };
        } else {
            n->backward_fn = [argmax](Node<T>& self) {
                auto& na = *self.inputs[0];
                na.ensure_grad();
                for (size_t oi = 0; oi < self.grad.size(); ++oi)
                    if (argmax[oi] >= 0)
                        na.grad[static_cast<size_t>(argmax[oi])] += self.grad[oi];
            };
        }
    }
    return Tensor<T>(n);
}

// Sum of all elements -> scalar tensor of shape {1}.
template <class T>
Tensor<T> sum(const Tensor<T>& a) {
    auto n = detail::make_op<T>("sum", Shape{1}, {a.node()});
    T acc = 0;
    for (T v : a.data()) acc += v;
    n->value[0] = acc;
    detail::check_finite(*n);
    if (n->requires_grad) {
        n->backward_fn = [](Node<T>& self) {
            auto& na = *self.inputs[0];
            na.ensure_grad();
            for (auto& g : na.grad) g += self.grad[0];
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// (M,K) x (K,N) -> (M,N)
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw std::invalid_argument("matmul: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
    auto n = detail::make_op<T>("matmul", Shape{M, N}, {a.node(), b.node()});
    const T* A = a.data().data();
    const T* B = b.data().data();
    T* C = n->value.data();
    for (int64_t i = 0; i < M; ++i)
        for (int64_t k = 0; k < K; ++k) {
            const T aik = A[i * K + k];
            const T* brow = B + k * N;
            T* crow = C + i * N;
            for (int64_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
        }
    detail::check_finite(*n);
    if (n->requires_grad) {
        n->backward_fn = [M, K, N](Node<T>& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            const T* G = self.grad.data();
            if (na.requires_grad) {
                na.ensure_grad();
                const T* B = nb.value.data();
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t j = 0; j < N; ++j) {
                        const T g = G[i * N + j];
                        const T* brow = B + 0;
                        for (int64_t k = 0; k < K; ++k)
                            na.grad[static_cast<size_t>(i * K + k)] += g * B[k * N + j];
                        (void)brow;
                    }
            }
            if (nb.requires_grad) {
                nb.ensure_grad();
                const T* A = na.value.data();
                for (int64_t k = 0; k < K; ++k)
                    for (int64_t i = 0; i < M; ++i) {
                        const T aik = A[i * K + k];
                        const T* grow = G + i * N;
                        T* brow = nb.grad.data() + k * N;
                        for (int64_t j = 0; j < N; ++j) brow[j] += aik * grow[j];
                    }
            }
        };
    }
    return Tensor<T>(n);
}

// Batched (B,M,K) x (B,K,N) -> (B,M,N)
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw std::invalid_argument("bmm: incompatible shapes " + shape_str(a.shape()) +
                                    " x " + shape_str(b.shape()));
    const int64_t Bn = a.dim(0), M = a.dim(1), K = a.dim(2), N = b.dim(2);
    auto n = detail::make_op<T>("bmm", Shape{Bn, M, N}, {a.node(), b.node()});
    for (int64_t bi = 0; bi < Bn; ++bi) {
        const T* A = a.data().data() + bi * M * K;
        const T* B = b.data().data() + bi * K * N;
        T* C = n->value.data() + bi * M * N;
        for (int64_t i = 0; i < M; ++i)
            for (int64_t k = 0; k < K; ++k) {
                const T aik = A[i * K + k];
                const T* brow = B + k * N;
                T* crow = C + i * N;
                for (int64_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
            }
    }
    detail::check_finite(*n);
    if (n->requires_grad) {
        n->backward_fn = [Bn, M, K, N](Node<T>& self) {
            auto& na = *self.inputs[0];
            auto& nb = *self.inputs[1];
            if (na.requires_grad) na.ensure_grad();
            if (nb.requires_grad) nb.ensure_grad();
            for (int64_t bi = 0; bi < Bn; ++bi) {
                const T* G = self.grad.data() + bi * M * N;
                const T* A = na.value.data() + bi * M * K;
                const T* B = nb.value.data() + bi * K * N;
                if (na.requires_grad) {
                    T* dA = na.grad.data() + bi * M * K;
                    for (int64_t i = 0; i < M; ++i)
                        for (int64_t j = 0; j < N; ++j) {
                            const T g = G[i * N + j];
                            for (int64_t k = 0; k < K; ++k) dA[i * K + k] += g * B[k * N + j];
                        }
                }
                if (nb.requires_grad) {
                    T* dB = nb.grad.data() + bi * K * N;
                    for (int64_t k = 0; k < K; ++k)
                        for (int64_t i = 0; i < M; ++i) {
                            const T aik = A[i * K + k];
                            const T* grow = G + i * N;
                            T* brow = dB + k * N;
                            for (int64_t j = 0; j < N; ++j) brow[j] += aik * grow[j];
                        }
                }
            }
        };
    }
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// conv2d (NCHW cross-correlation, grouped)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 int stride, int padding, int groups) {
    if (input.rank() != 4)
        throw std::invalid_argument("conv2d: input must be NCHW, got " + shape_str(input.shape()));
    if (weight.rank() != 4)
        throw std::invalid_argument("conv2d: weight must be (Cout,Cin/g,kh,kw), got " +
                                    shape_str(weight.shape()));
    const int64_t N = input.dim(0), Ci = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Co = weight.dim(0), Cig = weight.dim(1), kh = weight.dim(2), kw = weight.dim(3);
    if (kh % 2 == 0 || kw % 2 == 0)
        throw std::invalid_argument("conv2d: kernel must be odd-sized, got " +
                                    shape_str(weight.shape()));
    if (groups < 1 || Ci % groups != 0 || Co % groups != 0)
        throw std::invalid_argument("conv2d: groups=" + std::to_string(groups) +
                                    " must divide Cin=" + std::to_string(Ci) +
                                    " and Cout=" + std::to_string(Co));
    if (Cig != Ci / groups)
        throw std::invalid_argument("conv2d: weight input-channel dimension " +
                                    std::to_string(Cig) + " != Cin/groups = " +
                                    std::to_string(Ci / groups));
    if (bias && (bias->rank() != 1 || bias->dim(0) != Co))
        throw std::invalid_argument("conv2d: bias dimension must equal Cout=" + std::to_string(Co));
    const int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    if (Ho < 1 || Wo < 1)
        throw std::invalid_argument("conv2d: output spatial size would be empty");

    std::vector<NodePtr<T>> ins = {input.node(), weight.node()};
    if (bias) ins.push_back(bias->node());
    auto n = detail::make_op<T>("conv2d", Shape{N, Co, Ho, Wo}, ins);

    const int64_t co_per_g = Co / groups;
    const T* X = input.data().data();
    const T* Wt = weight.data().data();
    const T* Bv = bias ? bias->data().data() : nullptr;
    T* Y = n->value.data();

#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static)
#endif
    for (int64_t ni = 0; ni < N; ++ni)
        for (int64_t co = 0; co < Co; ++co) {
            const int64_t g = co / co_per_g;
            for (int64_t ho = 0; ho < Ho; ++ho)
                for (int64_t wo = 0; wo < Wo; ++wo) {
                    T acc = Bv ? Bv[co] : T(0);
                    for (int64_t cg = 0; cg < Cig; ++cg) {
                        const int64_t ci = g * Cig + cg;
                        for (int64_t dy = 0; dy < kh; ++dy) {
                            const int64_t hi = ho * stride + dy - padding;
                            if (hi < 0 || hi >= H) continue;
                            for (int64_t dx = 0; dx < kw; ++dx) {
                                const int64_t wi = wo * stride + dx - padding;
                                if (wi < 0 || wi >= W) continue;
                                acc += X[((ni * Ci + ci) * H + hi) * W + wi] *
                                       Wt[((co * Cig + cg) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    Y[((ni * Co + co) * Ho + ho) * Wo + wo] = acc;
                }
        }
    detail::check_finite(*n);

    if (n->requires_grad) {
        const bool has_bias = bias != nullptr;
        n->backward_fn = [=](Node<T>& self) {
            auto& nx = *self.inputs[0];
            auto& nw = *self.inputs[1];
            Node<T>* nb = has_bias ? self.inputs[2].get() : nullptr;
            const T* G = self.grad.data();
            const T* X = nx.value.data();
            const T* Wt = nw.value.data();
            if (nx.requires_grad) {
                nx.ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int64_t ni = 0; ni < N; ++ni) {
                    T* dX = nx.grad.data() + ni * Ci * H * W;
                    for (int64_t co = 0; co < Co; ++co) {
                        const int64_t g = co / co_per_g;
                        const T* Gn = G + ((ni * Co + co) * Ho) * Wo;
                        for (int64_t ho = 0; ho < Ho; ++ho)
                            for (int64_t wo = 0; wo < Wo; ++wo) {
                                const T gv = Gn[ho * Wo + wo];
                                if (gv == T(0)) continue;
                                for (int64_t cg = 0; cg < Cig; ++cg) {
                                    const int64_t ci = g * Cig + cg;
                                    for (int64_t dy = 0; dy < kh; ++dy) {
                                        const int64_t hi = ho * stride + dy - padding;
                                        if (hi < 0 || hi >= H) continue;
                                        for (int64_t dx = 0; dx < kw; ++dx) {
                                            const int64_t wi = wo * stride + dx - padding;
                                            if (wi < 0 || wi >= W) continue;
                                            dX[(ci * H + hi) * W + wi] +=
                                                gv * Wt[((co * Cig + cg) * kh + dy) * kw + dx];
                                        }
                                    }
                                }
                            }
                    }
                }
            }
            if (nw.requires_grad) {
                nw.ensure_grad();
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
                for (int64_t co = 0; co < Co; ++co) {
                    const int64_t g = co / co_per_g;
                    T* dW = nw.grad.data() + co * Cig * kh * kw;
                    for (int64_t ni = 0; ni < N; ++ni) {
                        const T* Gn = G + ((ni * Co + co) * Ho) * Wo;
                        for (int64_t ho = 0; ho < Ho; ++ho)
                            for (int64_t wo = 0; wo < Wo; ++wo) {
                                const T gv = Gn[ho * Wo + wo];
                                if (gv == T(0)) continue;
                                for (int64_t cg = 0; cg < Cig; ++cg) {
                                    const int64_t ci = g * Cig + cg;
                                    for (int64_t dy = 0; dy < kh; ++dy) {
                                        const int64_t hi = ho * stride + dy - padding;
                                        if (hi < 0 || hi >= H) continue;
                                        for (int64_t dx = 0; dx < kw; ++dx) {
                                            const int64_t wi = wo * stride + dx - padding;
                                            if (wi < 0 || wi >= W) continue;
                                            dW[(cg * kh + dy) * kw + dx] +=
                                                gv * X[((ni * Ci + ci) * H + hi) * W + wi];
                                        }
                                    }
                                }
                            }
                    }
                }
            }
            if (nb && nb->requires_grad) {
                nb->ensure_grad();
                for (int64_t ni = 0; ni < N; ++ni)
                    for (int64_t co = 0; co < Co; ++co) {
                        const T* Gn = G + ((ni * Co + co) * Ho) * Wo;
                        T acc = 0;
                        for (int64_t j = 0; j < Ho * Wo; ++j) acc += Gn[j];
                        nb->grad[static_cast<size_t>(co)] += acc;
                    }
            }
        };
    }
    return Tensor<T>(n);
}

template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0, int groups = 1) {
    return conv2d(input, weight, &bias, stride, padding, groups);
}

template <class T>
Tensor<T> conv2d_nobias(const Tensor<T>& input, const Tensor<T>& weight, int stride = 1,
                        int padding = 0, int groups = 1) {
    return conv2d<T>(input, weight, nullptr, stride, padding, groups);
}

// ---------------------------------------------------------------------------
// Bilinear 2x upsampling (align_corners = false)
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> bilinear_upsample2x(const Tensor<T>& input) {
    if (input.rank() != 4)
        throw std::invalid_argument("bilinear_upsample2x: input must be NCHW");
    const int64_t N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Ho = 2 * H, Wo = 2 * W;
    auto n = detail::make_op<T>("bilinear_upsample2x", Shape{N, C, Ho, Wo}, {input.node()});

    auto src_weights = [](int64_t i, int64_t extent, int64_t& i0, int64_t& i1, T& w1) {
        T src = (static_cast<T>(i) + T(0.5)) / T(2) - T(0.5);
        T f = std::floor(src);
        i0 = static_cast<int64_t>(f);
        w1 = src - f;
        i1 = i0 + 1;
        i0 = std::clamp<int64_t>(i0, 0, extent - 1);
        i1 = std::clamp<int64_t>(i1, 0, extent - 1);
    };

    const auto& X = input.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* x = X.data() + nc * H * W;
        T* y = n->value.data() + nc * Ho * Wo;
        for (int64_t i = 0; i < Ho; ++i) {
            int64_t i0, i1;
            T wy;
            src_weights(i, H, i0, i1, wy);
            for (int64_t j = 0; j < Wo; ++j) {
                int64_t j0, j1;
                T wx;
                src_weights(j, W, j0, j1, wx);
                y[i * Wo + j] = (T(1) - wy) * ((T(1) - wx) * x[i0 * W + j0] + wx * x[i0 * W + j1]) +
                                wy * ((T(1) - wx) * x[i1 * W + j0] + wx * x[i1 * W + j1]);
            }
        }
    }
    if (n->requires_grad) {
        n->backward_fn = [N, C, H, W, Ho, Wo, src_weights](Node<T>& self) {
            auto& nx = *self.inputs[0];
            nx.ensure_grad();
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* g = self.grad.data() + nc * Ho * Wo;
                T* dx = nx.grad.data() + nc * H * W;
                for (int64_t i = 0; i < Ho; ++i) {
                    int64_t i0, i1;
                    T wy;
                    src_weights(i, H, i0, i1, wy);
                    for (int64_t j = 0; j < Wo; ++j) {
                        int64_t j0, j1;
                        T wx;
                        src_weights(j, W, j0, j1, wx);
                        const T gv = g[i * Wo + j];
                        dx[i0 * W + j0] += gv * (T(1) - wy) * (T(1) - wx);
                        dx[i0 * W + j1] += gv * (T(1) - wy) * wx;
                        dx[i1 * W + j0] += gv * wy * (T(1) - wx);
                        dx[i1 * W + j1] += gv * wy * wx;
                    }
                }
            }
        };
    }
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// scatter_add: (N,C) rows into a (C,H,W) grid by flat cell index
// ---------------------------------------------------------------------------

constexpr int64_t kScatterDrop = -1;

template <class T>
Tensor<T> scatter_add(const Tensor<T>& values, const std::vector<int64_t>& cell_index,
                      int64_t H, int64_t W) {
    if (values.rank() != 2)
        throw std::invalid_argument("scatter_add: values must be (N,C)");
    const int64_t N = values.dim(0), C = values.dim(1);
    if (static_cast<int64_t>(cell_index.size()) != N)
        throw std::invalid_argument("scatter_add: index count " +
                                    std::to_string(cell_index.size()) + " != rows " +
                                    std::to_string(N));
    for (int64_t i = 0; i < N; ++i) {
        int64_t idx = cell_index[static_cast<size_t>(i)];
        if (idx != kScatterDrop && (idx < 0 || idx >= H * W))
            throw std::invalid_argument("scatter_add: index " + std::to_string(idx) +
                                        " at row " + std::to_string(i) +
                                        " outside grid of " + std::to_string(H * W) + " cells");
    }
    auto n = detail::make_op<T>("scatter_add", Shape{C, H, W}, {values.node()});
    const auto& V = values.data();
    for (int64_t i = 0; i < N; ++i) {
        const int64_t idx = cell_index[static_cast<size_t>(i)];
        if (idx == kScatterDrop) continue;
        const T* row = V.data() + i * C;
        for (int64_t c = 0; c < C; ++c) n->value[static_cast<size_t>(c * H * W + idx)] += row[c];
    }
    detail::check_finite(*n);
    if (n->requires_grad) {
        auto idx_copy = cell_index;
        n->backward_fn = [idx_copy, N, C, H, W](Node<T>& self) {
            auto& nv = *self.inputs[0];
            nv.ensure_grad();
            for (int64_t i = 0; i < N; ++i) {
                const int64_t idx = idx_copy[static_cast<size_t>(i)];
                if (idx == kScatterDrop) continue;
                T* drow = nv.grad.data() + i * C;
                for (int64_t c = 0; c < C; ++c)
                    drow[c] += self.grad[static_cast<size_t>(c * H * W + idx)];
            }
        };
    }
    return Tensor<T>(n);
}

// ---------------------------------------------------------------------------
// Composite ops (backward comes from the primitives)
// ---------------------------------------------------------------------------

// Softmax over one axis, numerically stabilized with a detached max shift.
template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
    Tensor<T> m = reduce_pool(a, {axis}, PoolMode::Max).detach();
    Tensor<T> e = exp(sub(a, m));
    Tensor<T> s = reduce_pool(e, {axis}, PoolMode::Avg);
    s = scale(s, static_cast<T>(a.dim(axis)));  // avg*extent = sum
    return div(e, s);
}

// Layer normalization over the trailing axes covered by gamma's shape.
// gamma/beta must share a shape whose extents match the trailing dims of input.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = static_cast<T>(1e-5)) {
    const Shape& in = input.shape();
    const Shape& gs = gamma.shape();
    if (gs != beta.shape())
        throw std::invalid_argument("layer_norm: gamma/beta shape mismatch");
    if (gs.size() > in.size())
        throw std::invalid_argument("layer_norm: gamma rank exceeds input rank");
    std::vector<int> axes;
    for (size_t i = 0; i < gs.size(); ++i) {
        size_t d = in.size() - gs.size() + i;
        if (in[d] != gs[i])
            throw std::invalid_argument("layer_norm: normalized extent mismatch at axis " +
                                        std::to_string(d) + ": input " + shape_str(in) +
                                        " vs gamma " + shape_str(gs));
        axes.push_back(static_cast<int>(d));
    }
    Tensor<T> mu = reduce_pool(input, axes, PoolMode::Avg);
    Tensor<T> xc = sub(input, mu);
    Tensor<T> var = reduce_pool(square(xc), axes, PoolMode::Avg);
    Tensor<T> xhat = div(xc, sqrt(add_scalar(var, eps)));
    // reshape gamma/beta to input rank with leading 1s for broadcasting
    Shape bs(in.size(), 1);
    for (size_t i = 0; i < gs.size(); ++i) bs[in.size() - gs.size() + i] = gs[i];
    return add(mul(xhat, reshape(gamma, bs)), reshape(beta, bs));
}

// x @ W + b for (rows, Cin) x (Cin, Cout); bias shape (Cout).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
    Tensor<T> y = matmul(x, w);
    return add(y, reshape(b, Shape{1, b.dim(0)}));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.numel() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw std::invalid_argument("backward: loss does not require grad");
    if (!std::isfinite(static_cast<double>(loss.item())))
        throw std::runtime_error("backward: loss is non-finite (op '" + loss.name() + "')");

    // iterative post-order topological sort
    std::vector<Node<T>*> order;
    std::unordered_set<Node<T>*> visited;
    std::vector<std::pair<Node<T>*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->inputs.size()) {
            Node<T>* next = node->inputs[child++].get();
            if (next->requires_grad && !visited.count(next)) {
                visited.insert(next);
                stack.emplace_back(next, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node<T>* n : order) n->ensure_grad();
    loss.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<T>* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace scafusion
