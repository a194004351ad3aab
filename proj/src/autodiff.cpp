// SPDX-License-Identifier: Apache-2.0
#include "gaitssl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>

namespace gaitssl::ad {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

struct AxisSplit {
    std::size_t outer = 1;
    std::size_t extent = 1;
    std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
    if (axis >= shape.size()) {
        throw std::out_of_range(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                shape_string(shape));
    }
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.extent = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
    Shape out;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i != axis) out.push_back(shape[i]);
    }
    return out;
}

void require_matrix(const Shape& s, const char* op) {
    if (s.size() != 2) {
        throw std::invalid_argument(std::string(op) + ": expected a 2-D operand, got " + shape_string(s));
    }
}

/// Number of times `b` repeats inside `a` (1 when shapes match).
std::size_t broadcast_repeats(const Shape& a, const Shape& b, const char* op) {
    if (a == b) return 1;
    bool suffix = b.size() <= a.size();
    for (std::size_t i = 0; suffix && i < b.size(); ++i) {
        suffix = a[a.size() - b.size() + i] == b[i];
    }
    if (!suffix || numel(b) == 0) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a) + " vs " + shape_string(b));
    }
    return numel(a) / numel(b);
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Var<T>*> vars) {
    for (auto* v : vars) {
        if (v->requires_grad()) return true;
    }
    return false;
}

template <typename T>
void require_same_tape(const Var<T>& a, const Var<T>& b, const char* op) {
    if (&a.tape() != &b.tape()) {
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
    }
}

enum class Binary { add, sub, mul };

template <typename T>
Var<T> binary_op(const Var<T>& a, const Var<T>& b, Binary kind, const char* name) {
    require_same_tape(a, b, name);
    const std::size_t reps = broadcast_repeats(a.shape(), b.shape(), name);
    const std::size_t nb = b.size();
    const auto r = static_cast<Eigen::Index>(reps);
    const auto c = static_cast<Eigen::Index>(nb);
    // a viewed as reps x nb rows, b as one row repeated over them.
    ConstMapMat<T> A(a.value().data(), r, c);
    Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> B(b.value().data(), c);
    Buffer<T> out(a.size());
    auto O = MapMat<T>(out.data(), r, c).array();
    switch (kind) {
        case Binary::add: O = A.array().rowwise() + B; break;
        case Binary::sub: O = A.array().rowwise() - B; break;
        case Binary::mul: O = A.array().rowwise() * B; break;
    }
    const std::size_t ia = a.id();
    const std::size_t ib = b.id();
    return a.tape().push(a.shape(), std::move(out), any_requires_grad<T>({&a, &b}),
                         [ia, ib, r, c, kind](Tape<T>& tape, std::size_t self) {
                             const auto G = ConstMapMat<T>(tape.node(self).grad.data(), r, c).array();
                             if (tape.node(ia).requires_grad) {
                                 auto GA = MapMat<T>(tape.grad_buffer(ia).data(), r, c).array();
                                 if (kind == Binary::mul) {
                                     Eigen::Map<const Eigen::Array<T, 1, Eigen::Dynamic>> B(
                                         tape.node(ib).value.data(), c);
                                     GA += G.rowwise() * B;
                                 } else {
                                     GA += G;
                                 }
                             }
                             if (tape.node(ib).requires_grad) {
                                 Eigen::Map<Eigen::Array<T, 1, Eigen::Dynamic>> GB(tape.grad_buffer(ib).data(), c);
                                 // Row-by-row accumulation keeps the reduction contiguous.
                                 const auto A = ConstMapMat<T>(tape.node(ia).value.data(), r, c).array();
                                 for (Eigen::Index i = 0; i < r; ++i) {
                                     switch (kind) {
                                         case Binary::add: GB += G.row(i); break;
                                         case Binary::sub: GB -= G.row(i); break;
                                         case Binary::mul: GB += G.row(i) * A.row(i); break;
                                     }
                                 }
                             }
                         });
}

template <typename T, typename Fwd, typename Deriv>
Var<T> unary_op(const Var<T>& a, Fwd fwd, Deriv deriv) {
    const auto av = a.value();
    Buffer<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    const std::size_t ia = a.id();
    return a.tape().push(a.shape(), std::move(out), a.requires_grad(),
                         [ia, deriv](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             const auto& x = tape.node(ia).value;
                             const auto& y = tape.node(self).value;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
                         });
}

}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream ss;
    ss << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) ss << 'x';
        ss << shape[i];
    }
    ss << ')';
    return ss.str();
}

template <typename T>
T Var<T>::item() const {
    const auto v = value();
    if (v.size() != 1) {
        throw std::invalid_argument("item() on a tensor of shape " + shape_string(shape()));
    }
    return v[0];
}

// ---- Tape -----------------------------------------------------------------

template <typename T>
Var<T> Tape<T>::constant(Shape shape, std::vector<T> values) {
    return push(std::move(shape), Buffer<T>(values.begin(), values.end()), false, nullptr);
}

template <typename T>
Var<T> Tape<T>::leaf(Shape shape, std::vector<T> values) {
    return push(std::move(shape), Buffer<T>(values.begin(), values.end()), true, nullptr);
}

template <typename T>
Var<T> Tape<T>::push(Shape shape, Buffer<T> value, bool requires_grad, BackwardFn backward) {
    if (numel(shape) != value.size()) {
        throw std::invalid_argument("tape: value count " + std::to_string(value.size()) + " does not match shape " +
                                    shape_string(shape));
    }
    Node n;
    n.shape = std::move(shape);
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return make_var(nodes_.size() - 1);
}

template <typename T>
Buffer<T>& Tape<T>::grad_buffer(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
}

template <typename T>
void Tape<T>::backward(const Var<T>& root) {
    if (root.size() != 1) {
        throw std::invalid_argument("backward: root must be a single element, got shape " +
                                    shape_string(root.shape()));
    }
    const Seed seed{root, {T(1)}};
    backward(std::span<const Seed>(&seed, 1));
}

template <typename T>
void Tape<T>::backward(std::span<const Seed> seeds) {
    std::size_t top = 0;
    bool any = false;
    for (const auto& s : seeds) {
        if (&s.var.tape() != this) {
            throw std::invalid_argument("backward: seed belongs to another tape");
        }
        if (s.grad.size() != s.var.size()) {
            throw std::invalid_argument("backward: seed gradient size mismatch for shape " +
                                        shape_string(s.var.shape()));
        }
        if (!s.var.requires_grad()) continue;
        auto& g = grad_buffer(s.var.id());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s.grad[i];
        top = std::max(top, s.var.id());
        any = true;
    }
    if (!any) return;
    for (std::size_t id = top + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, id);
    }
}

// ---- linear algebra ---------------------------------------------------------

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
    require_same_tape(a, b, "matmul");
    require_matrix(a.shape(), "matmul");
    require_matrix(b.shape(), "matmul");
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
    Buffer<T> out(m * n);
    MapMat<T>(out.data(), m, n).noalias() =
        ConstMapMat<T>(a.value().data(), m, k) * ConstMapMat<T>(b.value().data(), k, n);
    const auto ia = a.id(), ib = b.id();
    return a.tape().push({m, n}, std::move(out), any_requires_grad<T>({&a, &b}),
                         [ia, ib, m, k, n](Tape<T>& tape, std::size_t self) {
                             ConstMapMat<T> g(tape.node(self).grad.data(), m, n);
                             if (tape.node(ia).requires_grad) {
                                 MapMat<T>(tape.grad_buffer(ia).data(), m, k).noalias() +=
                                     g * ConstMapMat<T>(tape.node(ib).value.data(), k, n).transpose();
                             }
                             if (tape.node(ib).requires_grad) {
                                 MapMat<T>(tape.grad_buffer(ib).data(), k, n).noalias() +=
                                     ConstMapMat<T>(tape.node(ia).value.data(), m, k).transpose() * g;
                             }
                         });
}

template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
    require_same_tape(a, b, "matmul_nt");
    require_matrix(a.shape(), "matmul_nt");
    require_matrix(b.shape(), "matmul_nt");
    const auto m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
    if (b.shape()[1] != k) {
        throw std::invalid_argument("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " vs " +
                                    shape_string(b.shape()));
    }
    Buffer<T> out(m * n);
    MapMat<T>(out.data(), m, n).noalias() =
        ConstMapMat<T>(a.value().data(), m, k) * ConstMapMat<T>(b.value().data(), n, k).transpose();
    const auto ia = a.id(), ib = b.id();
    return a.tape().push({m, n}, std::move(out), any_requires_grad<T>({&a, &b}),
                         [ia, ib, m, k, n](Tape<T>& tape, std::size_t self) {
                             ConstMapMat<T> g(tape.node(self).grad.data(), m, n);
                             if (tape.node(ia).requires_grad) {
                                 MapMat<T>(tape.grad_buffer(ia).data(), m, k).noalias() +=
                                     g * ConstMapMat<T>(tape.node(ib).value.data(), n, k);
                             }
                             if (tape.node(ib).requires_grad) {
                                 MapMat<T>(tape.grad_buffer(ib).data(), n, k).noalias() +=
                                     g.transpose() * ConstMapMat<T>(tape.node(ia).value.data(), m, k);
                             }
                         });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return binary_op(a, b, Binary::add, "add");
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return binary_op(a, b, Binary::sub, "sub");
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return binary_op(a, b, Binary::mul, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
    return unary_op(
        a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

// ---- layout -------------------------------------------------------------

template <typename T>
Var<T> transpose(const Var<T>& a) {
    require_matrix(a.shape(), "transpose");
    const auto m = a.shape()[0], n = a.shape()[1];
    Buffer<T> out(m * n);
    MapMat<T>(out.data(), n, m) = ConstMapMat<T>(a.value().data(), m, n).transpose();
    const auto ia = a.id();
    return a.tape().push({n, m}, std::move(out), a.requires_grad(), [ia, m, n](Tape<T>& tape, std::size_t self) {
        MapMat<T>(tape.grad_buffer(ia).data(), m, n) +=
            ConstMapMat<T>(tape.node(self).grad.data(), n, m).transpose();
    });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
    if (numel(shape) != a.size()) {
        throw std::invalid_argument("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
    }
    Buffer<T> out(a.value().begin(), a.value().end());
    const auto ia = a.id();
    return a.tape().push(std::move(shape), std::move(out), a.requires_grad(), [ia](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.node(self).grad;
        auto& ga = tape.grad_buffer(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis) {
    if (parts.empty()) {
        throw std::invalid_argument("concat: no inputs");
    }
    const Shape& first = parts[0].shape();
    const auto base = split_axis(first, axis, "concat");
    std::vector<std::size_t> extents;
    std::vector<std::size_t> ids;
    std::size_t total = 0;
    bool needs_grad = false;
    for (const auto& p : parts) {
        require_same_tape(parts[0], p, "concat");
        const Shape& s = p.shape();
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) {
            throw std::invalid_argument("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(s));
        }
        extents.push_back(s[axis]);
        ids.push_back(p.id());
        total += s[axis];
        needs_grad = needs_grad || p.requires_grad();
    }
    Shape out_shape = first;
    out_shape[axis] = total;
    Buffer<T> out(numel(out_shape));
    const std::size_t out_row = total * base.inner;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        const auto v = parts[p].value();
        const std::size_t row = extents[p] * base.inner;
        for (std::size_t o = 0; o < base.outer; ++o) {
            std::copy_n(v.data() + o * row, row, out.data() + o * out_row + offset);
        }
        offset += row;
    }
    const std::size_t outer = base.outer, inner = base.inner;
    return parts[0].tape().push(std::move(out_shape), std::move(out), needs_grad,
                                [ids, extents, outer, inner, out_row](Tape<T>& tape, std::size_t self) {
                                    const auto& g = tape.node(self).grad;
                                    std::size_t offset = 0;
                                    for (std::size_t p = 0; p < ids.size(); ++p) {
                                        const std::size_t row = extents[p] * inner;
                                        if (tape.node(ids[p]).requires_grad) {
                                            auto& gp = tape.grad_buffer(ids[p]);
                                            for (std::size_t o = 0; o < outer; ++o)
                                                for (std::size_t i = 0; i < row; ++i)
                                                    gp[o * row + i] += g[o * out_row + offset + i];
                                        }
                                        offset += row;
                                    }
                                });
}

template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto s = split_axis(a.shape(), axis, "slice");
    if (begin > end || end > s.extent) {
        throw std::out_of_range("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                                ") out of bounds for extent " + std::to_string(s.extent));
    }
    Shape out_shape = a.shape();
    out_shape[axis] = end - begin;
    const std::size_t in_row = s.extent * s.inner;
    const std::size_t out_row = (end - begin) * s.inner;
    const std::size_t off = begin * s.inner;
    Buffer<T> out(s.outer * out_row);
    const auto v = a.value();
    for (std::size_t o = 0; o < s.outer; ++o) {
        std::copy_n(v.data() + o * in_row + off, out_row, out.data() + o * out_row);
    }
    const auto ia = a.id();
    const std::size_t outer = s.outer;
    return a.tape().push(std::move(out_shape), std::move(out), a.requires_grad(),
                         [ia, outer, in_row, out_row, off](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t i = 0; i < out_row; ++i) ga[o * in_row + off + i] += g[o * out_row + i];
                         });
}

// ---- reductions and normalizations --------------------------------------

template <typename T>
Var<T> softmax(const Var<T>& a, std::size_t axis) {
    const auto s = split_axis(a.shape(), axis, "softmax");
    const auto v = a.value();
    Buffer<T> out(v.size());
    if (s.inner == 1) {
        // Contiguous rows: vectorized exp. Masked (-inf) entries are forced to an
        // exact zero because the packet exp clamps its argument.
        const auto n = static_cast<Eigen::Index>(s.extent);
        const T neg_inf = -std::numeric_limits<T>::infinity();
        for (std::size_t o = 0; o < s.outer; ++o) {
            Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> x(v.data() + o * s.extent, n);
            Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> y(out.data() + o * s.extent, n);
            const T mx = x.maxCoeff();
            y = (x == neg_inf).select(T(0), (x - mx).exp());
            y /= y.sum();
        }
    } else {
        for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < s.extent; ++i) mx = std::max(mx, v[base + i * s.inner]);
            T total = 0;
            for (std::size_t i = 0; i < s.extent; ++i) {
                const T e = std::exp(v[base + i * s.inner] - mx);
                out[base + i * s.inner] = e;
                total += e;
            }
            for (std::size_t i = 0; i < s.extent; ++i) out[base + i * s.inner] /= total;
        }
        }
    }
    const auto ia = a.id();
    return a.tape().push(a.shape(), std::move(out), a.requires_grad(), [ia, s](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.node(self).grad;
        const auto& y = tape.node(self).value;
        auto& ga = tape.grad_buffer(ia);
        if (s.inner == 1) {
            const auto r = static_cast<Eigen::Index>(s.outer);
            const auto c = static_cast<Eigen::Index>(s.extent);
            const auto G = ConstMapMat<T>(g.data(), r, c).array();
            const auto Y = ConstMapMat<T>(y.data(), r, c).array();
            const Eigen::Array<T, Eigen::Dynamic, 1> dot = (G * Y).rowwise().sum();
            MapMat<T>(ga.data(), r, c).array() += Y * (G.colwise() - dot);
            return;
        }
        for (std::size_t o = 0; o < s.outer; ++o) {
            for (std::size_t in = 0; in < s.inner; ++in) {
                const std::size_t base = o * s.extent * s.inner + in;
                T dot = 0;
                for (std::size_t i = 0; i < s.extent; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
                for (std::size_t i = 0; i < s.extent; ++i) {
                    const std::size_t idx = base + i * s.inner;
                    ga[idx] += y[idx] * (g[idx] - dot);
                }
            }
        }
    });
}

template <typename T>
Var<T> logsumexp(const Var<T>& a, std::size_t axis) {
    const auto s = split_axis(a.shape(), axis, "logsumexp");
    const auto v = a.value();
    Buffer<T> out(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < s.extent; ++i) mx = std::max(mx, v[base + i * s.inner]);
            if (!std::isfinite(mx)) {
                out[o * s.inner + in] = mx;
                continue;
            }
            T total = 0;
            for (std::size_t i = 0; i < s.extent; ++i) total += std::exp(v[base + i * s.inner] - mx);
            out[o * s.inner + in] = mx + std::log(total);
        }
    }
    const auto ia = a.id();
    return a.tape().push(drop_axis(a.shape(), axis), std::move(out), a.requires_grad(),
                         [ia, s](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             const auto& y = tape.node(self).value;
                             const auto& x = tape.node(ia).value;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t in = 0; in < s.inner; ++in) {
                                     const T gy = g[o * s.inner + in];
                                     const T ly = y[o * s.inner + in];
                                     const std::size_t base = o * s.extent * s.inner + in;
                                     for (std::size_t i = 0; i < s.extent; ++i) {
                                         const std::size_t idx = base + i * s.inner;
                                         ga[idx] += gy * std::exp(x[idx] - ly);
                                     }
                                 }
                             }
                         });
}

template <typename T>
Var<T> layer_norm(const Var<T>& a, std::size_t axis, T eps) {
    if (!(eps > T(0))) {
        throw std::invalid_argument("layer_norm: eps must be positive");
    }
    const auto s = split_axis(a.shape(), axis, "layer_norm");
    const auto v = a.value();
    Buffer<T> out(v.size());
    Buffer<T> rstd(s.outer * s.inner);
    const T n = static_cast<T>(s.extent);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T mu = 0;
            for (std::size_t i = 0; i < s.extent; ++i) mu += v[base + i * s.inner];
            mu /= n;
            T var = 0;
            for (std::size_t i = 0; i < s.extent; ++i) {
                const T d = v[base + i * s.inner] - mu;
                var += d * d;
            }
            var /= n;
            const T r = T(1) / std::sqrt(var + eps);
            rstd[o * s.inner + in] = r;
            for (std::size_t i = 0; i < s.extent; ++i) out[base + i * s.inner] = (v[base + i * s.inner] - mu) * r;
        }
    }
    const auto ia = a.id();
    return a.tape().push(a.shape(), std::move(out), a.requires_grad(),
                         [ia, s, rstd = std::move(rstd), n](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             const auto& y = tape.node(self).value;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t in = 0; in < s.inner; ++in) {
                                     const std::size_t base = o * s.extent * s.inner + in;
                                     T g_mean = 0, gy_mean = 0;
                                     for (std::size_t i = 0; i < s.extent; ++i) {
                                         const std::size_t idx = base + i * s.inner;
                                         g_mean += g[idx];
                                         gy_mean += g[idx] * y[idx];
                                     }
                                     g_mean /= n;
                                     gy_mean /= n;
                                     const T r = rstd[o * s.inner + in];
                                     for (std::size_t i = 0; i < s.extent; ++i) {
                                         const std::size_t idx = base + i * s.inner;
                                         ga[idx] += r * (g[idx] - g_mean - y[idx] * gy_mean);
                                     }
                                 }
                             }
                         });
}

template <typename T>
Var<T> sum(const Var<T>& a, std::size_t axis) {
    const auto s = split_axis(a.shape(), axis, "sum");
    const auto v = a.value();
    Buffer<T> out(s.outer * s.inner, T(0));
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.extent; ++i)
            for (std::size_t in = 0; in < s.inner; ++in)
                out[o * s.inner + in] += v[(o * s.extent + i) * s.inner + in];
    const auto ia = a.id();
    return a.tape().push(drop_axis(a.shape(), axis), std::move(out), a.requires_grad(),
                         [ia, s](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t o = 0; o < s.outer; ++o)
                                 for (std::size_t i = 0; i < s.extent; ++i)
                                     for (std::size_t in = 0; in < s.inner; ++in)
                                         ga[(o * s.extent + i) * s.inner + in] += g[o * s.inner + in];
                         });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
    T total = 0;
    for (T x : a.value()) total += x;
    const auto ia = a.id();
    return a.tape().push({}, {total}, a.requires_grad(), [ia](Tape<T>& tape, std::size_t self) {
        const T g = tape.node(self).grad[0];
        for (auto& x : tape.grad_buffer(ia)) x += g;
    });
}

template <typename T>
Var<T> mean(const Var<T>& a, std::size_t axis) {
    const auto extent = split_axis(a.shape(), axis, "mean").extent;
    return scale(sum(a, axis), T(1) / static_cast<T>(extent));
}

template <typename T>
Var<T> mean(const Var<T>& a) {
    return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Var<T> l2_normalize(const Var<T>& a, std::size_t axis, T eps) {
    const auto s = split_axis(a.shape(), axis, "l2_normalize");
    const auto v = a.value();
    Buffer<T> out(v.size());
    Buffer<T> norms(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.extent * s.inner + in;
            T sq = 0;
            for (std::size_t i = 0; i < s.extent; ++i) sq += v[base + i * s.inner] * v[base + i * s.inner];
            const T norm = std::sqrt(sq);
            norms[o * s.inner + in] = norm;
            const T denom = std::max(norm, eps);
            for (std::size_t i = 0; i < s.extent; ++i) out[base + i * s.inner] = v[base + i * s.inner] / denom;
        }
    }
    const auto ia = a.id();
    return a.tape().push(a.shape(), std::move(out), a.requires_grad(),
                         [ia, s, norms = std::move(norms), eps](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             const auto& y = tape.node(self).value;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t o = 0; o < s.outer; ++o) {
                                 for (std::size_t in = 0; in < s.inner; ++in) {
                                     const std::size_t base = o * s.extent * s.inner + in;
                                     const T norm = norms[o * s.inner + in];
                                     if (norm > eps) {
                                         T dot = 0;
                                         for (std::size_t i = 0; i < s.extent; ++i)
                                             dot += g[base + i * s.inner] * y[base + i * s.inner];
                                         for (std::size_t i = 0; i < s.extent; ++i) {
                                             const std::size_t idx = base + i * s.inner;
                                             ga[idx] += (g[idx] - y[idx] * dot) / norm;
                                         }
                                     } else {
                                         for (std::size_t i = 0; i < s.extent; ++i)
                                             ga[base + i * s.inner] += g[base + i * s.inner] / eps;
                                     }
                                 }
                             }
                         });
}

// ---- elementwise nonlinearities -------------------------------------------

template <typename T>
Var<T> gelu(const Var<T>& a) {
    static constexpr T c = T(0.7978845608028654);  // sqrt(2 / pi)
    static constexpr T k = T(0.044715);
    using Arr = Eigen::Array<T, Eigen::Dynamic, 1>;
    const auto n = static_cast<Eigen::Index>(a.size());
    Eigen::Map<const Arr> x(a.value().data(), n);
    // tanh is kept for the backward pass instead of being recomputed.
    auto t = std::make_shared<Arr>((c * (x + k * x.cube())).tanh());
    Buffer<T> out(a.size());
    Eigen::Map<Arr>(out.data(), n) = T(0.5) * x * (T(1) + *t);
    const std::size_t ia = a.id();
    if (!a.requires_grad()) t.reset();
    return a.tape().push(a.shape(), std::move(out), a.requires_grad(), [ia, t, n](Tape<T>& tape, std::size_t self) {
        Eigen::Map<const Arr> g(tape.node(self).grad.data(), n);
        Eigen::Map<const Arr> x(tape.node(ia).value.data(), n);
        Eigen::Map<Arr> ga(tape.grad_buffer(ia).data(), n);
        const Arr& tt = *t;
        ga += g * (T(0.5) * (T(1) + tt) +
                   T(0.5) * x * (T(1) - tt.square()) * c * (T(1) + T(3) * k * x.square()));
    });
}

template <typename T>
Var<T> tanh(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& a) {
    return unary_op(
        a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

// ---- indexing -------------------------------------------------------------

template <typename T>
Var<T> embedding_select(const Var<T>& table, std::span<const std::size_t> indices) {
    require_matrix(table.shape(), "embedding_select");
    const auto rows = table.shape()[0], cols = table.shape()[1];
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    Buffer<T> out(idx.size() * cols);
    const auto v = table.value();
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= rows) {
            throw std::out_of_range("embedding_select: index " + std::to_string(idx[r]) + " >= " +
                                    std::to_string(rows));
        }
        std::copy_n(v.data() + idx[r] * cols, cols, out.data() + r * cols);
    }
    const auto it = table.id();
    const std::size_t n = idx.size();
    return table.tape().push({n, cols}, std::move(out), table.requires_grad(),
                             [it, idx = std::move(idx), cols](Tape<T>& tape, std::size_t self) {
                                 const auto& g = tape.node(self).grad;
                                 auto& gt = tape.grad_buffer(it);
                                 for (std::size_t r = 0; r < idx.size(); ++r)
                                     for (std::size_t c = 0; c < cols; ++c) gt[idx[r] * cols + c] += g[r * cols + c];
                             });
}

template <typename T>
Var<T> masked_fill(const Var<T>& a, std::span<const std::uint8_t> mask, T fill) {
    if (mask.size() != a.size()) {
        throw std::invalid_argument("masked_fill: mask has " + std::to_string(mask.size()) + " entries for shape " +
                                    shape_string(a.shape()));
    }
    Buffer<T> out(a.value().begin(), a.value().end());
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i]) out[i] = fill;
    std::vector<std::uint8_t> m(mask.begin(), mask.end());
    const auto ia = a.id();
    return a.tape().push(a.shape(), std::move(out), a.requires_grad(),
                         [ia, m = std::move(m)](Tape<T>& tape, std::size_t self) {
                             const auto& g = tape.node(self).grad;
                             auto& ga = tape.grad_buffer(ia);
                             for (std::size_t i = 0; i < g.size(); ++i)
                                 if (!m[i]) ga[i] += g[i];
                         });
}

double rotary_angle(std::size_t position, std::size_t pair_index, std::size_t head_dim, double base) {
    const double inv_freq = std::pow(base, -2.0 * static_cast<double>(pair_index) / static_cast<double>(head_dim));
    return static_cast<double>(position) * inv_freq;
}

template <typename T>
Var<T> rotary(const Var<T>& a, std::size_t head_dim, std::span<const std::size_t> positions, double base) {
    require_matrix(a.shape(), "rotary");
    const auto rows = a.shape()[0], cols = a.shape()[1];
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw std::invalid_argument("rotary: head dimension must be even, got " + std::to_string(head_dim));
    }
    if (cols % head_dim != 0) {
        throw std::invalid_argument("rotary: width " + std::to_string(cols) + " is not a multiple of head dim " +
                                    std::to_string(head_dim));
    }
    if (positions.size() != rows) {
        throw std::invalid_argument("rotary: expected one position per row");
    }
    const std::size_t pairs = head_dim / 2;
    Buffer<T> cosv(rows * pairs), sinv(rows * pairs);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t p = 0; p < pairs; ++p) {
            const double angle = rotary_angle(positions[r], p, head_dim, base);
            cosv[r * pairs + p] = static_cast<T>(std::cos(angle));
            sinv[r * pairs + p] = static_cast<T>(std::sin(angle));
        }
    }
    const auto v = a.value();
    Buffer<T> out(v.size());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h = 0; h < cols; h += head_dim) {
            for (std::size_t p = 0; p < pairs; ++p) {
                const std::size_t i0 = r * cols + h + 2 * p;
                const T c = cosv[r * pairs + p], s = sinv[r * pairs + p];
                out[i0] = v[i0] * c - v[i0 + 1] * s;
                out[i0 + 1] = v[i0] * s + v[i0 + 1] * c;
            }
        }
    }
    const auto ia = a.id();
    return a.tape().push(
        a.shape(), std::move(out), a.requires_grad(),
        [ia, rows, cols, head_dim, pairs, cosv = std::move(cosv), sinv = std::move(sinv)](Tape<T>& tape,
                                                                                            std::size_t self) {
            const auto& g = tape.node(self).grad;
            auto& ga = tape.grad_buffer(ia);
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t h = 0; h < cols; h += head_dim) {
                    for (std::size_t p = 0; p < pairs; ++p) {
                        const std::size_t i0 = r * cols + h + 2 * p;
                        const T c = cosv[r * pairs + p], s = sinv[r * pairs + p];
                        ga[i0] += g[i0] * c + g[i0 + 1] * s;
                        ga[i0 + 1] += -g[i0] * s + g[i0 + 1] * c;
                    }
                }
            }
        });
}

// ---- explicit instantiations ----------------------------------------------

#define GAITSSL_AD_INSTANTIATE(T)                                                                         \
    template class Var<T>;                                                                                \
    template class Tape<T>;                                                                               \
    template Var<T> matmul(const Var<T>&, const Var<T>&);                                                 \
    template Var<T> matmul_nt(const Var<T>&, const Var<T>&);                                              \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> scale(const Var<T>&, T);                                                              \
    template Var<T> transpose(const Var<T>&);                                                             \
    template Var<T> reshape(const Var<T>&, Shape);                                                        \
    template Var<T> concat(std::span<const Var<T>>, std::size_t);                                         \
    template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                          \
    template Var<T> softmax(const Var<T>&, std::size_t);                                                  \
    template Var<T> logsumexp(const Var<T>&, std::size_t);                                                \
    template Var<T> layer_norm(const Var<T>&, std::size_t, T);                                            \
    template Var<T> gelu(const Var<T>&);                                                                  \
    template Var<T> tanh(const Var<T>&);                                                                  \
    template Var<T> exp(const Var<T>&);                                                                   \
    template Var<T> log(const Var<T>&);                                                                   \
    template Var<T> sum(const Var<T>&, std::size_t);                                                      \
    template Var<T> sum(const Var<T>&);                                                                   \
    template Var<T> mean(const Var<T>&, std::size_t);                                                     \
    template Var<T> mean(const Var<T>&);                                                                  \
    template Var<T> l2_normalize(const Var<T>&, std::size_t, T);                                          \
    template Var<T> embedding_select(const Var<T>&, std::span<const std::size_t>);                        \
    template Var<T> masked_fill(const Var<T>&, std::span<const std::uint8_t>, T);                         \
    template Var<T> rotary(const Var<T>&, std::size_t, std::span<const std::size_t>, double);

GAITSSL_AD_INSTANTIATE(float)
GAITSSL_AD_INSTANTIATE(double)

#undef GAITSSL_AD_INSTANTIATE

}  // namespace gaitssl::ad
