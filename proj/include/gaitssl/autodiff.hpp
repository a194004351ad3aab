// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <new>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace gaitssl::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// 64-byte aligned storage. Eigen peels unaligned heads off its vectorized
/// loops, so the summation order of a reduction depends on the buffer address;
/// a fixed alignment keeps repeated evaluations bit-identical.
template <typename T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <typename U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

template <typename T>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape<T>& tape() const { return *tape_; }
    std::size_t id() const noexcept { return id_; }

    const Shape& shape() const;
    std::size_t size() const;
    std::span<const T> value() const;
    /// Empty until backward reaches this node.
    std::span<const T> grad() const;
    bool requires_grad() const;
    T item() const;

private:
    friend class Tape<T>;
    Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape<T>* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Records primal operations in creation order; backward walks them in reverse,
/// which visits every node after all of its consumers.
///
/// A tape is single-threaded. Data-parallel callers use one tape per worker and
/// sum leaf gradients afterwards in a fixed order.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    struct Node {
        Shape shape;
        Buffer<T> value;
        Buffer<T> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    struct Seed {
        Var<T> var;
        std::vector<T> grad;
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<T> constant(Shape shape, std::vector<T> values);
    Var<T> leaf(Shape shape, std::vector<T> values);

    /// Appends a node. `backward` is dropped when `requires_grad` is false.
    Var<T> push(Shape shape, Buffer<T> value, bool requires_grad, BackwardFn backward);

    Node& node(std::size_t id) { return nodes_[id]; }
    const Node& node(std::size_t id) const { return nodes_[id]; }

    /// Gradient buffer of a node, zero-filled on first access.
    Buffer<T>& grad_buffer(std::size_t id);

    /// Seeds d(root)/d(root) = 1 for a single-element root.
    void backward(const Var<T>& root);
    /// Seeds several roots with explicit upstream gradients, then walks once.
    void backward(std::span<const Seed> seeds);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    Var<T> make_var(std::size_t id) { return Var<T>(this, id); }

    std::deque<Node> nodes_;
};

template <typename T>
const Shape& Var<T>::shape() const {
    return tape_->node(id_).shape;
}
template <typename T>
std::size_t Var<T>::size() const {
    return tape_->node(id_).value.size();
}
template <typename T>
std::span<const T> Var<T>::value() const {
    return tape_->node(id_).value;
}
template <typename T>
std::span<const T> Var<T>::grad() const {
    return tape_->node(id_).grad;
}
template <typename T>
bool Var<T>::requires_grad() const {
    return tape_->node(id_).requires_grad;
}

// ---- primitives -----------------------------------------------------------
// Shape errors throw std::invalid_argument; bad axes throw std::out_of_range.

/// (m x k) . (k x n)
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// (m x k) . (n x k)^T
template <typename T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b);

/// Elementwise; `b` may also match a trailing suffix of `a`'s shape and is then
/// repeated over the leading dimensions (bias / gain broadcasting).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> transpose(const Var<T>& a);
template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);
template <typename T>
Var<T> concat(std::span<const Var<T>> parts, std::size_t axis);
/// Elements [begin, end) along `axis`.
template <typename T>
Var<T> slice(const Var<T>& a, std::size_t axis, std::size_t begin, std::size_t end);

/// Max-subtracted softmax.
template <typename T>
Var<T> softmax(const Var<T>& a, std::size_t axis);
/// Reduces `axis`; -inf entries contribute exactly zero.
template <typename T>
Var<T> logsumexp(const Var<T>& a, std::size_t axis);
/// (x - mean) / sqrt(var + eps) along `axis`, no affine.
template <typename T>
Var<T> layer_norm(const Var<T>& a, std::size_t axis, T eps = T(1e-5));

/// tanh approximation.
template <typename T>
Var<T> gelu(const Var<T>& a);
template <typename T>
Var<T> tanh(const Var<T>& a);
template <typename T>
Var<T> exp(const Var<T>& a);
template <typename T>
Var<T> log(const Var<T>& a);

template <typename T>
Var<T> sum(const Var<T>& a, std::size_t axis);
template <typename T>
Var<T> sum(const Var<T>& a);
template <typename T>
Var<T> mean(const Var<T>& a, std::size_t axis);
template <typename T>
Var<T> mean(const Var<T>& a);

/// x / max(||x||, eps) along `axis`.
template <typename T>
Var<T> l2_normalize(const Var<T>& a, std::size_t axis, T eps = T(1e-12));

/// Rows of a 2-D table.
template <typename T>
Var<T> embedding_select(const Var<T>& table, std::span<const std::size_t> indices);

/// Entries with mask != 0 become `fill`; their gradient is zero.
template <typename T>
Var<T> masked_fill(const Var<T>& a, std::span<const std::uint8_t> mask, T fill);

/// Rotates adjacent pairs (2i, 2i+1) of every head block of each row by
/// position[row] * base^(-2i / head_dim).
template <typename T>
Var<T> rotary(const Var<T>& a, std::size_t head_dim, std::span<const std::size_t> positions, double base = 10000.0);

/// Angle used by `rotary` for one pair.
double rotary_angle(std::size_t position, std::size_t pair_index, std::size_t head_dim, double base);

}  // namespace gaitssl::ad
