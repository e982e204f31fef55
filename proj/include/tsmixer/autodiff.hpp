#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsmixer/rng.hpp"
#include "tsmixer/tensor.hpp"

namespace tsmixer {

enum class Mode { train, eval };

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Result of a backward pass: one gradient per tape node reached from the loss.
class Gradients {
public:
    /// Gradient of the loss with respect to `v`; zeros when `v` does not influence the loss.
    Tensor of(const Var& v) const;
    bool reached(const Var& v) const { return v.id() < grads_.size() && grads_[v.id()].has_value(); }

private:
    friend class Tape;
    std::vector<std::optional<Tensor>> grads_;
};

/// Accumulates `grad_out`-weighted contributions into the inputs' gradient buffers.
/// A null entry means that input does not require a gradient.
using BackwardFn = std::function<void(const Tensor& grad_out, std::span<Tensor* const> input_grads)>;

/// Define-by-run record of differentiable operations. Build one per forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it and
/// the reverse sweep in `backward` is a valid reverse-topological order. A node
/// consumed k times receives the sum of its k upstream contributions.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Differentiable input.
    Var leaf(Tensor value);
    /// Non-differentiable input.
    Var constant(Tensor value);
    /// Append an operation node. `backward` is dropped when no input requires a gradient.
    Var record(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

    std::size_t size() const noexcept { return nodes_.size(); }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    std::string_view op(std::size_t id) const { return nodes_.at(id).op; }
    std::span<const std::size_t> inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Reverse-mode sweep from a scalar loss node.
    Gradients backward(const Var& loss) const;

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        BackwardFn backward;
    };

    void check_owner(const Var& v) const;

    std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Differentiable operations. Binary elementwise ops broadcast numpy-style:
// shapes are right-aligned and an extent of 1 expands.
// ---------------------------------------------------------------------------

/// Matrix product of rank-2 or batched rank-3 operands; a rank-2 operand is
/// shared across the batch of the other.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
/// Swaps the trailing two axes.
Var transpose(const Var& a);
Var reshape(const Var& a, Shape shape);
Var broadcast_to(const Var& a, Shape shape);
Var relu(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
/// max(a, floor) with gradient passing only where a > floor.
Var clamp_min(const Var& a, double floor);
Var sum(const Var& a);
Var mean(const Var& a);
/// Sum over the listed axes, keeping them as extent-1 axes.
Var sum_axes(const Var& a, std::initializer_list<std::size_t> axes);
Var mean_axes(const Var& a, std::initializer_list<std::size_t> axes);
Var concat_last(const Var& a, const Var& b);
Var slice_last(const Var& a, std::size_t begin, std::size_t end);
/// Inverted dropout: in train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); the identity in eval mode.
Var dropout(const Var& a, double rate, Mode mode, Rng& rng);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }
inline Var operator+(const Var& a, double s) { return add_scalar(a, s); }
inline Var operator-(const Var& a) { return scale(a, -1.0); }

/// Shape numpy broadcasting would produce for `a` and `b`.
Shape broadcast_shape(const Shape& a, const Shape& b);
/// Sum `grad` down to `shape` over axes that were broadcast.
Tensor reduce_to(const Tensor& grad, const Shape& shape);

/// Scalar function of a list of parameter tensors, evaluated on a fresh tape.
using ScalarFn = std::function<Var(Tape&, std::span<const Var>)>;

/// Largest |analytic - numeric| / max(1, |analytic|, |numeric|) over every
/// parameter element, with numeric gradients from central differences.
double grad_check(const ScalarFn& f, std::vector<Tensor> params, double step = 1e-5);

}  // namespace tsmixer
