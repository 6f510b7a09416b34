#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "concrete/tensor.hpp"

namespace concrete::ad {

class Tape;

/// Handle to a node recorded on a Tape. Cheap to copy; valid while the tape lives.
class NodeRef {
public:
    NodeRef() = default;
    NodeRef(Tape* tape, std::size_t index) noexcept : tape_(tape), index_(index) {}

    Tape& tape() const;
    std::size_t index() const noexcept { return index_; }
    bool valid() const noexcept { return tape_ != nullptr; }

    const Tensor& value() const;
    const Tensor& grad() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

private:
    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
};

/// Reduction / normalization direction.
///   PerRow    : combine the columns of each row      -> (rows, 1)
///   PerColumn : combine the rows of each column      -> (1, cols)
///   All       : combine everything                   -> (1, 1)
enum class Reduce { PerRow, PerColumn, All };

enum class Axis { Rows, Cols };

/// Raised when a pathwise backward pass reaches a discrete sampling node whose
/// parameters require gradients.
class NonDifferentiableError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

struct BackwardOptions {
    bool reject_discrete = false;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

    enum class Kind { Constant, Variable, Operation, Discrete };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    NodeRef constant(Tensor value);
    NodeRef constant(double value) { return constant(Tensor::scalar(value)); }
    NodeRef variable(Tensor value);

    /// Records a non-differentiable sample (e.g. an argmax one-hot) drawn from
    /// `source`. Its backward contributes nothing.
    NodeRef discrete(Tensor value, NodeRef source);

    NodeRef record(Tensor value, std::vector<std::size_t> parents, BackwardFn backward);

    const Tensor& value(std::size_t i) const { return nodes_.at(i).value; }
    const Tensor& grad(std::size_t i) const { return nodes_.at(i).grad; }
    bool requires_grad(std::size_t i) const { return nodes_.at(i).requires_grad; }
    Kind kind(std::size_t i) const { return nodes_.at(i).kind; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Adds `g` into the gradient buffer of node i (no-op for nodes without grad).
    void accumulate(std::size_t i, const Tensor& g);

    /// Reverse sweep from a scalar root. Zeroes every gradient buffer first.
    void backward(NodeRef root, BackwardOptions options = {});

    void clear() { nodes_.clear(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> parents;
        BackwardFn backward;
        Kind kind = Kind::Operation;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

// Leaf creation helpers -------------------------------------------------------

NodeRef constant_like(NodeRef ref, Tensor value);

// Elementwise arithmetic with broadcasting. Operand shapes must be equal, or
// one of them (1,1), (1,cols) or (rows,1) against the other.
NodeRef add(NodeRef a, NodeRef b);
NodeRef sub(NodeRef a, NodeRef b);
NodeRef mul(NodeRef a, NodeRef b);
NodeRef div(NodeRef a, NodeRef b);
NodeRef neg(NodeRef a);
NodeRef scale(NodeRef a, double s);
NodeRef add_scalar(NodeRef a, double s);

// Elementwise functions.
NodeRef exp(NodeRef a);
NodeRef log(NodeRef a);
NodeRef sigmoid(NodeRef a);
NodeRef tanh(NodeRef a);
/// log(1 + exp(a)), stable for large |a|.
NodeRef softplus(NodeRef a);
/// log(sigmoid(a)) = -softplus(-a).
NodeRef log_sigmoid(NodeRef a);
/// Value clamped to [lo, hi]; gradient passes only strictly inside.
NodeRef clamp(NodeRef a, double lo, double hi);

// Fused reductions.
NodeRef logsumexp(NodeRef a, Reduce how);
NodeRef softmax(NodeRef a, Reduce how);
NodeRef log_softmax(NodeRef a, Reduce how);
NodeRef sum(NodeRef a, Reduce how = Reduce::All);
NodeRef mean(NodeRef a, Reduce how = Reduce::All);

// Linear algebra and shape.
NodeRef matmul(NodeRef a, NodeRef b);
/// x * W + b with b broadcast over rows.
NodeRef affine(NodeRef x, NodeRef w, NodeRef b);
NodeRef concat(std::span<const NodeRef> parts, Axis axis);
NodeRef broadcast_to(NodeRef a, std::size_t rows, std::size_t cols);
NodeRef slice_cols(NodeRef a, std::size_t begin, std::size_t count);
NodeRef reshape(NodeRef a, std::size_t rows, std::size_t cols);
/// Each row repeated `times` times consecutively: row r -> rows r*times .. r*times+times-1.
NodeRef repeat_rows(NodeRef a, std::size_t times);

/// Identity forward, zero backward.
NodeRef stop_gradient(NodeRef a);

// Operators.
inline NodeRef operator+(NodeRef a, NodeRef b) { return add(a, b); }
inline NodeRef operator-(NodeRef a, NodeRef b) { return sub(a, b); }
inline NodeRef operator*(NodeRef a, NodeRef b) { return mul(a, b); }
inline NodeRef operator/(NodeRef a, NodeRef b) { return div(a, b); }
inline NodeRef operator-(NodeRef a) { return neg(a); }
inline NodeRef operator*(NodeRef a, double s) { return scale(a, s); }
inline NodeRef operator*(double s, NodeRef a) { return scale(a, s); }
inline NodeRef operator/(NodeRef a, double s) { return scale(a, 1.0 / s); }
inline NodeRef operator+(NodeRef a, double s) { return add_scalar(a, s); }
inline NodeRef operator+(double s, NodeRef a) { return add_scalar(a, s); }
inline NodeRef operator-(NodeRef a, double s) { return add_scalar(a, -s); }
inline NodeRef operator-(double s, NodeRef a) { return add_scalar(neg(a), s); }

// Plain-tensor helpers shared by samplers and tests.
Tensor tensor_logsumexp_rows(const Tensor& a);
Tensor tensor_transpose(const Tensor& a);

}  // namespace concrete::ad
