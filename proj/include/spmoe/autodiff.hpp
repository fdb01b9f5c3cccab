#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major-agnostic
// Eigen matrices. A Tape records every operation of one forward pass; Backward
// replays the records in reverse and accumulates adjoints.

#include <Eigen/Dense>

#include <functional>
#include <span>
#include <vector>

namespace spmoe::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

class Tape {
 public:
  // A tape with recording disabled evaluates forward only; every node is a
  // constant and Backward is unavailable.
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var Constant(Matrix value);
  // Trainable leaf; its gradient is available after Backward.
  Var Leaf(Matrix value);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates.
  void Backward(Var loss);

  const Matrix& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
  // Zero matrix if the node never received an adjoint.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }
  bool recording() const { return record_; }
  size_t size() const { return nodes_.size(); }

  // Used by operations: pushes a result whose adjoint is propagated by
  // `backward`. `backward` is dropped when no parent requires a gradient.
  Var Push(Matrix value, std::span<const Var> parents,
           std::function<void(Tape&, const Matrix& out_grad)> backward);
  Var Push(Matrix value, std::initializer_list<Var> parents,
           std::function<void(Tape&, const Matrix& out_grad)> backward) {
    return Push(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backward));
  }
  // Adds `g` into the adjoint of v (no-op for constants).
  void Accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, const Matrix&)> backward;
  };
  bool record_;
  std::vector<Node> nodes_;
};

// Elementwise and linear algebra.
Var Add(Var a, Var b);
Var Sub(Var a, Var b);
Var Scale(Var a, double s);
Var MatMul(Var a, Var b);
// a * b^T
Var MatMulBT(Var a, Var b);
// Adds a 1 x cols row to every row of a.
Var AddRow(Var a, Var row);
Var Relu(Var a);
Var Transpose(Var a);
Var ConcatCols(Var a, Var b);
Var SliceRows(Var a, Eigen::Index start, Eigen::Index count);
Var SliceCols(Var a, Eigen::Index start, Eigen::Index count);
Var Sum(Var a);
// Mean over rows: (1 x cols).
Var MeanRows(Var a);
// Stacks 1 x cols rows into a matrix.
Var StackRows(std::span<const Var> rows);

// Rows of `table` selected by ids.
Var Gather(Var table, std::span<const int> ids);
// Row-wise softmax of a + additive_mask (mask is a constant matrix).
Var SoftmaxRows(Var a, const Matrix* additive_mask = nullptr);
// Per-row layer normalization with 1 x cols gain and bias.
Var LayerNormRows(Var x, Var gain, Var bias, double eps = 1e-5);
// Sum over rows t of -log softmax(logits_t)[targets_t].
Var CrossEntropySum(Var logits, std::span<const int> targets);

}  // namespace spmoe::ad
