#pragma once

// Dense 2-D tensors with a reverse-mode tape and dual-number tangents.
//
// A Tensor is a handle to a node holding a rows x cols matrix of doubles.
// Rank-0 and rank-1 quantities are represented as 1x1 and n x 1 / 1 x n
// matrices. Batched quantities put the batch on the row axis.
//
// Reverse mode: while a Tape is alive on the current thread, every op whose
// inputs require gradients is appended to it. grad() sweeps the tape once in
// reverse order.
//
// Forward mode: a tensor may carry a tangent of its own shape. Every op
// propagates tangents alongside values, so fn(x.with_tangent(v)) yields the
// Jacobian-vector product J_fn(x) v in one pass.

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace f2d2::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Thrown when an operation's preconditions do not hold (shape mismatch,
/// non-scalar loss, zero probe count, ...).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tape;

namespace detail {

struct Node {
  Matrix value;
  Matrix tangent;  // empty means zero tangent
  Matrix grad;     // empty means zero gradient
  bool requires_grad = false;
  const Tape* tape = nullptr;
  std::size_t tape_index = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
  void accumulate(Matrix&& g);
};

}  // namespace detail

class Tensor {
 public:
  Tensor();
  explicit Tensor(Matrix value);

  /// A leaf that participates in gradient computation.
  static Tensor parameter(Matrix value);
  static Tensor constant(double v, Index rows = 1, Index cols = 1);
  static Tensor zeros(Index rows, Index cols);

  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::vector<Index> shape() const { return {rows(), cols()}; }

  const Matrix& value() const { return node_->value; }
  /// In-place access for optimizers and initializers. Leaves only.
  Matrix& mutable_value();
  double item() const;

  bool requires_grad() const { return node_->requires_grad; }
  bool has_tangent() const { return node_->tangent.size() != 0; }
  /// Tangent, or an empty matrix when the tangent is zero.
  const Matrix& tangent() const { return node_->tangent; }
  /// Tangent materialised with zeros when absent.
  Matrix tangent_or_zero() const;

  /// Same value with the tangent replaced. Gradients still flow through.
  Tensor with_tangent(Matrix tangent) const;
  /// Stop-gradient: same value, no gradient link, no tangent.
  Tensor detach() const;

  const detail::Node* node() const { return node_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend Tensor make_op(Matrix value, Matrix tangent, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward);
  friend std::vector<Matrix> grad(const Tensor& loss, const std::vector<Tensor>& params);
};

/// Records differentiable operations for the lifetime of the object. Tapes nest;
/// the innermost one is active.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  std::size_t size() const { return nodes_.size(); }
  static Tape* active();

 private:
  friend class NoGradGuard;
  friend Tensor make_op(Matrix value, Matrix tangent, std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward);
  friend std::vector<Matrix> grad(const Tensor& loss, const std::vector<Tensor>& params);

  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tape* previous_ = nullptr;
};

/// Disables recording for its lifetime, even if a Tape is alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

/// Builds an op result. Records it on the active tape when any parent requires
/// gradients; otherwise the parents are dropped.
Tensor make_op(Matrix value, Matrix tangent, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward);

/// d loss / d param for each param. loss must be 1x1. Params that the loss does
/// not reach (or that are detached) get zero gradients.
std::vector<Matrix> grad(const Tensor& loss, const std::vector<Tensor>& params);

// ---- ops -------------------------------------------------------------------
// Binary elementwise ops broadcast 1-row, 1-column and 1x1 operands.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor matmul(const Tensor& a, const Tensor& b);
/// x W + b with b a 1 x out row broadcast over the batch.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor silu(const Tensor& x);
Tensor sin(const Tensor& x);
Tensor cos(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor sqrt(const Tensor& x);

/// Elementwise f with user-supplied derivative df. Used for closed-form maps
/// whose building blocks are not primitive ops.
using ScalarFn = std::function<double(double)>;
Tensor elementwise(const Tensor& x, ScalarFn f, ScalarFn df);

Tensor sum(const Tensor& x);       // -> 1x1
Tensor mean(const Tensor& x);      // -> 1x1
Tensor sum_cols(const Tensor& x);  // row-wise sum -> rows x 1

Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, Index start, Index count);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

}  // namespace f2d2::ad
