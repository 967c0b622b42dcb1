#include "f2d2/autodiff/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace f2d2::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

Index broadcast_extent(Index a, Index b, const char* what) {
  if (a == b) return a;
  if (a == 1) return b;
  if (b == 1) return a;
  throw ContractViolation(std::string("incompatible shapes in ") + what);
}

Matrix expand(const Matrix& m, Index rows, Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

Matrix reduce_to(Matrix g, Index rows, Index cols) {
  if (rows == 1 && g.rows() != 1) g = g.colwise().sum().eval();
  if (cols == 1 && g.cols() != 1) g = g.rowwise().sum().eval();
  return g;
}

bool any_tangent(const Tensor& a, const Tensor& b) { return a.has_tangent() || b.has_tangent(); }

}  // namespace

void detail::Node::accumulate(const Matrix& g) {
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

void detail::Node::accumulate(Matrix&& g) {
  if (grad.size() == 0) {
    grad = std::move(g);
  } else {
    grad += g;
  }
}

Tensor::Tensor() : node_(std::make_shared<detail::Node>()) {}

Tensor::Tensor(Matrix value) : node_(std::make_shared<detail::Node>()) {
  node_->value = std::move(value);
}

Tensor Tensor::parameter(Matrix value) {
  Tensor t(std::move(value));
  t.node_->requires_grad = true;
  return t;
}

Tensor Tensor::constant(double v, Index rows, Index cols) {
  return Tensor(Matrix::Constant(rows, cols, v));
}

Tensor Tensor::zeros(Index rows, Index cols) { return Tensor(Matrix::Zero(rows, cols)); }

Matrix& Tensor::mutable_value() {
  if (node_->backward) throw ContractViolation("mutable_value on a non-leaf tensor");
  return node_->value;
}

double Tensor::item() const {
  if (size() != 1) throw ContractViolation("item() on a tensor with more than one element");
  return node_->value(0, 0);
}

Matrix Tensor::tangent_or_zero() const {
  if (has_tangent()) return node_->tangent;
  return Matrix::Zero(rows(), cols());
}

Tensor Tensor::with_tangent(Matrix tangent) const {
  if (tangent.rows() != rows() || tangent.cols() != cols()) {
    throw ContractViolation("tangent shape must match value shape");
  }
  return make_op(node_->value, std::move(tangent), {*this},
                 [](detail::Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor Tensor::detach() const { return Tensor(node_->value); }

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() {
  g_active_tape = previous_;
  // Break parent links iteratively so long chains do not recurse on destruction.
  for (auto& n : nodes_) {
    n->parents.clear();
    n->backward = nullptr;
  }
}

Tape* Tape::active() { return g_active_tape; }

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }
NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

Tensor make_op(Matrix value, Matrix tangent, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward) {
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  node->tangent = std::move(tangent);
  Tape* tape = g_active_tape;
  bool needs = false;
  if (tape != nullptr) {
    for (const auto& p : parents) needs = needs || p.requires_grad();
  }
  if (needs) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(std::move(p.node_));
    node->backward = std::move(backward);
    node->tape = tape;
    node->tape_index = tape->nodes_.size();
    tape->nodes_.push_back(node);
  }
  return Tensor(std::move(node));
}

std::vector<Matrix> grad(const Tensor& loss, const std::vector<Tensor>& params) {
  if (loss.size() != 1) throw ContractViolation("grad() requires a scalar loss");
  std::vector<Matrix> out;
  out.reserve(params.size());
  const detail::Node* root = loss.node_.get();
  const Tape* tape = root->tape;
  if (!root->requires_grad || tape == nullptr || !root->backward) {
    // Loss is itself a leaf or not connected to any parameter.
    for (const auto& p : params) {
      if (p.node_.get() == root && root->requires_grad) {
        out.push_back(Matrix::Ones(1, 1));
      } else {
        out.push_back(Matrix::Zero(p.rows(), p.cols()));
      }
    }
    return out;
  }
  const auto& nodes = tape->nodes_;
  for (std::size_t i = 0; i <= root->tape_index; ++i) {
    nodes[i]->grad.resize(0, 0);
    for (auto& parent : nodes[i]->parents) {
      if (!parent->backward) parent->grad.resize(0, 0);
    }
  }
  for (const auto& p : params) p.node_->grad.resize(0, 0);

  nodes[root->tape_index]->grad = Matrix::Ones(1, 1);
  for (std::size_t i = root->tape_index + 1; i-- > 0;) {
    detail::Node& n = *nodes[i];
    if (n.grad.size() == 0) continue;
    n.backward(n);
  }
  for (const auto& p : params) {
    const Matrix& g = p.node_->grad;
    if (g.size() == 0) {
      out.push_back(Matrix::Zero(p.rows(), p.cols()));
    } else {
      out.push_back(g);
    }
  }
  // Interior gradients are not needed after the sweep.
  for (std::size_t i = 0; i <= root->tape_index; ++i) nodes[i]->grad.resize(0, 0);
  return out;
}

// ---- elementwise binary ----------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  const Index r = broadcast_extent(a.rows(), b.rows(), "add");
  const Index c = broadcast_extent(a.cols(), b.cols(), "add");
  Matrix value = expand(a.value(), r, c) + expand(b.value(), r, c);
  Matrix tangent;
  if (any_tangent(a, b)) {
    tangent = expand(a.tangent_or_zero(), r, c) + expand(b.tangent_or_zero(), r, c);
  }
  return make_op(std::move(value), std::move(tangent), {a, b}, [](detail::Node& self) {
    for (auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(reduce_to(self.grad, p->value.rows(), p->value.cols()));
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const Index r = broadcast_extent(a.rows(), b.rows(), "sub");
  const Index c = broadcast_extent(a.cols(), b.cols(), "sub");
  Matrix value = expand(a.value(), r, c) - expand(b.value(), r, c);
  Matrix tangent;
  if (any_tangent(a, b)) {
    tangent = expand(a.tangent_or_zero(), r, c) - expand(b.tangent_or_zero(), r, c);
  }
  return make_op(std::move(value), std::move(tangent), {a, b}, [](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(reduce_to(self.grad, pa->value.rows(), pa->value.cols()));
    if (pb->requires_grad) {
      pb->accumulate(reduce_to(-self.grad, pb->value.rows(), pb->value.cols()));
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const Index r = broadcast_extent(a.rows(), b.rows(), "mul");
  const Index c = broadcast_extent(a.cols(), b.cols(), "mul");
  Matrix av = expand(a.value(), r, c);
  Matrix bv = expand(b.value(), r, c);
  Matrix value = av.cwiseProduct(bv);
  Matrix tangent;
  if (any_tangent(a, b)) {
    tangent = expand(a.tangent_or_zero(), r, c).cwiseProduct(bv) +
              av.cwiseProduct(expand(b.tangent_or_zero(), r, c));
  }
  return make_op(std::move(value), std::move(tangent), {a, b}, [r, c](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) {
      Matrix g = self.grad.cwiseProduct(expand(pb->value, r, c));
      pa->accumulate(reduce_to(std::move(g), pa->value.rows(), pa->value.cols()));
    }
    if (pb->requires_grad) {
      Matrix g = self.grad.cwiseProduct(expand(pa->value, r, c));
      pb->accumulate(reduce_to(std::move(g), pb->value.rows(), pb->value.cols()));
    }
  });
}

Tensor scale(const Tensor& a, double c) {
  Matrix tangent;
  if (a.has_tangent()) tangent = a.tangent() * c;
  return make_op(a.value() * c, std::move(tangent), {a},
                 [c](detail::Node& self) { self.parents[0]->accumulate(self.grad * c); });
}

Tensor add_scalar(const Tensor& a, double c) {
  Matrix tangent;
  if (a.has_tangent()) tangent = a.tangent();
  return make_op((a.value().array() + c).matrix(), std::move(tangent), {a},
                 [](detail::Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul inner dimensions differ");
  Matrix value = a.value() * b.value();
  Matrix tangent;
  if (any_tangent(a, b)) {
    tangent = Matrix::Zero(value.rows(), value.cols());
    if (a.has_tangent()) tangent.noalias() += a.tangent() * b.value();
    if (b.has_tangent()) tangent.noalias() += a.value() * b.tangent();
  }
  return make_op(std::move(value), std::move(tangent), {a, b}, [](detail::Node& self) {
    auto& pa = self.parents[0];
    auto& pb = self.parents[1];
    if (pa->requires_grad) pa->accumulate(Matrix(self.grad * pb->value.transpose()));
    if (pb->requires_grad) pb->accumulate(Matrix(pa->value.transpose() * self.grad));
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.cols() != w.rows()) throw ContractViolation("linear: input width does not match weight");
  if (b.rows() != 1 || b.cols() != w.cols()) throw ContractViolation("linear: bias must be 1 x out");
  Matrix value(x.rows(), w.cols());
  value.noalias() = x.value() * w.value();
  value.rowwise() += b.value().row(0);
  Matrix tangent;
  if (x.has_tangent() || w.has_tangent() || b.has_tangent()) {
    tangent = Matrix::Zero(value.rows(), value.cols());
    if (x.has_tangent()) tangent.noalias() += x.tangent() * w.value();
    if (w.has_tangent()) tangent.noalias() += x.value() * w.tangent();
    if (b.has_tangent()) tangent.rowwise() += b.tangent().row(0);
  }
  return make_op(std::move(value), std::move(tangent), {x, w, b}, [](detail::Node& self) {
    auto& px = self.parents[0];
    auto& pw = self.parents[1];
    auto& pb = self.parents[2];
    if (px->requires_grad) {
      Matrix g(self.grad.rows(), pw->value.rows());
      g.noalias() = self.grad * pw->value.transpose();
      px->accumulate(std::move(g));
    }
    if (pw->requires_grad) {
      Matrix g(pw->value.rows(), pw->value.cols());
      g.noalias() = px->value.transpose() * self.grad;
      pw->accumulate(std::move(g));
    }
    if (pb->requires_grad) pb->accumulate(Matrix(self.grad.colwise().sum()));
  });
}

// ---- elementwise unary -----------------------------------------------------

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

// gelu(x) = x * sigmoid(2 c (x + a x^3)); returns (value, derivative).
void gelu_eval(const Matrix& x, Matrix* value, Matrix* deriv) {
  const auto xa = x.array();
  const Eigen::ArrayXXd sig = (1.0 + (-2.0 * kGeluC * xa * (1.0 + kGeluA * xa.square())).exp()).inverse();
  if (value) *value = (xa * sig).matrix();
  if (deriv) {
    *deriv = (sig * (1.0 + xa * (1.0 - sig) * (2.0 * kGeluC) * (1.0 + 3.0 * kGeluA * xa.square()))).matrix();
  }
}

void silu_eval(const Matrix& x, Matrix* value, Matrix* deriv) {
  const auto xa = x.array();
  const Eigen::ArrayXXd sig = (1.0 + (-xa).exp()).inverse();
  if (value) *value = (xa * sig).matrix();
  if (deriv) *deriv = (sig * (1.0 + xa * (1.0 - sig))).matrix();
}

using UnaryEval = void (*)(const Matrix&, Matrix*, Matrix*);

Tensor unary(const Tensor& x, UnaryEval eval) {
  Matrix value;
  Matrix tangent;
  // The derivative is kept for the backward pass whenever it will be needed,
  // so the exponentials are evaluated once per forward.
  const bool recording = Tape::active() != nullptr && x.requires_grad();
  if (x.has_tangent() || recording) {
    auto deriv = std::make_shared<Matrix>();
    eval(x.value(), &value, deriv.get());
    if (x.has_tangent()) tangent = x.tangent().cwiseProduct(*deriv);
    if (!recording) return make_op(std::move(value), std::move(tangent), {x}, nullptr);
    return make_op(std::move(value), std::move(tangent), {x}, [deriv](detail::Node& self) {
      self.parents[0]->accumulate(Matrix(self.grad.cwiseProduct(*deriv)));
    });
  }
  eval(x.value(), &value, nullptr);
  return make_op(std::move(value), std::move(tangent), {x}, nullptr);
}

}  // namespace

Tensor gelu(const Tensor& x) { return unary(x, &gelu_eval); }
Tensor silu(const Tensor& x) { return unary(x, &silu_eval); }

Tensor sin(const Tensor& x) {
  return unary(x, [](const Matrix& v, Matrix* value, Matrix* deriv) {
    if (value) *value = v.array().sin().matrix();
    if (deriv) *deriv = v.array().cos().matrix();
  });
}

Tensor cos(const Tensor& x) {
  return unary(x, [](const Matrix& v, Matrix* value, Matrix* deriv) {
    if (value) *value = v.array().cos().matrix();
    if (deriv) *deriv = (-v.array().sin()).matrix();
  });
}

Tensor square(const Tensor& x) {
  return unary(x, [](const Matrix& v, Matrix* value, Matrix* deriv) {
    if (value) *value = v.array().square().matrix();
    if (deriv) *deriv = 2.0 * v;
  });
}

// ---- reductions and reshaping ----------------------------------------------

Tensor exp(const Tensor& x) {
  return unary(x, [](const Matrix& v, Matrix* value, Matrix* deriv) {
    const Matrix e = v.array().exp().matrix();
    if (value) *value = e;
    if (deriv) *deriv = e;
  });
}

Tensor sqrt(const Tensor& x) {
  return unary(x, [](const Matrix& v, Matrix* value, Matrix* deriv) {
    const Eigen::ArrayXXd r = v.array().sqrt();
    if (value) *value = r.matrix();
    if (deriv) *deriv = (0.5 / r).matrix();
  });
}

Tensor elementwise(const Tensor& x, ScalarFn f, ScalarFn df) {
  Matrix value = x.value().unaryExpr(f);
  Matrix tangent;
  if (x.has_tangent()) tangent = x.tangent().cwiseProduct(x.value().unaryExpr(df));
  return make_op(std::move(value), std::move(tangent), {x}, [df = std::move(df)](detail::Node& self) {
    auto& px = self.parents[0];
    px->accumulate(Matrix(self.grad.cwiseProduct(px->value.unaryExpr(df))));
  });
}

Tensor sum(const Tensor& x) {
  Matrix value = Matrix::Constant(1, 1, x.value().sum());
  Matrix tangent;
  if (x.has_tangent()) tangent = Matrix::Constant(1, 1, x.tangent().sum());
  return make_op(std::move(value), std::move(tangent), {x}, [](detail::Node& self) {
    auto& px = self.parents[0];
    px->accumulate(Matrix::Constant(px->value.rows(), px->value.cols(), self.grad(0, 0)));
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ContractViolation("mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_cols(const Tensor& x) {
  Matrix value = x.value().rowwise().sum();
  Matrix tangent;
  if (x.has_tangent()) tangent = x.tangent().rowwise().sum();
  return make_op(std::move(value), std::move(tangent), {x}, [](detail::Node& self) {
    auto& px = self.parents[0];
    px->accumulate(Matrix(self.grad.replicate(1, px->value.cols())));
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractViolation("concat_cols of nothing");
  const Index rows = parts.front().rows();
  Index cols = 0;
  bool tangents = false;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ContractViolation("concat_cols row counts differ");
    cols += p.cols();
    tangents = tangents || p.has_tangent();
  }
  Matrix value(rows, cols);
  Matrix tangent;
  if (tangents) tangent = Matrix::Zero(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    value.middleCols(at, p.cols()) = p.value();
    if (p.has_tangent()) tangent.middleCols(at, p.cols()) = p.tangent();
    at += p.cols();
  }
  return make_op(std::move(value), std::move(tangent), parts, [](detail::Node& self) {
    Index offset = 0;
    for (auto& p : self.parents) {
      const Index w = p->value.cols();
      if (p->requires_grad) p->accumulate(Matrix(self.grad.middleCols(offset, w)));
      offset += w;
    }
  });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > x.cols()) {
    throw ContractViolation("slice_cols out of range");
  }
  Matrix value = x.value().middleCols(start, count);
  Matrix tangent;
  if (x.has_tangent()) tangent = x.tangent().middleCols(start, count);
  return make_op(std::move(value), std::move(tangent), {x}, [start, count](detail::Node& self) {
    auto& px = self.parents[0];
    Matrix g = Matrix::Zero(px->value.rows(), px->value.cols());
    g.middleCols(start, count) = self.grad;
    px->accumulate(std::move(g));
  });
}

}  // namespace f2d2::ad
