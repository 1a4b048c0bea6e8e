#pragma once

// Reverse-mode automatic differentiation over small dense matrices.
//
// A Tape owns every node created during one forward pass. Nodes are appended
// in creation order, which is already a topological order, so backward() is a
// single reverse sweep that visits each node at most once. Scalars are 1x1
// matrices. Elementwise binary ops accept equal shapes or a 1x1 operand on
// either side; nothing else is broadcast except add_row().

#include "evovgm/special_functions.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace evovgm::ad {

using Matrix = Eigen::MatrixXd;

class Tape;

/// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const;
  std::size_t id() const { return id_; }

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  bool is_scalar() const { return rows() == 1 && cols() == 1; }

  /// Gradient after Tape::backward; zeros when the node was not reached.
  Matrix grad() const;

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  /// Propagates `upstream` (d loss / d node) into the parents' accumulators.
  using Backward = std::function<void(Tape&, const Matrix& upstream)>;

  Tape() { nodes_.reserve(1024); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value) { return push(std::move(value), false, false, {}); }
  Var constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

  /// Trainable leaf.
  Var parameter(Matrix value) {
    Var v = push(std::move(value), true, true, {});
    parameters_.push_back(v.id());
    return v;
  }
  Var parameter(double value) { return parameter(Matrix::Constant(1, 1, value)); }

  /// Adds an interior node. The backward rule is dropped when no parent needs
  /// a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backward backward) {
    bool needs_grad = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs_grad = needs_grad || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs_grad, false, needs_grad ? std::move(backward) : Backward{});
  }

  Var record(Matrix value, const std::vector<Var>& parents, Backward backward) {
    bool needs_grad = false;
    for (const Var& p : parents) {
      check_owner(p);
      needs_grad = needs_grad || nodes_[p.id()].requires_grad;
    }
    return push(std::move(value), needs_grad, false, needs_grad ? std::move(backward) : Backward{});
  }

  void backward(const Var& loss) {
    check_owner(loss);
    const Matrix& v = nodes_[loss.id()].value;
    if (v.rows() != 1 || v.cols() != 1) {
      throw std::invalid_argument("backward: loss must be a scalar, got " + std::to_string(v.rows()) + "x" +
                                  std::to_string(v.cols()));
    }
    for (Node& n : nodes_) {
      n.grad.resize(0, 0);
      n.has_grad = false;
    }
    accumulate(loss.id(), Matrix::Ones(1, 1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.has_grad || !n.backward) continue;
      // Rules only write into parents, which have smaller ids.
      n.backward(*this, n.grad);
    }
  }

  template <class Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (g.rows() != n.value.rows() || g.cols() != n.value.cols()) {
      throw std::logic_error("accumulate: gradient shape mismatch on node " + std::to_string(id));
    }
    if (!n.has_grad) {
      n.grad = g;
      n.has_grad = true;
    } else {
      n.grad += g;
    }
  }

  void accumulate(std::size_t id, double g) { accumulate(id, Matrix::Constant(1, 1, g)); }

  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }

  Matrix grad(std::size_t id) const {
    const Node& n = nodes_[id];
    if (n.has_grad) return n.grad;
    return Matrix::Zero(n.value.rows(), n.value.cols());
  }

  std::vector<Var> parameters() const {
    std::vector<Var> out;
    out.reserve(parameters_.size());
    for (std::size_t id : parameters_) out.emplace_back(const_cast<Tape*>(this), id);
    return out;
  }

  std::size_t size() const { return nodes_.size(); }

  void check_owner(const Var& v) const {
    if (!v.valid() || &v.tape() != this || v.id() >= nodes_.size()) {
      throw std::invalid_argument("variable does not belong to this tape");
    }
  }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
    bool trainable = false;
    bool has_grad = false;
  };

  Var push(Matrix value, bool requires_grad, bool trainable, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), std::move(backward), requires_grad, trainable, false});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<std::size_t> parameters_;
};

inline Tape& Var::tape() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return *tape_;
}
inline const Matrix& Var::value() const { return tape().value(id_); }
inline double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw std::invalid_argument("scalar(): node is not 1x1");
  return v(0, 0);
}
inline Matrix Var::grad() const { return tape().grad(id_); }

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("operands live on different tapes");
}

inline bool is_scalar(const Matrix& m) { return m.rows() == 1 && m.cols() == 1; }

// Output shape of an elementwise binary op with 1x1 broadcasting.
inline std::pair<Eigen::Index, Eigen::Index> broadcast_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  if (is_scalar(a)) return {b.rows(), b.cols()};
  if (is_scalar(b)) return {a.rows(), a.cols()};
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + std::to_string(a.rows()) + "x" +
                              std::to_string(a.cols()) + " and " + std::to_string(b.rows()) + "x" +
                              std::to_string(b.cols()));
}

inline Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return Matrix::Constant(rows, cols, m(0, 0));
}

// Reduces a full-shape gradient back onto an operand that may have been broadcast.
inline void push_reduced(Tape& t, std::size_t id, const Matrix& g) {
  const Matrix& v = t.value(id);
  if (v.rows() == g.rows() && v.cols() == g.cols()) {
    t.accumulate(id, g);
  } else {
    t.accumulate(id, Matrix::Constant(1, 1, g.sum()));
  }
}

template <class Forward, class Derivative>
Var unary(const Var& a, Forward forward, Derivative derivative) {
  Tape& t = a.tape();
  Matrix out = a.value().unaryExpr(forward);
  const std::size_t ia = a.id();
  return t.record(std::move(out), {a}, [ia, derivative](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(ia).unaryExpr(derivative)));
  });
}

inline void require_all_positive(const Matrix& m, const char* op) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (!(m.data()[i] > 0.0)) {
      throw std::domain_error(std::string(op) + ": argument must be positive, got " + std::to_string(m.data()[i]));
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Var add(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "add");
  Matrix out = detail::expand(a.value(), r, c) + detail::expand(b.value(), r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    detail::push_reduced(t, ia, g);
    detail::push_reduced(t, ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "sub");
  Matrix out = detail::expand(a.value(), r, c) - detail::expand(b.value(), r, c);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    detail::push_reduced(t, ia, g);
    detail::push_reduced(t, ib, -g);
  });
}

inline Var mul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "mul");
  Matrix out = detail::expand(a.value(), r, c).cwiseProduct(detail::expand(b.value(), r, c));
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, r, c](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) detail::push_reduced(t, ia, g.cwiseProduct(detail::expand(t.value(ib), r, c)));
    if (t.requires_grad(ib)) detail::push_reduced(t, ib, g.cwiseProduct(detail::expand(t.value(ia), r, c)));
  });
}

inline Var div(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  const auto [r, c] = detail::broadcast_shape(a.value(), b.value(), "div");
  const Matrix denominator = detail::expand(b.value(), r, c);
  if ((denominator.array() == 0.0).any()) throw std::domain_error("div: division by zero");
  Matrix out = detail::expand(a.value(), r, c).cwiseQuotient(denominator);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, r, c](Tape& t, const Matrix& g) {
    const Matrix den = detail::expand(t.value(ib), r, c);
    if (t.requires_grad(ia)) detail::push_reduced(t, ia, g.cwiseQuotient(den));
    if (t.requires_grad(ib)) {
      const Matrix num = detail::expand(t.value(ia), r, c);
      detail::push_reduced(t, ib, -g.cwiseProduct(num).cwiseQuotient(den.cwiseProduct(den)));
    }
  });
}

inline Var neg(const Var& a) {
  const std::size_t ia = a.id();
  return a.tape().record(-a.value(), {a}, [ia](Tape& t, const Matrix& g) { t.accumulate(ia, -g); });
}

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator+(const Var& a, double b) { return add(a, a.tape().constant(b)); }
inline Var operator+(double a, const Var& b) { return add(b.tape().constant(a), b); }
inline Var operator-(const Var& a, double b) { return sub(a, a.tape().constant(b)); }
inline Var operator-(double a, const Var& b) { return sub(b.tape().constant(a), b); }
inline Var operator*(const Var& a, double b) { return mul(a, a.tape().constant(b)); }
inline Var operator*(double a, const Var& b) { return mul(b.tape().constant(a), b); }
inline Var operator/(const Var& a, double b) { return div(a, a.tape().constant(b)); }
inline Var operator/(double a, const Var& b) { return div(b.tape().constant(a), b); }

// ---------------------------------------------------------------------------
// Elementwise functions

inline Var exp(const Var& a) {
  Tape& t = a.tape();
  Matrix out = a.value().array().exp().matrix();
  const std::size_t ia = a.id();
  const std::size_t self = t.size();
  return t.record(std::move(out), {a}, [ia, self](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.cwiseProduct(t.value(self)));
  });
}

inline Var log(const Var& a) {
  detail::require_all_positive(a.value(), "log");
  return detail::unary(
      a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

inline Var pow(const Var& a, double exponent) {
  if (exponent != std::floor(exponent) && (a.value().array() < 0.0).any()) {
    throw std::domain_error("pow: negative base with non-integer exponent");
  }
  return detail::unary(
      a, [exponent](double x) { return std::pow(x, exponent); },
      [exponent](double x) { return exponent * std::pow(x, exponent - 1.0); });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

/// log(1 + e^x), evaluated without overflow.
inline Var softplus(const Var& a) {
  return detail::unary(
      a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
      [](double x) { return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

/// max(a, floor); the gradient is cut where the floor is active.
inline Var floor_at(const Var& a, double floor) {
  return detail::unary(
      a, [floor](double x) { return x > floor ? x : floor; }, [floor](double x) { return x > floor ? 1.0 : 0.0; });
}

inline Var lgamma(const Var& a) {
  detail::require_all_positive(a.value(), "lgamma");
  return detail::unary(a, special::log_gamma, special::digamma);
}

inline Var digamma(const Var& a) {
  detail::require_all_positive(a.value(), "digamma");
  return detail::unary(a, special::digamma, special::trigamma);
}

// ---------------------------------------------------------------------------
// Linear algebra, reductions and reshaping

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()) + ")");
  }
  Matrix out = a.value() * b.value();
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, const Matrix& g) {
    if (t.requires_grad(ia)) t.accumulate(ia, g * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * g);
  });
}

/// Adds a 1 x C row to every row of an R x C matrix.
inline Var add_row(const Var& a, const Var& row) {
  detail::same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw std::invalid_argument("add_row: row must be 1 x cols(a)");
  Matrix out = a.value().rowwise() + row.value().row(0);
  const std::size_t ia = a.id(), ir = row.id();
  return a.tape().record(std::move(out), {a, row}, [ia, ir](Tape& t, const Matrix& g) {
    t.accumulate(ia, g);
    t.accumulate(ir, g.colwise().sum());
  });
}

inline Var sum(const Var& a) {
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a}, [ia, r, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0)));
  });
}

inline Var mean(const Var& a) {
  if (a.value().size() == 0) throw std::invalid_argument("mean: empty operand");
  const double n = static_cast<double>(a.value().size());
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [ia, r, c, n](Tape& t, const Matrix& g) {
    t.accumulate(ia, Matrix::Constant(r, c, g(0, 0) / n));
  });
}

/// Row sums as an R x 1 column.
inline Var sum_rows(const Var& a) {
  const std::size_t ia = a.id();
  const Eigen::Index c = a.cols();
  return a.tape().record(a.value().rowwise().sum(), {a}, [ia, c](Tape& t, const Matrix& g) {
    t.accumulate(ia, g.replicate(1, c));
  });
}

/// Divides each row of `a` by its own sum.
inline Var normalize_rows(const Var& a) {
  const Matrix totals = a.value().rowwise().sum();
  if ((totals.array() == 0.0).any()) throw std::domain_error("normalize_rows: a row sums to zero");
  Matrix out = a.value().array().colwise() / totals.col(0).array();
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {a}, [ia, self, totals](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    // d y_j / d x_k = (delta_jk - y_j) / s
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix dx = g.colwise() - dot;
    dx.array().colwise() /= totals.col(0).array();
    t.accumulate(ia, dx);
  });
}

/// Row-wise softmax; a 1 x K input is the ordinary vector softmax.
inline Var softmax(const Var& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double top = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - top).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  const std::size_t ia = a.id();
  const std::size_t self = a.tape().size();
  return a.tape().record(std::move(out), {a}, [ia, self](Tape& t, const Matrix& g) {
    const Matrix& y = t.value(self);
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    t.accumulate(ia, y.cwiseProduct(g.colwise() - dot));
  });
}

inline Var element(const Var& a, Eigen::Index i, Eigen::Index j) {
  if (i < 0 || j < 0 || i >= a.rows() || j >= a.cols()) throw std::out_of_range("element: index out of range");
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value()(i, j)), {a}, [ia, i, j, r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full(i, j) = g(0, 0);
    t.accumulate(ia, full);
  });
}

inline Var row(const Var& a, Eigen::Index i) {
  if (i < 0 || i >= a.rows()) throw std::out_of_range("row: index out of range");
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(a.value().row(i), {a}, [ia, i, r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.row(i) = g;
    t.accumulate(ia, full);
  });
}

/// Columns [start, start + count) of `a`.
inline Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols: range out of bounds");
  const std::size_t ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape().record(a.value().middleCols(start, count), {a}, [ia, start, count, r, c](Tape& t, const Matrix& g) {
    Matrix full = Matrix::Zero(r, c);
    full.middleCols(start, count) = g;
    t.accumulate(ia, full);
  });
}

/// Packs scalar nodes row-major into a rows x cols matrix.
inline Var stack(const std::vector<Var>& scalars, Eigen::Index rows, Eigen::Index cols) {
  if (scalars.empty() || static_cast<Eigen::Index>(scalars.size()) != rows * cols) {
    throw std::invalid_argument("stack: element count does not match the requested shape");
  }
  Tape& tape = scalars.front().tape();
  Matrix out(rows, cols);
  std::vector<std::size_t> ids;
  ids.reserve(scalars.size());
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    tape.check_owner(scalars[k]);
    out(static_cast<Eigen::Index>(k) / cols, static_cast<Eigen::Index>(k) % cols) = scalars[k].scalar();
    ids.push_back(scalars[k].id());
  }
  return tape.record(std::move(out), scalars, [ids, cols](Tape& t, const Matrix& g) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      t.accumulate(ids[k], g(static_cast<Eigen::Index>(k) / cols, static_cast<Eigen::Index>(k) % cols));
    }
  });
}

/// Stacks a column vector of scalars.
inline Var stack(const std::vector<Var>& scalars) {
  return stack(scalars, static_cast<Eigen::Index>(scalars.size()), 1);
}

// ---------------------------------------------------------------------------
// Gradient checking

struct GradientCheck {
  double max_relative_error = 0.0;
  Eigen::VectorXd analytic;
  Eigen::VectorXd numeric;
};

using ScalarFunction = std::function<Var(Tape&, const Var& theta)>;

/// Value and backward gradient of f at theta (theta enters as a column vector parameter).
inline std::pair<double, Eigen::VectorXd> value_and_gradient(const ScalarFunction& f, const Eigen::VectorXd& theta) {
  Tape tape;
  const Var x = tape.parameter(theta);
  const Var y = f(tape, x);
  tape.backward(y);
  return {y.scalar(), Eigen::Map<const Eigen::VectorXd>(x.grad().data(), theta.size())};
}

/// Compares backward gradients with central differences. Relative error per
/// component uses max(|analytic|, |numeric|, 1e-8) as the denominator.
inline GradientCheck check_gradients_detailed(const ScalarFunction& f, const Eigen::VectorXd& theta, double eps) {
  GradientCheck out;
  out.analytic = value_and_gradient(f, theta).second;
  out.numeric.resize(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd plus = theta, minus = theta;
    plus(i) += eps;
    minus(i) -= eps;
    Tape tp, tm;
    const double fp = f(tp, tp.constant(plus)).scalar();
    const double fm = f(tm, tm.constant(minus)).scalar();
    out.numeric(i) = (fp - fm) / (2.0 * eps);
    const double denominator = std::max({std::fabs(out.analytic(i)), std::fabs(out.numeric(i)), 1e-8});
    out.max_relative_error =
        std::max(out.max_relative_error, std::fabs(out.analytic(i) - out.numeric(i)) / denominator);
  }
  return out;
}

inline double check_gradients(const ScalarFunction& f, const Eigen::VectorXd& theta, double eps) {
  return check_gradients_detailed(f, theta, eps).max_relative_error;
}

}  // namespace evovgm::ad
