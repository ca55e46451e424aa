#pragma once

// Reverse-mode automatic differentiation over dense row-major Eigen matrices.
//
// A Tape records one forward computation. Values are immutable once recorded;
// only the gradient slots change. Tensors of rank 0, 1 and 2 are supported and
// stored as 1x1, 1xn and mxn matrices respectively.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace atlab::ad {

template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct Shape {
  std::vector<Eigen::Index> extents;

  int rank() const { return static_cast<int>(extents.size()); }
  Eigen::Index size() const {
    Eigen::Index n = 1;
    for (auto e : extents) n *= e;
    return n;
  }
  bool operator==(const Shape&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < extents.size(); ++i) os << (i ? "," : "") << extents[i];
    os << ']';
    return os.str();
  }
};

template <class Scalar>
class Tape;

/// Handle to a value recorded on a Tape.
template <class Scalar>
class Tensor {
 public:
  using Mat = Matrix<Scalar>;

  Tensor() = default;
  Tensor(Tape<Scalar>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Mat& value() const { return tape_->value(id_); }
  Mat grad() const { return tape_->grad(id_); }
  int rank() const { return tape_->rank(id_); }
  Shape shape() const { return tape_->shape(id_); }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  /// Value of a rank-0 (or single element) tensor.
  Scalar item() const {
    if (value().size() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return value()(0, 0);
  }

 private:
  Tape<Scalar>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <class Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Pullback = std::function<void(const Mat& adjoint, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a leaf. rank must agree with the matrix layout (rank 0/1 => one row).
  Tensor<Scalar> leaf(Mat value, int rank, bool requires_grad) {
    check_layout(value, rank);
    nodes_.push_back(Node{std::move(value), Mat(), rank, requires_grad, {}});
    return {this, nodes_.size() - 1};
  }
  Tensor<Scalar> variable(Mat value) { return leaf(std::move(value), 2, true); }
  Tensor<Scalar> constant(Mat value) { return leaf(std::move(value), 2, false); }
  Tensor<Scalar> vector(Mat row, bool requires_grad) { return leaf(std::move(row), 1, requires_grad); }
  Tensor<Scalar> scalar(Scalar v, bool requires_grad) {
    Mat m(1, 1);
    m(0, 0) = v;
    return leaf(std::move(m), 0, requires_grad);
  }

  /// Records the result of an operation. The node requires a gradient iff any
  /// input does; the pullback is dropped otherwise.
  Tensor<Scalar> record(Mat value, int rank, std::initializer_list<Tensor<Scalar>> inputs,
                        Pullback pullback) {
    bool needs = false;
    for (const auto& in : inputs) {
      if (in.valid() && &in.tape() != this) throw std::logic_error("tensors from different tapes");
      needs = needs || requires_grad(in.id());
    }
    check_layout(value, rank);
    nodes_.push_back(Node{std::move(value), Mat(), rank, needs, needs ? std::move(pullback) : Pullback{}});
    return {this, nodes_.size() - 1};
  }

  const Mat& value(std::size_t id) const { return nodes_.at(id).value; }
  int rank(std::size_t id) const { return nodes_.at(id).rank; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  Shape shape(std::size_t id) const {
    const auto& n = nodes_.at(id);
    switch (n.rank) {
      case 0: return Shape{{}};
      case 1: return Shape{{n.value.cols()}};
      default: return Shape{{n.value.rows(), n.value.cols()}};
    }
  }

  /// Accumulated gradient; zeros when nothing has flowed into the node.
  Mat grad(std::size_t id) const {
    const auto& n = nodes_.at(id);
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  /// Propagates d(loss)/d(node) to every node requiring a gradient. Repeated
  /// calls accumulate into the gradient slots; use zero_grad() in between.
  void backward(const Tensor<Scalar>& loss) {
    if (&loss.tape() != this) throw std::logic_error("loss belongs to another tape");
    if (value(loss.id()).size() != 1)
      throw ShapeError("backward requires a scalar loss, got shape " + shape(loss.id()).str());
    adjoint_.assign(nodes_.size(), Mat());
    adjoint_[loss.id()] = Mat::Ones(1, 1);
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      auto& node = nodes_[i];
      if (adjoint_[i].size() == 0 || !node.pullback) continue;
      node.pullback(adjoint_[i], *this);
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      auto& node = nodes_[i];
      if (!node.requires_grad || adjoint_[i].size() == 0) continue;
      if (node.grad.size() == 0)
        node.grad = std::move(adjoint_[i]);
      else
        node.grad += adjoint_[i];
    }
    adjoint_.clear();
  }

  void zero_grad() {
    for (auto& n : nodes_) n.grad = Mat();
  }

  /// Adds a contribution to the pending adjoint of an input; called by pullbacks.
  template <class Expr>
  void accumulate(const Tensor<Scalar>& t, const Expr& contribution) {
    if (!requires_grad(t.id())) return;
    auto& a = adjoint_[t.id()];
    if (a.size() == 0)
      a = contribution;
    else
      a += contribution;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    int rank;
    bool requires_grad;
    Pullback pullback;
  };

  static void check_layout(const Mat& v, int rank) {
    if (rank < 0 || rank > 2) throw ShapeError("unsupported rank " + std::to_string(rank));
    if (rank == 0 && v.size() != 1) throw ShapeError("rank-0 tensor must hold one value");
    if (rank == 1 && v.rows() != 1) throw ShapeError("rank-1 tensor must be stored as a row");
  }

  std::vector<Node> nodes_;
  std::vector<Mat> adjoint_;
};

namespace detail {

template <class Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (!(a.shape() == b.shape()))
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <class Scalar>
void require_rank(const Tensor<Scalar>& a, int rank, const char* op) {
  if (a.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     a.shape().str());
}

template <class Scalar>
void require_labels(const Tensor<Scalar>& a, std::span<const int> labels, const char* op) {
  require_rank(a, 2, op);
  if (static_cast<Eigen::Index>(labels.size()) != a.value().rows())
    throw ShapeError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for shape " +
                     a.shape().str());
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= a.value().cols())
      throw std::out_of_range(std::string(op) + ": label " + std::to_string(labels[i]) +
                              " out of range at row " + std::to_string(i));
}

template <class Scalar>
Matrix<Scalar> row_logsumexp(const Matrix<Scalar>& x) {
  Matrix<Scalar> out(1, x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar m = x.row(i).maxCoeff();
    out(0, i) = m + std::log((x.row(i).array() - m).exp().sum());
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "add");
  return a.tape().record(a.value() + b.value(), a.rank(), {a, b}, [a, b](const auto& g, auto& tape) {
    tape.accumulate(a, g);
    tape.accumulate(b, g);
  });
}

template <class Scalar>
Tensor<Scalar> subtract(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "subtract");
  return a.tape().record(a.value() - b.value(), a.rank(), {a, b}, [a, b](const auto& g, auto& tape) {
    tape.accumulate(a, g);
    tape.accumulate(b, -g);
  });
}

template <class Scalar>
Tensor<Scalar> multiply(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_same_shape(a, b, "multiply");
  return a.tape().record(a.value().cwiseProduct(b.value()), a.rank(), {a, b},
                         [a, b](const auto& g, auto& tape) {
                           tape.accumulate(a, g.cwiseProduct(b.value()));
                           tape.accumulate(b, g.cwiseProduct(a.value()));
                         });
}

template <class Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar s) {
  return a.tape().record(a.value() * s, a.rank(), {a},
                         [a, s](const auto& g, auto& tape) { tape.accumulate(a, g * s); });
}

template <class Scalar>
Tensor<Scalar> square(const Tensor<Scalar>& a) {
  return a.tape().record(a.value().array().square().matrix(), a.rank(), {a},
                         [a](const auto& g, auto& tape) {
                           tape.accumulate(a, (Scalar(2) * g.array() * a.value().array()).matrix());
                         });
}

template <class Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& a) {
  return a.tape().record(a.value().cwiseMax(Scalar(0)), a.rank(), {a}, [a](const auto& g, auto& tape) {
    // Subgradient at 0 is 0.
    tape.accumulate(a, (a.value().array() > Scalar(0)).select(g, Scalar(0)).matrix());
  });
}

template <class Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& a) {
  Matrix<Scalar> out = a.value().array().exp().matrix();
  return a.tape().record(out, a.rank(), {a}, [a, out](const auto& g, auto& tape) {
    tape.accumulate(a, g.cwiseProduct(out));
  });
}

template <class Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& a) {
  return a.tape().record(a.value().array().log().matrix(), a.rank(), {a}, [a](const auto& g, auto& tape) {
    tape.accumulate(a, g.cwiseQuotient(a.value()));
  });
}

/// max(a, floor); gradient passes only where a > floor.
template <class Scalar>
Tensor<Scalar> clamp_min(const Tensor<Scalar>& a, Scalar floor) {
  return a.tape().record(a.value().cwiseMax(floor), a.rank(), {a}, [a, floor](const auto& g, auto& tape) {
    tape.accumulate(a, (a.value().array() > floor).select(g, Scalar(0)).matrix());
  });
}

/// Same value, no gradient flow.
template <class Scalar>
Tensor<Scalar> detach(const Tensor<Scalar>& a) {
  return a.tape().leaf(a.value(), a.rank(), false);
}

template <class Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return add(a, b); }
template <class Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) { return subtract(a, b); }
template <class Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& a) { return scale(a, s); }

// ---------------------------------------------------------------------------
// Reductions

template <class Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& a) {
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(out, 0, {a}, [a](const auto& g, auto& tape) {
    tape.accumulate(a, Matrix<Scalar>::Constant(a.value().rows(), a.value().cols(), g(0, 0)));
  });
}

template <class Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& a) {
  const auto n = static_cast<Scalar>(a.value().size());
  if (n == 0) throw ShapeError("mean of empty tensor");
  Matrix<Scalar> out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.tape().record(out, 0, {a}, [a, n](const auto& g, auto& tape) {
    tape.accumulate(a, Matrix<Scalar>::Constant(a.value().rows(), a.value().cols(), g(0, 0) / n));
  });
}

/// Row sums of an [m x n] tensor, giving [m].
template <class Scalar>
Tensor<Scalar> sum_rows(const Tensor<Scalar>& a) {
  detail::require_rank(a, 2, "sum_rows");
  Matrix<Scalar> out = a.value().rowwise().sum().transpose();
  return a.tape().record(out, 1, {a}, [a](const auto& g, auto& tape) {
    tape.accumulate(a, g.transpose().replicate(1, a.value().cols()));
  });
}

/// logsumexp over the last axis: [m x n] -> [m], [n] -> [].
template <class Scalar>
Tensor<Scalar> logsumexp(const Tensor<Scalar>& a) {
  Matrix<Scalar> lse = detail::row_logsumexp<Scalar>(a.value());
  const int out_rank = a.rank() == 2 ? 1 : 0;
  if (a.rank() == 0) throw ShapeError("logsumexp of a rank-0 tensor");
  return a.tape().record(lse, out_rank, {a}, [a, lse](const auto& g, auto& tape) {
    const auto& x = a.value();
    Matrix<Scalar> d(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      d.row(i) = (x.row(i).array() - lse(0, i)).exp() * g(0, i);
    tape.accumulate(a, d);
  });
}

/// out[i] = a[i, index[i]]
template <class Scalar>
Tensor<Scalar> index_select(const Tensor<Scalar>& a, std::span<const int> index) {
  detail::require_labels(a, index, "index_select");
  Matrix<Scalar> out(1, a.value().rows());
  for (Eigen::Index i = 0; i < out.cols(); ++i) out(0, i) = a.value()(i, index[i]);
  std::vector<int> idx(index.begin(), index.end());
  return a.tape().record(out, 1, {a}, [a, idx = std::move(idx)](const auto& g, auto& tape) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d(i, idx[i]) = g(0, i);
    tape.accumulate(a, d);
  });
}

/// Row-wise max over all columns except index[i]; ties go to the lowest column.
template <class Scalar>
Tensor<Scalar> max_excluding(const Tensor<Scalar>& a, std::span<const int> index) {
  detail::require_labels(a, index, "max_excluding");
  if (a.value().cols() < 2) throw ShapeError("max_excluding needs at least two columns");
  const auto& x = a.value();
  Matrix<Scalar> out(1, x.rows());
  std::vector<Eigen::Index> arg(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Scalar best = -std::numeric_limits<Scalar>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j == index[i]) continue;
      if (x(i, j) > best) {
        best = x(i, j);
        arg[i] = j;
      }
    }
    out(0, i) = best;
  }
  return a.tape().record(out, 1, {a}, [a, arg = std::move(arg)](const auto& g, auto& tape) {
    Matrix<Scalar> d = Matrix<Scalar>::Zero(a.value().rows(), a.value().cols());
    for (std::size_t i = 0; i < arg.size(); ++i) d(i, arg[i]) = g(0, i);
    tape.accumulate(a, d);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  if (a.value().cols() != b.value().rows())
    throw ShapeError("matmul: shape mismatch " + a.shape().str() + " x " + b.shape().str());
  Matrix<Scalar> out = a.value() * b.value();
  return a.tape().record(std::move(out), 2, {a, b}, [a, b](const auto& g, auto& tape) {
    if (a.requires_grad()) tape.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) tape.accumulate(b, a.value().transpose() * g);
  });
}

/// x[m x d_in] * W[d_in x d_out] + b[d_out], bias broadcast over rows.
template <class Scalar>
Tensor<Scalar> affine(const Tensor<Scalar>& x, const Tensor<Scalar>& w, const Tensor<Scalar>& b) {
  detail::require_rank(x, 2, "affine");
  detail::require_rank(w, 2, "affine");
  detail::require_rank(b, 1, "affine");
  if (x.value().cols() != w.value().rows() || b.value().cols() != w.value().cols())
    throw ShapeError("affine: shape mismatch x" + x.shape().str() + " W" + w.shape().str() + " b" +
                     b.shape().str());
  Matrix<Scalar> out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return x.tape().record(std::move(out), 2, {x, w, b}, [x, w, b](const auto& g, auto& tape) {
    if (x.requires_grad()) tape.accumulate(x, g * w.value().transpose());
    if (w.requires_grad()) tape.accumulate(w, x.value().transpose() * g);
    if (b.requires_grad()) tape.accumulate(b, g.colwise().sum());
  });
}

// ---------------------------------------------------------------------------
// Probabilities and losses

template <class Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits) {
  detail::require_rank(logits, 2, "log_softmax");
  const auto& x = logits.value();
  Matrix<Scalar> lse = detail::row_logsumexp<Scalar>(x);
  Matrix<Scalar> out = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) out.row(i).array() -= lse(0, i);
  Matrix<Scalar> probs = out.array().exp().matrix();
  return logits.tape().record(std::move(out), 2, {logits}, [logits, probs](const auto& g, auto& tape) {
    Matrix<Scalar> d = g;
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> gsum = g.rowwise().sum();
    for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) -= gsum(i) * probs.row(i);
    tape.accumulate(logits, d);
  });
}

template <class Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& x) {
  Matrix<Scalar> p(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    p.row(i) = (x.row(i).array() - x.row(i).maxCoeff()).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

template <class Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  detail::require_rank(logits, 2, "softmax");
  Matrix<Scalar> p = softmax_rows<Scalar>(logits.value());
  return logits.tape().record(p, 2, {logits}, [logits, p](const auto& g, auto& tape) {
    Matrix<Scalar> d = g.cwiseProduct(p);
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inner = d.rowwise().sum();
    for (Eigen::Index i = 0; i < d.rows(); ++i) d.row(i) -= inner(i) * p.row(i);
    tape.accumulate(logits, d);
  });
}

/// Mean over the batch of -log softmax(logits)[i, labels[i]].
template <class Scalar>
Tensor<Scalar> softmax_cross_entropy(const Tensor<Scalar>& logits, std::span<const int> labels) {
  detail::require_labels(logits, labels, "softmax_cross_entropy");
  if (labels.empty()) throw ShapeError("softmax_cross_entropy: empty batch");
  return mean(logsumexp(logits) - index_select(logits, labels));
}

// ---------------------------------------------------------------------------
// Finite-difference check

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
template <class Scalar, class Fn>
Scalar grad_check(Fn&& f, const Matrix<Scalar>& point, Scalar h, int rank = 2) {
  if (!(h >= Scalar(1e-6) && h <= Scalar(1e-3))) throw std::invalid_argument("grad_check: h outside [1e-6, 1e-3]");
  auto evaluate = [&](const Matrix<Scalar>& at) {
    Tape<Scalar> tape;
    auto x = tape.leaf(at, rank, false);
    Tensor<Scalar> y = f(x);
    if (y.value().size() != 1) throw ShapeError("grad_check: function is not scalar-valued");
    return y.item();
  };
  Tape<Scalar> tape;
  auto x = tape.leaf(point, rank, true);
  Tensor<Scalar> y = f(x);
  tape.backward(y);
  const Matrix<Scalar> analytic = x.grad();

  Scalar worst = 0;
  Matrix<Scalar> probe = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    const Scalar orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const Scalar up = evaluate(probe);
    probe.data()[i] = orig - h;
    const Scalar down = evaluate(probe);
    probe.data()[i] = orig;
    const Scalar numeric = (up - down) / (Scalar(2) * h);
    const Scalar a = analytic.data()[i];
    worst = std::max(worst, std::abs(a - numeric) / std::max(Scalar(1), std::abs(a)));
  }
  return worst;
}

}  // namespace atlab::ad
