#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "vitinv/error.hpp"

namespace vitinv {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar>
class Tape;

/// Lightweight handle to a value recorded on a Tape. Rank <= 2: a tensor is a
/// rows x cols matrix; vectors are 1 x n or n x 1, scalars 1 x 1.
template <class Scalar>
class Tensor {
 public:
  Tensor() = default;
  Tensor(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const MatrixX<Scalar>& value() const { return tape_->value(id_); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  std::array<Eigen::Index, 2> shape() const { return {rows(), cols()}; }
  Scalar scalar() const {
    if (rows() != 1 || cols() != 1) throw ContractError("scalar() on non-scalar tensor");
    return value()(0, 0);
  }
  bool requires_grad() const { return tape_->requires_grad(id_); }
  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Operations append nodes in execution order, so the node
/// list is already topologically sorted; backward() replays it once in
/// reverse. Values are immutable once recorded. One tape per job, no sharing.
template <class Scalar>
class Tape {
 public:
  using Matrix = MatrixX<Scalar>;
  using BackwardFn =
      std::function<void(Tape&, const std::vector<int>&, const Matrix&)>;

  Tensor<Scalar> leaf(Matrix value, bool requires_grad = true) {
    return push(std::make_shared<const Matrix>(std::move(value)), {}, nullptr,
                requires_grad);
  }

  Tensor<Scalar> constant(Matrix value) {
    return push(std::make_shared<const Matrix>(std::move(value)), {}, nullptr, false);
  }

  /// Non-owning constant. Caller guarantees `value` outlives the tape and is
  /// not mutated while the tape is alive (model weights during a step).
  Tensor<Scalar> constant_view(const Matrix& value) {
    return push(std::shared_ptr<const Matrix>(std::shared_ptr<void>(), &value), {},
                nullptr, false);
  }

  Tensor<Scalar> scalar_constant(Scalar v) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return constant(std::move(m));
  }

  /// Records a computed node. `backward` receives the output gradient and
  /// accumulates into the inputs via accumulate(). Public so modules can add
  /// custom fused operations.
  Tensor<Scalar> record(Matrix value, std::vector<int> inputs, BackwardFn backward) {
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_[static_cast<size_t>(i)].requires_grad;
    return push(std::make_shared<const Matrix>(std::move(value)), std::move(inputs),
                rg ? std::move(backward) : nullptr, rg);
  }

  const Matrix& value(int id) const { return *nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int id) const {
    return nodes_[static_cast<size_t>(id)].requires_grad;
  }
  size_t size() const { return nodes_.size(); }

  /// Adds `g` into the gradient buffer of node `id` (no-op for constants).
  /// Fan-out therefore accumulates by summation.
  template <class Expr>
  void accumulate(int id, const Expr& g) {
    auto& node = nodes_[static_cast<size_t>(id)];
    if (!node.requires_grad) return;
    auto& buf = grads_[static_cast<size_t>(id)];
    if (buf.size() == 0) buf = Matrix::Zero(node.value->rows(), node.value->cols());
    buf += g;
  }

  /// Reverse pass from a scalar loss. Each node is visited exactly once, in
  /// reverse recording order.
  void backward(const Tensor<Scalar>& loss) {
    if (loss.tape() != this) throw ContractError("backward: tensor not on this tape");
    const Matrix& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1)
      throw ContractError("backward: loss must be scalar");
    grads_.assign(nodes_.size(), Matrix());
    grads_[static_cast<size_t>(loss.id())] = Matrix::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      auto& node = nodes_[static_cast<size_t>(i)];
      auto& g = grads_[static_cast<size_t>(i)];
      if (node.backward && node.requires_grad && g.size() != 0)
        node.backward(*this, node.inputs, g);
    }
    ran_backward_ = true;
  }

  bool has_grad(const Tensor<Scalar>& t) const {
    return ran_backward_ && grads_[static_cast<size_t>(t.id())].size() != 0;
  }

  const Matrix& grad(const Tensor<Scalar>& t) const {
    if (!ran_backward_) throw ContractError("grad: backward() has not run");
    const auto& g = grads_[static_cast<size_t>(t.id())];
    if (g.size() == 0) throw ContractError("grad: no gradient for this node");
    return g;
  }

 private:
  struct Node {
    std::shared_ptr<const Matrix> value;
    std::vector<int> inputs;
    BackwardFn backward;
    bool requires_grad;
  };

  Tensor<Scalar> push(std::shared_ptr<const Matrix> v, std::vector<int> inputs,
                      BackwardFn fn, bool rg) {
    nodes_.push_back(Node{std::move(v), std::move(inputs), std::move(fn), rg});
    return Tensor<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Matrix> grads_;
  bool ran_backward_ = false;
};

namespace detail {
template <class Scalar>
Tape<Scalar>* same_tape(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.tape() != b.tape()) throw ContractError("operands on different tapes");
  return a.tape();
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural operations
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  auto* t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("add: shape mismatch");
  return t->record(a.value() + b.value(), {a.id(), b.id()},
                   [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
                     tp.accumulate(in[0], g);
                     tp.accumulate(in[1], g);
                   });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  auto* t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sub: shape mismatch");
  return t->record(a.value() - b.value(), {a.id(), b.id()},
                   [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
                     tp.accumulate(in[0], g);
                     tp.accumulate(in[1], -g);
                   });
}

template <class S>
Tensor<S> hadamard(const Tensor<S>& a, const Tensor<S>& b) {
  auto* t = detail::same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("hadamard: shape mismatch");
  return t->record(
      a.value().cwiseProduct(b.value()), {a.id(), b.id()},
      [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        tp.accumulate(in[0], g.cwiseProduct(tp.value(in[1])));
        tp.accumulate(in[1], g.cwiseProduct(tp.value(in[0])));
      });
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  return a.tape()->record(
      (a.value() * c).eval(), {a.id()},
      [c](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        tp.accumulate(in[0], g * c);
      });
}

/// a: n x d, bias: 1 x d, broadcast over rows. The only broadcast the model needs.
template <class S>
Tensor<S> add_row_broadcast(const Tensor<S>& a, const Tensor<S>& bias) {
  auto* t = detail::same_tape(a, bias);
  if (bias.rows() != 1 || bias.cols() != a.cols())
    throw ShapeError("add_row_broadcast: bias must be 1 x cols(a)");
  MatrixX<S> out = a.value();
  out.rowwise() += bias.value().row(0);
  return t->record(std::move(out), {a.id(), bias.id()},
                   [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
                     tp.accumulate(in[0], g);
                     tp.accumulate(in[1], g.colwise().sum());
                   });
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  auto* t = detail::same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree (" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  return t->record(
      a.value() * b.value(), {a.id(), b.id()},
      [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        tp.accumulate(in[0], g * tp.value(in[1]).transpose());
        tp.accumulate(in[1], tp.value(in[0]).transpose() * g);
      });
}

template <class S>
Tensor<S> transpose(const Tensor<S>& a) {
  return a.tape()->record(
      a.value().transpose(), {a.id()},
      [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        tp.accumulate(in[0], g.transpose());
      });
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& a, Eigen::Index r0, Eigen::Index n) {
  if (r0 < 0 || n < 0 || r0 + n > a.rows()) throw ShapeError("slice_rows: out of range");
  return a.tape()->record(
      a.value().middleRows(r0, n), {a.id()},
      [r0, n](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        MatrixX<S> full = MatrixX<S>::Zero(tp.value(in[0]).rows(), tp.value(in[0]).cols());
        full.middleRows(r0, n) = g;
        tp.accumulate(in[0], full);
      });
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& a, Eigen::Index c0, Eigen::Index n) {
  if (c0 < 0 || n < 0 || c0 + n > a.cols()) throw ShapeError("slice_cols: out of range");
  return a.tape()->record(
      a.value().middleCols(c0, n), {a.id()},
      [c0, n](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        MatrixX<S> full = MatrixX<S>::Zero(tp.value(in[0]).rows(), tp.value(in[0]).cols());
        full.middleCols(c0, n) = g;
        tp.accumulate(in[0], full);
      });
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty input list");
  auto* t = parts[0].tape();
  Eigen::Index cols = parts[0].cols(), rows = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> heights;
  for (const auto& p : parts) {
    if (p.tape() != t) throw ContractError("concat_rows: operands on different tapes");
    if (p.cols() != cols) throw ShapeError("concat_rows: column mismatch");
    ids.push_back(p.id());
    heights.push_back(p.rows());
    rows += p.rows();
  }
  MatrixX<S> out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t->record(std::move(out), std::move(ids),
                   [heights](Tape<S>& tp, const std::vector<int>& in,
                             const MatrixX<S>& g) {
                     Eigen::Index r = 0;
                     for (size_t i = 0; i < in.size(); ++i) {
                       tp.accumulate(in[i], g.middleRows(r, heights[i]));
                       r += heights[i];
                     }
                   });
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: empty input list");
  auto* t = parts[0].tape();
  Eigen::Index rows = parts[0].rows(), cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    if (p.tape() != t) throw ContractError("concat_cols: operands on different tapes");
    if (p.rows() != rows) throw ShapeError("concat_cols: row mismatch");
    ids.push_back(p.id());
    widths.push_back(p.cols());
    cols += p.cols();
  }
  MatrixX<S> out(rows, cols);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t->record(std::move(out), std::move(ids),
                   [widths](Tape<S>& tp, const std::vector<int>& in,
                            const MatrixX<S>& g) {
                     Eigen::Index c = 0;
                     for (size_t i = 0; i < in.size(); ++i) {
                       tp.accumulate(in[i], g.middleCols(c, widths[i]));
                       c += widths[i];
                     }
                   });
}

/// r x c -> 1 x (r*c) in row-major order: element (i, j) lands at i*c + j.
template <class S>
Tensor<S> flatten_rowmajor(const Tensor<S>& a) {
  const Eigen::Index r = a.rows(), c = a.cols();
  MatrixX<S> out(1, r * c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) out(0, i * c + j) = a.value()(i, j);
  return a.tape()->record(
      std::move(out), {a.id()},
      [r, c](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        MatrixX<S> ga(r, c);
        for (Eigen::Index i = 0; i < r; ++i)
          for (Eigen::Index j = 0; j < c; ++j) ga(i, j) = g(0, i * c + j);
        tp.accumulate(in[0], ga);
      });
}

// ---------------------------------------------------------------------------
// Nonlinearities and reductions
// ---------------------------------------------------------------------------

enum class Axis { Rows, Cols };  // Rows: every row is normalized to sum 1.

template <class S>
Tensor<S> softmax(const Tensor<S>& a, Axis axis = Axis::Rows) {
  const auto& x = a.value();
  MatrixX<S> y(x.rows(), x.cols());
  if (axis == Axis::Rows) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      S m = x.row(i).maxCoeff();  // max-shift for stability
      VectorX<S> e = (x.row(i).array() - m).exp().matrix().transpose();
      y.row(i) = (e / e.sum()).transpose();
    }
  } else {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      S m = x.col(j).maxCoeff();
      VectorX<S> e = (x.col(j).array() - m).exp();
      y.col(j) = e / e.sum();
    }
  }
  return a.tape()->record(
      std::move(y), {a.id()},
      [axis](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        // dx = y .* (g - <g, y>) per normalized slice; recompute y from the
        // recorded output of this node is not available here, so recompute
        // from input (same stabilized path, bit-identical).
        const auto& x = tp.value(in[0]);
        MatrixX<S> dx(x.rows(), x.cols());
        if (axis == Axis::Rows) {
          for (Eigen::Index i = 0; i < x.rows(); ++i) {
            S m = x.row(i).maxCoeff();
            Eigen::Array<S, 1, Eigen::Dynamic> e = (x.row(i).array() - m).exp();
            Eigen::Array<S, 1, Eigen::Dynamic> y = e / e.sum();
            S dot = (g.row(i).array() * y).sum();
            dx.row(i) = (y * (g.row(i).array() - dot)).matrix();
          }
        } else {
          for (Eigen::Index j = 0; j < x.cols(); ++j) {
            S m = x.col(j).maxCoeff();
            Eigen::Array<S, Eigen::Dynamic, 1> e = (x.col(j).array() - m).exp();
            Eigen::Array<S, Eigen::Dynamic, 1> y = e / e.sum();
            S dot = (g.col(j).array() * y).sum();
            dx.col(j) = (y * (g.col(j).array() - dot)).matrix();
          }
        }
        tp.accumulate(in[0], dx);
      });
}

/// Per-row layer normalization over features (columns), then affine.
/// gamma, beta: 1 x d. Variance is the biased (1/d) estimate.
template <class S>
Tensor<S> layernorm_rows(const Tensor<S>& x, const Tensor<S>& gamma,
                         const Tensor<S>& beta, S eps) {
  auto* t = detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  const Eigen::Index d = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != d || beta.rows() != 1 || beta.cols() != d)
    throw ShapeError("layernorm_rows: gamma/beta must be 1 x cols(x)");
  const auto& xv = x.value();
  MatrixX<S> norm(xv.rows(), d);
  VectorX<S> inv_std(xv.rows());
  for (Eigen::Index i = 0; i < xv.rows(); ++i) {
    S mu = xv.row(i).mean();
    S var = (xv.row(i).array() - mu).square().sum() / static_cast<S>(d);
    S inv = S(1) / std::sqrt(var + eps);
    inv_std(i) = inv;
    norm.row(i) = ((xv.row(i).array() - mu) * inv).matrix();
  }
  MatrixX<S> out = norm;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    out.row(i) = out.row(i).cwiseProduct(gamma.value().row(0)) + beta.value().row(0);
  return t->record(
      std::move(out), {x.id(), gamma.id(), beta.id()},
      [norm, inv_std, d](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        const auto& gam = tp.value(in[1]).row(0);
        MatrixX<S> dx(norm.rows(), d);
        for (Eigen::Index i = 0; i < norm.rows(); ++i) {
          Eigen::Array<S, 1, Eigen::Dynamic> gh = g.row(i).array() * gam.array();
          Eigen::Array<S, 1, Eigen::Dynamic> y = norm.row(i).array();
          S m1 = gh.mean();
          S m2 = (gh * y).mean();
          dx.row(i) = ((gh - m1 - y * m2) * inv_std(i)).matrix();
        }
        tp.accumulate(in[0], dx);
        tp.accumulate(in[1], (g.cwiseProduct(norm)).colwise().sum());
        tp.accumulate(in[2], g.colwise().sum());
      });
}

/// GELU with the tanh approximation (fixed, so oracles reproduce).
template <class S>
Tensor<S> gelu(const Tensor<S>& a) {
  const S k = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  const S c3 = static_cast<S>(0.044715);
  const auto& x = a.value();
  MatrixX<S> out =
      (S(0.5) * x.array() *
       (S(1) + ((x.array() + c3 * x.array().cube()) * k).tanh()))
          .matrix();
  return a.tape()->record(
      std::move(out), {a.id()},
      [k, c3](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        const auto& x = tp.value(in[0]).array();
        auto u = (x + c3 * x.cube()) * k;
        auto th = u.tanh();
        auto dgdx = S(0.5) * (S(1) + th) +
                    S(0.5) * x * (S(1) - th.square()) * k * (S(1) + S(3) * c3 * x.square());
        tp.accumulate(in[0], (g.array() * dgdx).matrix());
      });
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& a) {
  MatrixX<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape()->record(
      std::move(out), {a.id()},
      [](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        tp.accumulate(in[0], MatrixX<S>::Constant(tp.value(in[0]).rows(),
                                                  tp.value(in[0]).cols(), g(0, 0)));
      });
}

namespace detail {
template <class S>
S log_sum_exp_row(const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& r) {
  S m = r.maxCoeff();
  return m + std::log((r.array() - m).exp().sum());
}

template <class S>
Eigen::Matrix<S, 1, Eigen::Dynamic> softmax_row(
    const Eigen::Ref<const Eigen::Matrix<S, 1, Eigen::Dynamic>>& r) {
  S m = r.maxCoeff();
  Eigen::Array<S, 1, Eigen::Dynamic> e = (r.array() - m).exp();
  return (e / e.sum()).matrix();
}
}  // namespace detail

/// Cross-entropy of a single 1 x c logit row against integer label y:
/// -log softmax(logits)[y], computed as logsumexp(logits) - logits[y].
template <class S>
Tensor<S> cross_entropy_from_logits(const Tensor<S>& logits, int y) {
  if (logits.rows() != 1) throw ShapeError("cross_entropy_from_logits: expect 1 x c");
  const int c = static_cast<int>(logits.cols());
  if (y < 0 || y >= c)
    throw LabelError("label " + std::to_string(y) + " outside [0, " +
                     std::to_string(c) + ")");
  Eigen::Matrix<S, 1, Eigen::Dynamic> row = logits.value().row(0);
  MatrixX<S> out(1, 1);
  out(0, 0) = detail::log_sum_exp_row<S>(row) - row(y);
  return logits.tape()->record(
      std::move(out), {logits.id()},
      [y](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> row = tp.value(in[0]).row(0);
        Eigen::Matrix<S, 1, Eigen::Dynamic> sm = detail::softmax_row<S>(row);
        sm(y) -= S(1);
        tp.accumulate(in[0], (g(0, 0) * sm).matrix());
      });
}

/// KL(p || softmax(logits)) for a fixed probability row p (teacher targets):
/// sum_i p_i (log p_i - log softmax(logits)_i). Gradient wrt logits is
/// softmax(logits) - p.
template <class S>
Tensor<S> kl_div_from_logits(const Tensor<S>& logits,
                             const Eigen::Matrix<S, 1, Eigen::Dynamic>& p) {
  if (logits.rows() != 1 || logits.cols() != p.cols())
    throw ShapeError("kl_div_from_logits: logits/targets shape mismatch");
  Eigen::Matrix<S, 1, Eigen::Dynamic> row = logits.value().row(0);
  S lse = detail::log_sum_exp_row<S>(row);
  S kl = 0;
  for (Eigen::Index i = 0; i < p.cols(); ++i) {
    if (p(i) > S(0)) kl += p(i) * (std::log(p(i)) - (row(i) - lse));
  }
  MatrixX<S> out(1, 1);
  out(0, 0) = kl;
  Eigen::Matrix<S, 1, Eigen::Dynamic> pc = p;
  return logits.tape()->record(
      std::move(out), {logits.id()},
      [pc](Tape<S>& tp, const std::vector<int>& in, const MatrixX<S>& g) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> row = tp.value(in[0]).row(0);
        Eigen::Matrix<S, 1, Eigen::Dynamic> sm = detail::softmax_row<S>(row);
        tp.accumulate(in[0], (g(0, 0) * (sm - pc)).matrix());
      });
}

}  // namespace vitinv
