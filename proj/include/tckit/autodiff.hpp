// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over dense row-major matrices.
//
// A Tape records every operation of one forward pass as a node holding its
// value and a closure that pushes the node's gradient into its parents.
// Nodes are appended in evaluation order, so walking them backwards visits
// each node only after all of its consumers.
#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tckit/error.hpp"
#include "tckit/rng.hpp"

namespace tckit {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Leaf that receives gradients.
  Var parameter(Matrix value) { return push(std::move(value), true, {}); }
  // Leaf that never receives gradients (stop-gradient).
  Var constant(Matrix value) { return push(std::move(value), false, {}); }

  Var push(Matrix value, bool requires_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, std::move(backward)});
    return Var{this, nodes_.size() - 1};
  }

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  bool any_requires_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars) {
      if (requires_grad(v)) return true;
    }
    return false;
  }

  template <class Derived>
  void accumulate(Var v, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[v.id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Gradient of the last backward() root w.r.t. v; zeros when v was unused.
  Matrix grad(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(Var root) {
    if (value(root).size() != 1) throw Error("backward root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[root.id].requires_grad) return;
    nodes_[root.id].grad = Matrix::Ones(1, 1);
    for (std::size_t i = root.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.size() == 0 || !n.backward) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape->value(*this); }

namespace detail {

inline void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch");
  }
}

}  // namespace detail

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Tape& t = *a.tape;
  Matrix out = a.value() + b.value();
  if (!t.any_requires_grad({a, b})) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, b](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }

inline Var scale(Var a, double s) {
  Tape& t = *a.tape;
  Matrix out = a.value() * s;
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

// a [r x c] + row [1 x c] broadcast over rows.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error("add_row: shape mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value().rowwise() + row.value().row(0);
  if (!t.any_requires_grad({a, row})) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, row](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(row)) tp.accumulate(row, g.colwise().sum());
  });
}

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw Error("matmul: inner dimension mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value();
  if (!t.any_requires_grad({a, b})) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * b.value().transpose());
    if (tp.requires_grad(b)) tp.accumulate(b, a.value().transpose() * g);
  });
}

// a * bᵀ
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) throw Error("matmul_nt: inner dimension mismatch");
  Tape& t = *a.tape;
  Matrix out = a.value() * b.value().transpose();
  if (!t.any_requires_grad({a, b})) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, b](Tape& tp, const Matrix& g) {
    if (tp.requires_grad(a)) tp.accumulate(a, g * b.value());
    if (tp.requires_grad(b)) tp.accumulate(b, g.transpose() * a.value());
  });
}

// Exact (erf) GELU.
inline Var gelu(Var a) {
  Tape& t = *a.tape;
  Matrix out = a.value().unaryExpr([](double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); });
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a](Tape& tp, const Matrix& g) {
    const Matrix d = a.value().unaryExpr([](double x) {
      const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
      const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
      return cdf + x * pdf;
    });
    tp.accumulate(a, g.cwiseProduct(d));
  });
}

// Inverted dropout: kept entries are scaled by 1/(1-rate).
inline Var dropout(Var a, double rate, Rng& rng) {
  if (rate <= 0.0) return a;
  Tape& t = *a.tape;
  Matrix keep(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - rate);
  for (Index i = 0; i < keep.size(); ++i) keep.data()[i] = rng.uniform() < rate ? 0.0 : s;
  Matrix out = a.value().cwiseProduct(keep);
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true,
                [a, keep = std::move(keep)](Tape& tp, const Matrix& g) { tp.accumulate(a, g.cwiseProduct(keep)); });
}

// Row-wise softmax restricted to columns whose key_mask entry is nonzero;
// masked columns get probability exactly 0.
inline Var masked_softmax_rows(Var a, std::span<const std::uint8_t> key_mask) {
  if (static_cast<Index>(key_mask.size()) != a.cols()) throw Error("masked_softmax_rows: mask length mismatch");
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix p = Matrix::Zero(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < x.cols(); ++c) {
      if (key_mask[static_cast<std::size_t>(c)]) mx = std::max(mx, x(r, c));
    }
    if (!std::isfinite(mx)) throw Error("masked_softmax_rows: row has no unmasked keys");
    double z = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      if (key_mask[static_cast<std::size_t>(c)]) {
        p(r, c) = std::exp(x(r, c) - mx);
        z += p(r, c);
      }
    }
    p.row(r) /= z;
  }
  if (!t.requires_grad(a)) return t.constant(std::move(p));
  const Var self{&t, t.size()};
  return t.push(std::move(p), true, [a, self](Tape& tp, const Matrix& g) {
    const Matrix& y = self.value();
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    tp.accumulate(a, y.cwiseProduct(g - dot.replicate(1, g.cols())));
  });
}

inline Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols() || beta.rows() != 1 || beta.cols() != x.cols()) {
    throw Error("layer_norm_rows: parameter shape mismatch");
  }
  Tape& t = *x.tape;
  const Matrix& v = x.value();
  const Index n = v.cols();
  Matrix xhat(v.rows(), n);
  Eigen::VectorXd inv_std(v.rows());
  for (Index r = 0; r < v.rows(); ++r) {
    const double mean = v.row(r).mean();
    const double var = (v.row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
  if (!t.any_requires_grad({x, gamma, beta})) return t.constant(std::move(out));
  return t.push(std::move(out), true,
                [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](Tape& tp, const Matrix& g) {
                  if (tp.requires_grad(beta)) tp.accumulate(beta, g.colwise().sum());
                  if (tp.requires_grad(gamma)) tp.accumulate(gamma, g.cwiseProduct(xhat).colwise().sum());
                  if (!tp.requires_grad(x)) return;
                  const Matrix gx_hat = g.array().rowwise() * gamma.value().row(0).array();
                  Matrix gx(g.rows(), n);
                  for (Index r = 0; r < g.rows(); ++r) {
                    const double m1 = gx_hat.row(r).mean();
                    const double m2 = gx_hat.row(r).dot(xhat.row(r)) / static_cast<double>(n);
                    gx.row(r) = (gx_hat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                  }
                  tp.accumulate(x, gx);
                });
}

// Rows of `a` at the given indices, in order (repeats allowed).
template <class I>
Var take_rows(Var a, std::span<const I> rows) {
  Tape& t = *a.tape;
  const Matrix& v = a.value();
  Matrix out(static_cast<Index>(rows.size()), v.cols());
  std::vector<Index> idx(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const auto r = static_cast<Index>(rows[k]);
    if (r < 0 || r >= v.rows()) throw Error("take_rows: row index " + std::to_string(r) + " out of range");
    idx[k] = r;
    out.row(static_cast<Index>(k)) = v.row(r);
  }
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, idx = std::move(idx)](Tape& tp, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) ga.row(idx[k]) += g.row(static_cast<Index>(k));
    tp.accumulate(a, ga);
  });
}

inline Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw Error("slice_rows: out of range");
  Tape& t = *a.tape;
  Matrix out = a.value().middleRows(start, count);
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, start, count](Tape& tp, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleRows(start, count) = g;
    tp.accumulate(a, ga);
  });
}

inline Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error("slice_cols: out of range");
  Tape& t = *a.tape;
  Matrix out = a.value().middleCols(start, count);
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, start, count](Tape& tp, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = g;
    tp.accumulate(a, ga);
  });
}

inline Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_cols: no inputs");
  Tape& t = *parts[0].tape;
  const Index rows = parts[0].rows();
  Index cols = 0;
  bool grad = false;
  for (Var p : parts) {
    if (p.rows() != rows) throw Error("concat_cols: row mismatch");
    cols += p.cols();
    grad = grad || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Index c = 0;
  for (Var p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  if (!grad) return t.constant(std::move(out));
  return t.push(std::move(out), true, [ps = std::vector<Var>(parts.begin(), parts.end())](Tape& tp, const Matrix& g) {
    Index off = 0;
    for (Var p : ps) {
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw Error("concat_rows: no inputs");
  Tape& t = *parts[0].tape;
  const Index cols = parts[0].cols();
  Index rows = 0;
  bool grad = false;
  for (Var p : parts) {
    if (p.cols() != cols) throw Error("concat_rows: column mismatch");
    rows += p.rows();
    grad = grad || t.requires_grad(p);
  }
  Matrix out(rows, cols);
  Index r = 0;
  for (Var p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  if (!grad) return t.constant(std::move(out));
  return t.push(std::move(out), true, [ps = std::vector<Var>(parts.begin(), parts.end())](Tape& tp, const Matrix& g) {
    Index off = 0;
    for (Var p : ps) {
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

// Mean over rows with nonzero mask -> [1 x cols].
inline Var masked_mean_rows(Var a, std::span<const std::uint8_t> mask) {
  if (static_cast<Index>(mask.size()) != a.rows()) throw Error("masked_mean_rows: mask length mismatch");
  Tape& t = *a.tape;
  std::size_t count = 0;
  Matrix out = Matrix::Zero(1, a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    if (mask[static_cast<std::size_t>(r)]) {
      out += a.value().row(r);
      ++count;
    }
  }
  if (count == 0) throw Error("mean pooling over an all-PAD sequence");
  const double inv = 1.0 / static_cast<double>(count);
  out *= inv;
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true, [a, m = std::vector<std::uint8_t>(mask.begin(), mask.end()), inv](Tape& tp, const Matrix& g) {
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    for (Index r = 0; r < a.rows(); ++r) {
      if (m[static_cast<std::size_t>(r)]) ga.row(r) = g.row(0) * inv;
    }
    tp.accumulate(a, ga);
  });
}

// Each row divided by its Euclidean norm. A zero row is an error.
inline Var normalize_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& v = a.value();
  Eigen::VectorXd norms = v.rowwise().norm();
  for (Index r = 0; r < norms.size(); ++r) {
    if (!(norms(r) > 0.0) || !std::isfinite(norms(r))) {
      throw Error("cosine similarity undefined for a zero-norm representation (row " + std::to_string(r) + ")");
    }
  }
  Matrix y = v.array().colwise() / norms.array();
  if (!t.requires_grad(a)) return t.constant(std::move(y));
  const Var self{&t, t.size()};
  return t.push(std::move(y), true, [a, self, norms = std::move(norms)](Tape& tp, const Matrix& g) {
    const Matrix& y = self.value();
    const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
    Matrix ga = (g.array() - y.array().colwise() * dot.array()).matrix();
    ga = ga.array().colwise() / norms.array();
    tp.accumulate(a, ga);
  });
}

// Σ_k log softmax(logits.row(rows[k]))[cols[k]] as a [1 x 1] node. Rows not
// listed are never read.
inline Var sum_log_softmax_at(Var logits, std::span<const Index> rows, std::span<const Index> cols) {
  if (rows.size() != cols.size()) throw Error("sum_log_softmax_at: rows/cols length mismatch");
  Tape& t = *logits.tape;
  const Matrix& x = logits.value();
  double total = 0.0;
  std::vector<Eigen::RowVectorXd> probs;
  probs.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const Index r = rows[k];
    const Index c = cols[k];
    if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols()) throw Error("sum_log_softmax_at: index out of range");
    const double mx = x.row(r).maxCoeff();
    const Eigen::RowVectorXd e = (x.row(r).array() - mx).exp();
    const double z = e.sum();
    total += x(r, c) - mx - std::log(z);
    probs.push_back(e / z);
  }
  Matrix out(1, 1);
  out(0, 0) = total;
  if (!t.requires_grad(logits)) return t.constant(std::move(out));
  return t.push(std::move(out), true,
                [logits, r = std::vector<Index>(rows.begin(), rows.end()), c = std::vector<Index>(cols.begin(), cols.end()),
                 probs = std::move(probs)](Tape& tp, const Matrix& g) {
                  const double s = g(0, 0);
                  Matrix gl = Matrix::Zero(logits.rows(), logits.cols());
                  for (std::size_t k = 0; k < r.size(); ++k) {
                    gl.row(r[k]) -= s * probs[k];
                    gl(r[k], c[k]) += s;
                  }
                  tp.accumulate(logits, gl);
                });
}

inline Var sum_all(Var a) {
  Tape& t = *a.tape;
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  if (!t.requires_grad(a)) return t.constant(std::move(out));
  return t.push(std::move(out), true,
                [a](Tape& tp, const Matrix& g) { tp.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0))); });
}

}  // namespace tckit
