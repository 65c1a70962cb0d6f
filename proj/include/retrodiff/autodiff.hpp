#pragma once

// Minimal tape-based reverse-mode differentiation over 2-D row-major
// matrices. Edge tensors are stored as (n*n) x d with row i*n + j.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "retrodiff/error.hpp"

namespace retrodiff::ad {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
class Tape;

struct Var {
  int id = -1;
};

template <typename T>
class Tape {
 public:
  struct Node {
    Matrix<T> value;
    Matrix<T> grad;
    std::function<void(Tape&, int)> back;
    Matrix<T>* sink = nullptr;  ///< parameter gradient accumulator
  };

  explicit Tape(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  Var constant(Matrix<T> v) { return push(std::move(v), nullptr); }

  /// Leaf whose gradient is added into *grad after backward().
  Var parameter(const Matrix<T>& v, Matrix<T>* grad) {
    Var x = push(v, nullptr);
    if (record_) nodes_[static_cast<std::size_t>(x.id)].sink = grad;
    return x;
  }

  const Matrix<T>& value(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  Matrix<T>& grad(Var v) { return node(v).grad; }

  Var push(Matrix<T> v, std::function<void(Tape&, int)> back) {
    nodes_.push_back(Node{std::move(v), Matrix<T>(), record_ ? std::move(back) : nullptr, nullptr});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  /// Seeds d(out)/d(out) = 1 for a 1x1 output and propagates.
  void backward(Var out) {
    if (!record_) throw Error("NumericError", "backward on a tape that did not record");
    const auto& v = value(out);
    if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward needs a scalar output");
    for (auto& n : nodes_) n.grad.setZero(n.value.rows(), n.value.cols());
    node(out).grad(0, 0) = T(1);
    for (int i = out.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.back) n.back(*this, i);
      if (n.sink) *n.sink += n.grad;
    }
  }

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  bool record_;
  std::vector<Node> nodes_;
};

// ---- elementary ops -------------------------------------------------------

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw ShapeError("matmul inner dimensions differ");
  Matrix<T> out = t.value(a) * t.value(b);
  return t.push(std::move(out), [a, b](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    tp.grad(a).noalias() += g * tp.value(b).transpose();
    tp.grad(b).noalias() += tp.value(a).transpose() * g;
  });
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("add shapes differ");
  Matrix<T> out = t.value(a) + t.value(b);
  return t.push(std::move(out), [a, b](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    tp.grad(a) += g;
    tp.grad(b) += g;
  });
}

/// a (r x d) + row (1 x d) broadcast over rows.
template <typename T>
Var add_row(Tape<T>& t, Var a, Var row) {
  if (t.value(row).rows() != 1 || t.value(row).cols() != t.value(a).cols()) throw ShapeError("add_row shape mismatch");
  Matrix<T> out = t.value(a).rowwise() + t.value(row).row(0);
  return t.push(std::move(out), [a, row](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    tp.grad(a) += g;
    tp.grad(row) += g.colwise().sum();
  });
}

template <typename T>
Var mul(Tape<T>& t, Var a, Var b) {
  if (t.value(a).rows() != t.value(b).rows() || t.value(a).cols() != t.value(b).cols())
    throw ShapeError("mul shapes differ");
  Matrix<T> out = t.value(a).cwiseProduct(t.value(b));
  return t.push(std::move(out), [a, b](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    tp.grad(a) += g.cwiseProduct(tp.value(b));
    tp.grad(b) += g.cwiseProduct(tp.value(a));
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Matrix<T> out = t.value(a) * s;
  return t.push(std::move(out), [a, s](Tape<T>& tp, int self) { tp.grad(a) += tp.node(self).grad * s; });
}

template <typename T>
Var silu(Tape<T>& t, Var a) {
  const auto& x = t.value(a);
  Matrix<T> out = x.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
  return t.push(std::move(out), [a](Tape<T>& tp, int self) {
    const auto& x = tp.value(a);
    const auto& g = tp.node(self).grad;
    tp.grad(a) += g.binaryExpr(x, [](T gv, T v) {
      const T s = T(1) / (T(1) + std::exp(-v));
      return gv * (s + v * s * (T(1) - s));
    });
  });
}

/// Row-wise layer normalization with learned gain and bias (1 x d each).
template <typename T>
Var layer_norm(Tape<T>& t, Var a, Var gain, Var bias, T eps = T(1e-5)) {
  const auto& x = t.value(a);
  const Eigen::Index r = x.rows(), d = x.cols();
  Matrix<T> xhat(r, d);
  std::vector<T> inv(static_cast<std::size_t>(r));
  for (Eigen::Index i = 0; i < r; ++i) {
    const T mean = x.row(i).mean();
    const T var = (x.row(i).array() - mean).square().mean();
    inv[static_cast<std::size_t>(i)] = T(1) / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mean) * inv[static_cast<std::size_t>(i)];
  }
  Matrix<T> out = (xhat.array().rowwise() * t.value(gain).row(0).array()).rowwise() + t.value(bias).row(0).array();
  return t.push(std::move(out), [a, gain, bias, xhat = std::move(xhat), inv = std::move(inv)](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    tp.grad(gain) += g.cwiseProduct(xhat).colwise().sum();
    tp.grad(bias) += g.colwise().sum();
    const auto& gamma = tp.value(gain);
    const Eigen::Index d = g.cols();
    auto& ga = tp.grad(a);
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const auto gh = (g.row(i).array() * gamma.row(0).array()).matrix();
      const T m1 = gh.mean();
      const T m2 = gh.cwiseProduct(xhat.row(i)).sum() / static_cast<T>(d);
      ga.row(i).array() += inv[static_cast<std::size_t>(i)] * (gh.array() - m1 - xhat.row(i).array() * m2);
    }
  });
}

// ---- graph-shaped ops -----------------------------------------------------

/// Y[i*n+j, c] = Q[i, c] * K[j, c] * s.
template <typename T>
Var outer_scores(Tape<T>& t, Var q, Var k, T s) {
  const auto& Q = t.value(q);
  const auto& K = t.value(k);
  const Eigen::Index n = Q.rows(), d = Q.cols();
  Matrix<T> out(n * n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) = Q.row(i).cwiseProduct(K.row(j)) * s;
  return t.push(std::move(out), [q, k, s, n](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& Q = tp.value(q);
    const auto& K = tp.value(k);
    auto& gq = tp.grad(q);
    auto& gk = tp.grad(k);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        gq.row(i) += g.row(i * n + j).cwiseProduct(K.row(j)) * s;
        gk.row(j) += g.row(i * n + j).cwiseProduct(Q.row(i)) * s;
      }
  });
}

/// Softmax over j of Y[i*n+j, c], independently for every (i, c).
template <typename T>
Var softmax_over_neighbors(Tape<T>& t, Var y, Eigen::Index n) {
  const auto& Y = t.value(y);
  const Eigen::Index d = Y.cols();
  Matrix<T> out(n * n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto block = Y.middleRows(i * n, n);
    const auto mx = block.colwise().maxCoeff();
    auto ob = out.middleRows(i * n, n);
    ob = (block.rowwise() - mx).array().exp().matrix();
    const auto z = ob.colwise().sum().eval();
    ob.array().rowwise() /= z.array();
  }
  return t.push(std::move(out), [y, n](Tape<T>& tp, int self) {
    const auto& A = tp.node(self).value;
    const auto& g = tp.node(self).grad;
    auto& gy = tp.grad(y);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = A.middleRows(i * n, n);
      const auto gb = g.middleRows(i * n, n);
      const auto dot = a.cwiseProduct(gb).colwise().sum().eval();
      gy.middleRows(i * n, n).array() += a.array() * (gb.rowwise() - dot).array();
    }
  });
}

/// out[i, c] = sum_j A[i*n+j, c] * V[j, c].
template <typename T>
Var weighted_sum(Tape<T>& t, Var a, Var v) {
  const auto& A = t.value(a);
  const auto& V = t.value(v);
  const Eigen::Index n = V.rows(), d = V.cols();
  Matrix<T> out = Matrix<T>::Zero(n, d);
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = A.middleRows(i * n, n).cwiseProduct(V).colwise().sum();
  return t.push(std::move(out), [a, v, n](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& A = tp.value(a);
    const auto& V = tp.value(v);
    auto& ga = tp.grad(a);
    auto& gv = tp.grad(v);
    for (Eigen::Index i = 0; i < n; ++i) {
      ga.middleRows(i * n, n).array() += V.array().rowwise() * g.row(i).array();
      gv.array() += A.middleRows(i * n, n).array().rowwise() * g.row(i).array();
    }
  });
}

/// [max, min, mean, std] over rows -> 1 x 4d. Population standard deviation;
/// its gradient is taken as 0 where the deviation is 0.
template <typename T>
Var pna_pool(Tape<T>& t, Var m) {
  const auto& M = t.value(m);
  const Eigen::Index r = M.rows(), d = M.cols();
  if (r == 0) throw ShapeError("pooling over zero rows");
  Matrix<T> out(1, 4 * d);
  std::vector<Eigen::Index> amax(static_cast<std::size_t>(d)), amin(static_cast<std::size_t>(d));
  Matrix<T> mean = M.colwise().mean();
  Matrix<T> sd(1, d);
  for (Eigen::Index c = 0; c < d; ++c) {
    Eigen::Index imax = 0, imin = 0;
    out(0, c) = M.col(c).maxCoeff(&imax);
    out(0, d + c) = M.col(c).minCoeff(&imin);
    amax[static_cast<std::size_t>(c)] = imax;
    amin[static_cast<std::size_t>(c)] = imin;
    out(0, 2 * d + c) = mean(0, c);
    sd(0, c) = std::sqrt((M.col(c).array() - mean(0, c)).square().mean());
    out(0, 3 * d + c) = sd(0, c);
  }
  return t.push(std::move(out), [m, amax = std::move(amax), amin = std::move(amin), mean = std::move(mean),
                                 sd = std::move(sd)](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& M = tp.value(m);
    auto& gm = tp.grad(m);
    const Eigen::Index r = M.rows(), d = M.cols();
    for (Eigen::Index c = 0; c < d; ++c) {
      gm(amax[static_cast<std::size_t>(c)], c) += g(0, c);
      gm(amin[static_cast<std::size_t>(c)], c) += g(0, d + c);
      gm.col(c).array() += g(0, 2 * d + c) / static_cast<T>(r);
      if (sd(0, c) > T(0))
        gm.col(c).array() += g(0, 3 * d + c) * (M.col(c).array() - mean(0, c)) / (static_cast<T>(r) * sd(0, c));
    }
  });
}

/// (E[i*n+j] + E[j*n+i]) / 2.
template <typename T>
Var symmetrize(Tape<T>& t, Var e, Eigen::Index n) {
  const auto& E = t.value(e);
  Matrix<T> out(E.rows(), E.cols());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) out.row(i * n + j) = (E.row(i * n + j) + E.row(j * n + i)) * T(0.5);
  return t.push(std::move(out), [e, n](Tape<T>& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& ge = tp.grad(e);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j) {
        ge.row(i * n + j) += g.row(i * n + j) * T(0.5);
        ge.row(j * n + i) += g.row(i * n + j) * T(0.5);
      }
  });
}

/// Mean cross-entropy of the selected rows: -log softmax(logits[r])[target[r]].
/// Returns a 1x1 node; throws when no row is selected.
template <typename T>
Var masked_cross_entropy(Tape<T>& t, Var logits, std::span<const int> target, std::span<const char> selected) {
  const auto& L = t.value(logits);
  const Eigen::Index r = L.rows();
  if (static_cast<Eigen::Index>(target.size()) != r || static_cast<Eigen::Index>(selected.size()) != r)
    throw ShapeError("cross-entropy target size mismatch");
  Matrix<T> prob(r, L.cols());
  T total = 0;
  std::size_t count = 0;
  std::vector<int> tg(target.begin(), target.end());
  std::vector<char> sel(selected.begin(), selected.end());
  for (Eigen::Index i = 0; i < r; ++i) {
    if (!sel[static_cast<std::size_t>(i)]) continue;
    const T mx = L.row(i).maxCoeff();
    const auto ex = (L.row(i).array() - mx).exp();
    const T z = ex.sum();
    prob.row(i) = ex / z;
    const int c = tg[static_cast<std::size_t>(i)];
    if (c < 0 || c >= L.cols()) throw ShapeError("cross-entropy target out of range");
    total += -(L(i, c) - mx - std::log(z));
    ++count;
  }
  if (count == 0) throw ValidationError("loss over zero supervised positions");
  Matrix<T> out(1, 1);
  out(0, 0) = total / static_cast<T>(count);
  return t.push(std::move(out), [logits, prob = std::move(prob), tg = std::move(tg), sel = std::move(sel),
                                 count](Tape<T>& tp, int self) {
    const T g = tp.node(self).grad(0, 0) / static_cast<T>(count);
    auto& gl = tp.grad(logits);
    for (Eigen::Index i = 0; i < gl.rows(); ++i) {
      if (!sel[static_cast<std::size_t>(i)]) continue;
      gl.row(i) += g * prob.row(i);
      gl(i, tg[static_cast<std::size_t>(i)]) -= g;
    }
  });
}

// ---- composite blocks -----------------------------------------------------

/// FiLM(m1, m2) = m1 W1 + (m2 W2) o m2 + m2. A single-row m1 is broadcast
/// over the rows of m2.
template <typename T>
Var film(Tape<T>& t, Var m1, Var m2, Var w1, Var w2) {
  Var shift = matmul(t, m1, w1);
  Var quad = add(t, mul(t, matmul(t, m2, w2), m2), m2);
  if (t.value(shift).rows() == t.value(quad).rows()) return add(t, quad, shift);
  return add_row(t, quad, shift);
}

/// PNA(m) = [max, min, mean, std] W.
template <typename T>
Var pna(Tape<T>& t, Var m, Var w) {
  return matmul(t, pna_pool(t, m), w);
}

}  // namespace retrodiff::ad
