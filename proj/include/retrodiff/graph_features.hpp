#pragma once

// Auxiliary denoiser inputs: Laplacian spectrum, closed-form cycle counts,
// valency and molecular weight.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "retrodiff/error.hpp"
#include "retrodiff/molgraph.hpp"

namespace retrodiff {

struct Adjacency {
  Eigen::MatrixXd A;
  Eigen::VectorXd d;
};

/// Binary adjacency (any bond order counts once) and degrees. Dummy nodes
/// stay in the matrix as whatever their edges say.
inline Adjacency adjacency(const MolGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.size());
  Adjacency a{Eigen::MatrixXd::Zero(n, n), Eigen::VectorXd::Zero(n)};
  for (const auto& e : g.edges()) {
    a.A(static_cast<Eigen::Index>(e.u), static_cast<Eigen::Index>(e.v)) = 1.0;
    a.A(static_cast<Eigen::Index>(e.v), static_cast<Eigen::Index>(e.u)) = 1.0;
  }
  a.d = a.A.rowwise().sum();
  return a;
}

struct Spectrum {
  Eigen::VectorXd values;   ///< ascending
  Eigen::MatrixXd vectors;  ///< column k pairs with values[k]
};

inline constexpr double kZeroEigenvalue = 1e-8;
inline constexpr int kJacobiSweeps = 50;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
inline Spectrum symmetric_eigen(Eigen::MatrixXd a) {
  const Eigen::Index n = a.rows();
  Eigen::MatrixXd v = Eigen::MatrixXd::Identity(n, n);
  auto off_norm = [&] {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n; ++j)
        if (i != j) s += a(i, j) * a(i, j);
    return std::sqrt(s);
  };
  int sweep = 0;
  while (!(off_norm() < 1e-10)) {
    if (sweep++ == kJacobiSweeps) throw NumericError("Jacobi eigendecomposition did not converge");
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) < a(y, y); });
  Spectrum s{Eigen::VectorXd(n), Eigen::MatrixXd(n, n)};
  for (Eigen::Index k = 0; k < n; ++k) {
    s.values[k] = a(order[static_cast<std::size_t>(k)], order[static_cast<std::size_t>(k)]);
    s.vectors.col(k) = v.col(order[static_cast<std::size_t>(k)]);
  }
  return s;
}

/// Spectrum of L = diag(d) - A.
inline Spectrum laplacian_spectrum(const Eigen::MatrixXd& A) {
  Eigen::MatrixXd L = -A;
  L.diagonal() += A.rowwise().sum();
  return symmetric_eigen(std::move(L));
}

struct CycleCounts {
  Eigen::VectorXd X3, X4, X5;
  double y3 = 0, y4 = 0, y5 = 0, y6 = 0;
};

inline CycleCounts cycle_counts(const Eigen::MatrixXd& A) {
  const Eigen::Index n = A.rows();
  CycleCounts c;
  if (n == 0) {
    c.X3 = c.X4 = c.X5 = Eigen::VectorXd(0);
    return c;
  }
  const Eigen::MatrixXd A2 = A * A, A3 = A2 * A, A4 = A3 * A, A5 = A4 * A, A6 = A5 * A;
  const Eigen::VectorXd d = A.rowwise().sum();
  const Eigen::VectorXd a3 = A3.diagonal(), a4 = A4.diagonal(), a5 = A5.diagonal(), a2 = A2.diagonal();
  c.X3 = a3 / 2.0;
  c.X4 = (a4 - d.cwiseProduct(d.array().matrix() - Eigen::VectorXd::Ones(n)) - A * d) / 2.0;
  // Closed 5-walks that are not 5-cycles wrap a triangle once plus one
  // backtrack: 2 a3.d + 2 P d - 3 a3 when v is on the triangle (P = A o A^2
  // counts triangles per edge), A a3 - 2 a3 when it is one step away.
  const Eigen::MatrixXd P = A.cwiseProduct(A2);
  c.X5 = (a5 - 2.0 * a3.cwiseProduct(d) - 2.0 * (P * d) - A * a3 + 5.0 * a3) / 2.0;
  c.y3 = c.X3.sum() / 3.0;
  c.y4 = c.X4.sum() / 4.0;
  c.y5 = c.X5.sum() / 5.0;
  const double t1 = A6.trace();
  const double t2 = a3.squaredNorm();
  const double t3 = A.cwiseProduct(A2.cwiseProduct(A2)).sum();
  const double t4 = a2.dot(a4);
  const double t5 = A4.trace();
  const double t6 = A3.trace();
  const double t7 = a2.array().cube().sum();
  const double t8 = A3.sum();
  const double t9 = a2.squaredNorm();
  const double t10 = A2.trace();
  c.y6 = (t1 - 3 * t2 + 9 * t3 - 6 * t4 + 6 * t5 - 4 * t6 + 4 * t7 + 3 * t8 - 12 * t9 + 4 * t10) / 12.0;
  return c;
}

struct ChemicalFeatures {
  std::vector<double> valency;
  double weight = 0.0;
};

inline ChemicalFeatures chemical_features(const MolGraph& g, const AtomVocab& vocab) {
  ChemicalFeatures f;
  f.valency.resize(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    f.valency[i] = g.bond_order_sum(i);
    if (g.atom(i) != kDummyAtom) f.weight += AtomVocab::standard_mass(vocab.symbol(g.atom(i)));
  }
  return f;
}

inline constexpr std::size_t kNodeExtra = 7;
inline constexpr std::size_t kGraphExtra = 12;
inline constexpr std::size_t kSpectralValues = 5;

/// node_extra columns: X3, X4, X5, largest-component flag, eigen1, eigen2, valency.
/// graph_extra: components, 5 nonzero eigenvalues, y3..y6, weight, t/T.
struct FeaturePack {
  Eigen::MatrixXd node_extra;
  Eigen::VectorXd graph_extra;
};

namespace detail {

/// Diagonal of the projector onto the eigenspace whose eigenvalues lie
/// within `tol` of values[first]. Independent of sign and of the basis
/// chosen inside a degenerate eigenspace. Returns the index after the cluster.
inline std::size_t eigenspace_weight(const Spectrum& s, std::size_t first, Eigen::VectorXd& out, double tol = 1e-6) {
  const auto n = static_cast<std::size_t>(s.values.size());
  out = Eigen::VectorXd::Zero(s.values.size());
  std::size_t k = first;
  for (; k < n && s.values[static_cast<Eigen::Index>(k)] - s.values[static_cast<Eigen::Index>(first)] <= tol; ++k)
    out += s.vectors.col(static_cast<Eigen::Index>(k)).cwiseAbs2();
  return k;
}

}  // namespace detail

inline FeaturePack compute_features(const MolGraph& g, const AtomVocab& vocab, double time_fraction) {
  const auto n = static_cast<Eigen::Index>(g.size());
  FeaturePack f{Eigen::MatrixXd::Zero(n, kNodeExtra), Eigen::VectorXd::Zero(kGraphExtra)};
  f.graph_extra[11] = time_fraction;
  const auto chem = chemical_features(g, vocab);
  f.graph_extra[10] = chem.weight;
  if (n == 0) return f;

  const Adjacency adj = adjacency(g);
  const CycleCounts cyc = cycle_counts(adj.A);
  f.node_extra.col(0) = cyc.X3;
  f.node_extra.col(1) = cyc.X4;
  f.node_extra.col(2) = cyc.X5;
  f.graph_extra[6] = cyc.y3;
  f.graph_extra[7] = cyc.y4;
  f.graph_extra[8] = cyc.y5;
  f.graph_extra[9] = cyc.y6;

  const Spectrum s = laplacian_spectrum(adj.A);
  std::size_t zeros = 0;
  while (zeros < static_cast<std::size_t>(n) && s.values[static_cast<Eigen::Index>(zeros)] < kZeroEigenvalue) ++zeros;
  f.graph_extra[0] = static_cast<double>(zeros);
  for (std::size_t k = 0; k < kSpectralValues && zeros + k < static_cast<std::size_t>(n); ++k)
    f.graph_extra[1 + static_cast<Eigen::Index>(k)] = s.values[static_cast<Eigen::Index>(zeros + k)];

  if (zeros < static_cast<std::size_t>(n)) {
    Eigen::VectorXd w;
    const std::size_t next = detail::eigenspace_weight(s, zeros, w);
    f.node_extra.col(4) = w;
    if (next < static_cast<std::size_t>(n)) {
      detail::eigenspace_weight(s, next, w);
      f.node_extra.col(5) = w;
    }
  }

  // Largest connected component, counted combinatorially.
  const auto comps = g.components();
  std::size_t best = 0;
  for (const auto& c : comps) best = std::max(best, c.size());
  for (const auto& c : comps)
    if (c.size() == best)
      for (auto i : c) f.node_extra(static_cast<Eigen::Index>(i), 3) = 1.0;

  for (Eigen::Index i = 0; i < n; ++i) f.node_extra(i, 6) = chem.valency[static_cast<std::size_t>(i)];
  return f;
}

}  // namespace retrodiff
