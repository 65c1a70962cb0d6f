#pragma once

// Categorical diffusion: cosine schedule, Q_t = a_t I + (1 - a_t) 1 v^T
// kernels, forward noising, the Bayes posterior and the marginalized
// reverse step. Freezing is expressed by a per-position mask.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "retrodiff/error.hpp"
#include "retrodiff/molgraph.hpp"
#include "retrodiff/random.hpp"

namespace retrodiff {

enum class Prior { Absorbing, Uniform };

inline std::string to_string(Prior p) { return p == Prior::Absorbing ? "ABSORBING" : "UNIFORM"; }

inline Prior parse_prior(std::string_view s) {
  if (s == "ABSORBING") return Prior::Absorbing;
  if (s == "UNIFORM") return Prior::Uniform;
  throw ConfigError("unknown prior '" + std::string(s) + "'");
}

inline double cosine_alpha_bar(std::size_t t, std::size_t T, double s) {
  if (T == 0 || t > T) throw ValidationError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  if (!(s > 0.0)) throw ValidationError("cosine offset must be positive");
  const double f = (static_cast<double>(t) / static_cast<double>(T) + s) / (1.0 + s);
  const double c = std::cos(0.5 * std::numbers::pi * f);
  return c * c;
}

/// alpha_bar(t) reports the cosine value itself. The kernels treat step 0 as
/// the clean state (cumulative kernel = I), so alpha(1) = alpha_bar(1) and
/// alpha(t) = alpha_bar(t) / alpha_bar(t-1) afterwards.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule cosine(std::size_t T, double s = 0.008) {
    NoiseSchedule n;
    n.T_ = T;
    n.s_ = s;
    n.alpha_bar_.resize(T + 1);
    for (std::size_t t = 0; t <= T; ++t) n.alpha_bar_[t] = cosine_alpha_bar(t, T, s);
    n.alpha_.assign(T + 1, 1.0);
    for (std::size_t t = 1; t <= T; ++t) {
      const double prev = t == 1 ? 1.0 : n.alpha_bar_[t - 1];
      n.alpha_[t] = std::clamp(n.alpha_bar_[t] / prev, 0.0, 1.0);
    }
    return n;
  }

  std::size_t steps() const { return T_; }
  double offset() const { return s_; }
  double alpha_bar(std::size_t t) const { return alpha_bar_.at(t); }
  /// Cumulative parameter used by the kernel: 1 at t = 0.
  double kernel_alpha_bar(std::size_t t) const { return t == 0 ? 1.0 : alpha_bar_.at(t); }
  double alpha(std::size_t t) const {
    if (t == 0 || t > T_) throw ValidationError("step index " + std::to_string(t) + " outside [1, T]");
    return alpha_[t];
  }

 private:
  std::size_t T_ = 0;
  double s_ = 0.0;
  std::vector<double> alpha_bar_;
  std::vector<double> alpha_;
};

class TransitionKernel {
 public:
  TransitionKernel() = default;
  TransitionKernel(NoiseSchedule schedule, std::size_t dim, Prior prior)
      : schedule_(std::move(schedule)), dim_(dim), prior_(prior) {
    if (dim < 2) throw ValidationError("kernel dimension must be at least 2");
    const auto d = static_cast<Eigen::Index>(dim);
    if (prior == Prior::Absorbing)
      v_ = Eigen::VectorXd::Unit(d, 0);
    else
      v_ = Eigen::VectorXd::Constant(d, 1.0 / static_cast<double>(dim));
  }

  std::size_t dim() const { return dim_; }
  Prior prior() const { return prior_; }
  const Eigen::VectorXd& limit() const { return v_; }
  const NoiseSchedule& schedule() const { return schedule_; }

  /// a I + (1 - a) 1 v^T
  Eigen::MatrixXd mix(double a) const {
    const auto d = static_cast<Eigen::Index>(dim_);
    Eigen::MatrixXd m = (1.0 - a) * Eigen::VectorXd::Ones(d) * v_.transpose();
    m.diagonal().array() += a;
    return m;
  }

  Eigen::MatrixXd step(std::size_t t) const { return mix(schedule_.alpha(t)); }
  Eigen::MatrixXd cumulative(std::size_t t) const { return mix(schedule_.kernel_alpha_bar(t)); }

  double step_prob(std::size_t t, std::size_t from, std::size_t to) const {
    return entry(schedule_.alpha(t), from, to);
  }
  double cumulative_prob(std::size_t t, std::size_t from, std::size_t to) const {
    return entry(schedule_.kernel_alpha_bar(t), from, to);
  }

  /// q(x_{t-1} | x_t, x_0) proportional to Q_t[:, x_t] * Qbar_{t-1}[x_0, :].
  Eigen::VectorXd posterior(std::size_t xt, std::size_t x0, std::size_t t) const {
    Eigen::VectorXd p;
    if (!unnormalized_posterior(xt, x0, t, p))
      throw NumericError("impossible (x_t=" + std::to_string(xt) + ", x_0=" + std::to_string(x0) +
                         ") pair at t=" + std::to_string(t));
    return p;
  }

  /// Sum over x_0 of posterior(x_t, x_0) * pred0[x_0]. Predictions on x_0
  /// values that cannot produce x_t carry no posterior and are dropped
  /// before renormalizing.
  Eigen::VectorXd reverse_mixture(std::size_t xt, std::span<const double> pred0, std::size_t t) const {
    check_distribution(pred0);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
    double mass = 0.0;
    Eigen::VectorXd p;
    for (std::size_t x0 = 0; x0 < dim_; ++x0) {
      if (pred0[x0] <= 0.0 || !unnormalized_posterior(xt, x0, t, p)) continue;
      acc += pred0[x0] * p;
      mass += pred0[x0];
    }
    if (!(mass > 0.0)) throw NumericError("prediction puts all mass on x_0 values incompatible with x_t");
    return acc / mass;
  }

  void check_distribution(std::span<const double> p) const {
    if (p.size() != dim_) throw ShapeError("prediction row has " + std::to_string(p.size()) + " entries, expected " + std::to_string(dim_));
    double s = 0.0;
    for (double x : p) {
      if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("prediction row has a negative or non-finite entry");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-6) throw ValidationError("prediction row sums to " + std::to_string(s));
  }

 private:
  double entry(double a, std::size_t from, std::size_t to) const {
    return (from == to ? a : 0.0) + (1.0 - a) * v_[static_cast<Eigen::Index>(to)];
  }

  bool unnormalized_posterior(std::size_t xt, std::size_t x0, std::size_t t, Eigen::VectorXd& out) const {
    if (xt >= dim_ || x0 >= dim_) throw ShapeError("category outside kernel dimension");
    const double a = schedule_.alpha(t);
    const double ab = schedule_.kernel_alpha_bar(t - 1);
    out.resize(static_cast<Eigen::Index>(dim_));
    double z = 0.0;
    for (std::size_t k = 0; k < dim_; ++k) {
      const double w = entry(a, k, xt) * entry(ab, x0, k);
      out[static_cast<Eigen::Index>(k)] = w;
      z += w;
    }
    if (!(z > 0.0)) return false;
    out /= z;
    return true;
  }

  NoiseSchedule schedule_;
  std::size_t dim_ = 0;
  Prior prior_ = Prior::Absorbing;
  Eigen::VectorXd v_;
};

/// Positions copied unchanged by forward and reverse sampling.
struct FreezeMask {
  std::size_t n = 0;
  std::vector<char> node;
  std::vector<char> edge;  ///< n*n, symmetric

  static FreezeMask none(std::size_t n) { return FreezeMask{n, std::vector<char>(n, 0), std::vector<char>(n * n, 0)}; }
  bool node_frozen(std::size_t i) const { return node[i] != 0; }
  bool edge_frozen(std::size_t i, std::size_t j) const { return edge[i * n + j] != 0; }
  void freeze_edge(std::size_t i, std::size_t j, bool f = true) { edge[i * n + j] = edge[j * n + i] = f; }
};

namespace detail {
inline void check_kernel_fit(const MolGraph& g, const TransitionKernel& kx, const TransitionKernel& ke,
                             const FreezeMask& m) {
  if (m.n != g.size() || m.node.size() != g.size() || m.edge.size() != g.size() * g.size())
    throw ShapeError("freeze mask does not match graph size");
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.atom(i) >= kx.dim()) throw ShapeError("atom category exceeds node kernel dimension");
  for (const auto& e : g.edges())
    if (e.order >= ke.dim()) throw ShapeError("bond category exceeds edge kernel dimension");
  if (kx.schedule().steps() != ke.schedule().steps()) throw ShapeError("node and edge kernels use different horizons");
}
}  // namespace detail

/// Samples G_t ~ q(G_t | G_0): independent draws from rows of Qbar_t, upper
/// triangle mirrored. Nodes first, then edges (i < j) in row-major order.
inline MolGraph forward_sample(const MolGraph& g0, std::size_t t, const TransitionKernel& kx, const TransitionKernel& ke,
                               Rng& rng, const FreezeMask& mask) {
  detail::check_kernel_fit(g0, kx, ke, mask);
  if (t > kx.schedule().steps()) throw ValidationError("timestep beyond horizon");
  MolGraph g = g0;
  const std::size_t n = g0.size();
  std::vector<double> row;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.node_frozen(i)) continue;
    row.resize(kx.dim());
    for (std::size_t k = 0; k < kx.dim(); ++k) row[k] = kx.cumulative_prob(t, g0.atom(i), k);
    g.set_atom(i, static_cast<Category>(rng.categorical(std::span<const double>(row))));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (mask.edge_frozen(i, j)) continue;
      row.resize(ke.dim());
      for (std::size_t k = 0; k < ke.dim(); ++k) row[k] = ke.cumulative_prob(t, g0.bond(i, j), k);
      g.set_bond(i, j, static_cast<Category>(rng.categorical(std::span<const double>(row))));
    }
  return g;
}

inline MolGraph forward_sample(const MolGraph& g0, std::size_t t, const TransitionKernel& kx, const TransitionKernel& ke,
                               std::uint64_t seed) {
  Rng rng(seed);
  return forward_sample(g0, t, kx, ke, rng, FreezeMask::none(g0.size()));
}

/// Network estimate of the clean graph: row-major probability tables.
struct CleanPrediction {
  std::size_t n = 0, a = 0, b = 0;
  std::vector<double> node;  ///< n * a
  std::vector<double> edge;  ///< n * n * b, symmetric in (i, j)

  std::span<const double> node_row(std::size_t i) const { return {node.data() + i * a, a}; }
  std::span<const double> edge_row(std::size_t i, std::size_t j) const { return {edge.data() + (i * n + j) * b, b}; }
};

/// Draws G_{t-1} from the marginalized reverse kernel at free positions.
inline MolGraph reverse_step(const MolGraph& gt, const CleanPrediction& pred, const TransitionKernel& kx,
                             const TransitionKernel& ke, std::size_t t, Rng& rng, const FreezeMask& mask) {
  detail::check_kernel_fit(gt, kx, ke, mask);
  const std::size_t n = gt.size();
  if (pred.n != n || pred.a != kx.dim() || pred.b != ke.dim() || pred.node.size() != n * pred.a ||
      pred.edge.size() != n * n * pred.b)
    throw ShapeError("prediction tables do not match graph and kernels");
  MolGraph g = gt;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask.node_frozen(i)) continue;
    const Eigen::VectorXd p = kx.reverse_mixture(gt.atom(i), pred.node_row(i), t);
    g.set_atom(i, static_cast<Category>(rng.categorical(std::span<const double>(p.data(), kx.dim()))));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (mask.edge_frozen(i, j)) continue;
      const Eigen::VectorXd p = ke.reverse_mixture(gt.bond(i, j), pred.edge_row(i, j), t);
      g.set_bond(i, j, static_cast<Category>(rng.categorical(std::span<const double>(p.data(), ke.dim()))));
    }
  return g;
}

}  // namespace retrodiff
