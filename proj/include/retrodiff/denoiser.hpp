#pragma once

// Graph-transformer denoiser p(G_0 | G_t, c): encoder MLPs, FiLM/PNA blocks,
// decoder MLPs, masked cross-entropy loss and Adam.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "retrodiff/autodiff.hpp"
#include "retrodiff/error.hpp"
#include "retrodiff/graph_features.hpp"
#include "retrodiff/molgraph.hpp"
#include "retrodiff/noise_model.hpp"
#include "retrodiff/random.hpp"

namespace retrodiff {

struct Architecture {
  std::size_t n_layer = 4;
  std::size_t node_width = 64;
  std::size_t edge_width = 32;
  std::size_t global_width = 32;
  std::size_t heads = 4;
  std::size_t atom_classes = 0;  ///< a + 1, dummy included
  std::size_t bond_classes = BondVocab::kSize;

  std::size_t node_input() const { return atom_classes + 2 + kNodeExtra; }
  static constexpr std::size_t edge_input() { return BondVocab::kSize + 1; }
  static constexpr std::size_t global_input() { return kGraphExtra; }

  void validate() const {
    if (n_layer == 0 || node_width == 0 || edge_width == 0 || global_width == 0 || heads == 0)
      throw ConfigError("architecture sizes must be positive");
    if (node_width % heads != 0) throw ConfigError("node_width must be divisible by heads");
    if (atom_classes < 2) throw ConfigError("atom vocabulary needs at least one real element");
    if (bond_classes != BondVocab::kSize) throw ConfigError("bond vocabulary size must be 4");
  }

  bool operator==(const Architecture&) const = default;
};

template <typename T>
struct ParamTensor {
  std::string name;
  ad::Matrix<T> value, grad, m, v;
};

/// Network inputs in row layout: X n x node_input, E n*n x edge_input, y 1 x 12.
template <typename T>
struct DenoiserInput {
  std::size_t n = 0;
  ad::Matrix<T> X, E, y;
};

/// Raw logits. node_logits n x (a+1); edge_logits (n*n) x 4, exactly symmetric.
template <typename T>
struct Prediction {
  std::size_t n = 0;
  ad::Matrix<T> node_logits, edge_logits;
};

struct LossReport {
  double atom_ce = 0.0, bond_ce = 0.0, total = 0.0;
  std::size_t atom_count = 0, bond_count = 0;
};

namespace detail {

/// Counts grow combinatorially on noisy graphs, so they enter through log1p.
inline double squash_count(double x) { return std::log1p(std::max(0.0, x)); }

}  // namespace detail

/// One-hot categories, membership and free bits, plus scaled structural features.
template <typename T>
DenoiserInput<T> encode_input(const MolGraph& g, const FeaturePack& f, const FreezeMask& mask, const Architecture& arch) {
  const std::size_t n = g.size();
  if (mask.n != n || static_cast<std::size_t>(f.node_extra.rows()) != n) throw ShapeError("input sizes disagree");
  const std::size_t A = arch.atom_classes;
  DenoiserInput<T> in;
  in.n = n;
  in.X = ad::Matrix<T>::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(arch.node_input()));
  in.E = ad::Matrix<T>::Zero(static_cast<Eigen::Index>(n * n), static_cast<Eigen::Index>(Architecture::edge_input()));
  in.y = ad::Matrix<T>::Zero(1, static_cast<Eigen::Index>(Architecture::global_input()));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    if (g.atom(i) >= A) throw ShapeError("atom category outside the vocabulary");
    in.X(r, g.atom(i)) = T(1);
    const auto c = static_cast<Eigen::Index>(A);
    in.X(r, c) = g.tag(i) == NodeTag::Product ? T(1) : T(0);
    in.X(r, c + 1) = mask.node_frozen(i) ? T(0) : T(1);
    for (Eigen::Index k = 0; k < 3; ++k) in.X(r, c + 2 + k) = static_cast<T>(detail::squash_count(f.node_extra(r, k)));
    in.X(r, c + 5) = static_cast<T>(f.node_extra(r, 3));
    in.X(r, c + 6) = static_cast<T>(f.node_extra(r, 4));
    in.X(r, c + 7) = static_cast<T>(f.node_extra(r, 5));
    in.X(r, c + 8) = static_cast<T>(f.node_extra(r, 6) / 4.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto e = static_cast<Eigen::Index>(i * n + j);
      in.E(e, g.bond(i, j)) = T(1);
      in.E(e, 4) = mask.edge_frozen(i, j) ? T(0) : T(1);
    }
  }
  const auto& ge = f.graph_extra;
  in.y(0, 0) = static_cast<T>(detail::squash_count(ge[0]));
  for (Eigen::Index k = 1; k <= 5; ++k) in.y(0, k) = static_cast<T>(ge[k] / 4.0);
  for (Eigen::Index k = 6; k <= 9; ++k) in.y(0, k) = static_cast<T>(detail::squash_count(ge[k]));
  in.y(0, 10) = static_cast<T>(ge[10] / 100.0);
  in.y(0, 11) = static_cast<T>(ge[11]);
  return in;
}

/// Supervised positions: free nodes, and free edges with i < j.
struct Supervision {
  std::vector<int> atom_target, bond_target;
  std::vector<char> atom_selected, bond_selected;
  std::size_t atom_count = 0, bond_count = 0;
};

inline Supervision supervision_for(const MolGraph& target, const FreezeMask& mask) {
  const std::size_t n = target.size();
  if (mask.n != n) throw ShapeError("mask size differs from target");
  Supervision s;
  s.atom_target.resize(n);
  s.atom_selected.resize(n);
  s.bond_target.assign(n * n, 0);
  s.bond_selected.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    s.atom_target[i] = target.atom(i);
    s.atom_selected[i] = !mask.node_frozen(i);
    s.atom_count += s.atom_selected[i] ? 1 : 0;
    for (std::size_t j = i + 1; j < n; ++j) {
      s.bond_target[i * n + j] = target.bond(i, j);
      s.bond_selected[i * n + j] = !mask.edge_frozen(i, j);
      s.bond_count += s.bond_selected[i * n + j] ? 1 : 0;
    }
  }
  return s;
}

/// mu * atom CE + bond CE over the supervised positions. A term with no
/// supervised positions (or the atom term when mu = 0) stays off the tape, so
/// its head receives exactly zero gradient. Returns Var{-1} when nothing is
/// differentiable.
template <typename T>
ad::Var staged_loss(ad::Tape<T>& tape, ad::Var node_logits, ad::Var edge_logits, const Supervision& sup, double mu,
                    LossReport& r) {
  if (sup.atom_count + sup.bond_count == 0) throw ValidationError("loss over zero supervised positions");
  r = LossReport{};
  r.atom_count = sup.atom_count;
  r.bond_count = sup.bond_count;
  ad::Var total{-1};
  if (sup.atom_count > 0) {
    ad::Var a = ad::masked_cross_entropy<T>(tape, node_logits, sup.atom_target, sup.atom_selected);
    r.atom_ce = static_cast<double>(tape.value(a)(0, 0));
    if (mu != 0.0) total = ad::scale(tape, a, static_cast<T>(mu));
  }
  if (sup.bond_count > 0) {
    ad::Var b = ad::masked_cross_entropy<T>(tape, edge_logits, sup.bond_target, sup.bond_selected);
    r.bond_ce = static_cast<double>(tape.value(b)(0, 0));
    total = total.id < 0 ? b : ad::add(tape, total, b);
  }
  r.total = mu * r.atom_ce + r.bond_ce;
  return total;
}

/// Adam with bias correction; `step` is the 1-based update count.
template <typename T>
void adam_update(std::vector<ParamTensor<T>>& params, std::uint64_t step, double lr, double beta1 = 0.9,
                 double beta2 = 0.999, double eps = 1e-8) {
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  const T b1 = static_cast<T>(beta1), b2 = static_cast<T>(beta2);
  const T scaled_lr = static_cast<T>(lr / c1), inv_c2 = static_cast<T>(1.0 / c2), e = static_cast<T>(eps);
  for (auto& p : params) {
    p.m = b1 * p.m + (T(1) - b1) * p.grad;
    p.v = b2 * p.v + (T(1) - b2) * p.grad.cwiseAbs2();
    p.value.array() -= scaled_lr * p.m.array() / ((p.v.array() * inv_c2).sqrt() + e);
  }
}

template <typename T>
class Denoiser {
 public:
  Denoiser() = default;

  Denoiser(const Architecture& arch, std::uint64_t seed) : arch_(arch) {
    arch.validate();
    Rng rng(seed);
    build(&rng);
  }

  /// Same layout with zero-filled tensors (for loading).
  explicit Denoiser(const Architecture& arch) : arch_(arch) {
    arch.validate();
    build(nullptr);
  }

  const Architecture& architecture() const { return arch_; }
  std::vector<ParamTensor<T>>& tensors() { return params_; }
  const std::vector<ParamTensor<T>>& tensors() const { return params_; }
  std::uint64_t adam_step() const { return adam_step_; }
  void set_adam_step(std::uint64_t s) { adam_step_ = s; }

  ParamTensor<T>& tensor(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ShapeError("no parameter named '" + name + "'");
    return params_[it->second];
  }

  std::size_t parameter_count() const {
    std::size_t c = 0;
    for (const auto& p : params_) c += static_cast<std::size_t>(p.value.size());
    return c;
  }

  /// Builds the forward graph on `tape`; returns (node logits, edge logits).
  std::pair<ad::Var, ad::Var> forward(ad::Tape<T>& tape, const DenoiserInput<T>& in) const {
    if (static_cast<std::size_t>(in.X.cols()) != arch_.node_input() ||
        static_cast<std::size_t>(in.E.cols()) != Architecture::edge_input() ||
        static_cast<std::size_t>(in.y.cols()) != Architecture::global_input() ||
        static_cast<std::size_t>(in.X.rows()) != in.n || static_cast<std::size_t>(in.E.rows()) != in.n * in.n)
      throw ShapeError("denoiser input shape does not match the architecture");
    if (in.n == 0) throw ShapeError("denoiser input has no nodes");
    Ctx c{tape, *this};
    const auto n = static_cast<Eigen::Index>(in.n);
    ad::Var X = c.mlp("enc_x", tape.constant(in.X));
    ad::Var E = c.mlp("enc_e", tape.constant(in.E));
    ad::Var y = c.mlp("enc_y", tape.constant(in.y));
    const T score_scale = T(1) / std::sqrt(static_cast<T>(arch_.node_width / arch_.heads));
    for (std::size_t l = 0; l < arch_.n_layer; ++l) {
      const std::string p = "layer" + std::to_string(l) + "/";
      ad::Var Q = c.linear(p + "q", X), K = c.linear(p + "k", X), V = c.linear(p + "v", X);
      ad::Var Y = ad::outer_scores(tape, Q, K, score_scale);
      Y = c.film(p + "film_ey", E, Y);
      ad::Var Enew = c.linear(p + "e_out", c.film(p + "film_ye", y, Y));
      E = c.norm(p + "ln_e1", ad::add(tape, E, Enew));
      ad::Var attn = ad::softmax_over_neighbors(tape, Y, n);
      ad::Var H = ad::weighted_sum(tape, attn, V);
      ad::Var Xnew = c.linear(p + "x_out", c.film(p + "film_yx", y, H));
      X = c.norm(p + "ln_x1", ad::add(tape, X, Xnew));
      ad::Var ynew = ad::add(tape, c.linear(p + "y_self", y),
                             ad::add(tape, ad::pna(tape, X, c.param(p + "pna_x/W")),
                                     ad::pna(tape, E, c.param(p + "pna_e/W"))));
      y = c.norm(p + "ln_y1", ad::add(tape, y, c.mlp(p + "y_mlp", ynew)));
      X = c.norm(p + "ln_x2", ad::add(tape, X, c.mlp(p + "ffn_x", X)));
      E = c.norm(p + "ln_e2", ad::add(tape, E, c.mlp(p + "ffn_e", E)));
      y = c.norm(p + "ln_y2", ad::add(tape, y, c.mlp(p + "ffn_y", y)));
      if (!tape.value(X).allFinite() || !tape.value(E).allFinite() || !tape.value(y).allFinite())
        throw NumericError("non-finite activation in layer " + std::to_string(l));
    }
    ad::Var node_logits = c.mlp("dec_x", X);
    ad::Var edge_logits = ad::symmetrize(tape, c.mlp("dec_e", E), n);
    return {node_logits, edge_logits};
  }

  Prediction<T> predict(const DenoiserInput<T>& in) const {
    ad::Tape<T> tape(false);
    auto [x, e] = forward(tape, in);
    return Prediction<T>{in.n, tape.value(x), tape.value(e)};
  }

  /// Loss of one example; when `accumulate` is set, adds d(weight * total)/d(theta)
  /// into the parameter gradients.
  LossReport loss(const DenoiserInput<T>& in, const Supervision& sup, double mu, bool accumulate = true,
                  double weight = 1.0) {
    if (sup.atom_count + sup.bond_count == 0) throw ValidationError("loss over zero supervised positions");
    ad::Tape<T> tape(accumulate);
    auto [x, e] = forward(tape, in);
    LossReport r;
    ad::Var total = staged_loss(tape, x, e, sup, mu, r);
    if (accumulate && total.id >= 0) {
      if (weight != 1.0) total = ad::scale(tape, total, static_cast<T>(weight));
      tape.backward(total);
      for (const auto& p : params_)
        if (!p.grad.allFinite()) throw NumericError("non-finite gradient in '" + p.name + "'");
    }
    return r;
  }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  void adam_step(double lr) { adam_update(params_, ++adam_step_, lr); }

 private:
  struct Ctx {
    ad::Tape<T>& tape;
    const Denoiser& net;

    ad::Var param(const std::string& name) {
      auto it = net.index_.find(name);
      if (it == net.index_.end()) throw ShapeError("no parameter named '" + name + "'");
      const auto& p = net.params_[it->second];
      // Recording tapes are only built by loss(), which runs on a mutable model.
      return tape.parameter(p.value, tape.recording() ? const_cast<ad::Matrix<T>*>(&p.grad) : nullptr);
    }
    ad::Var linear(const std::string& name, ad::Var x) {
      return ad::add_row(tape, ad::matmul(tape, x, param(name + "/W")), param(name + "/b"));
    }
    ad::Var mlp(const std::string& name, ad::Var x) {
      return linear(name + "/1", ad::silu(tape, linear(name + "/0", x)));
    }
    ad::Var norm(const std::string& name, ad::Var x) { return ad::layer_norm(tape, x, param(name + "/g"), param(name + "/b")); }
    ad::Var film(const std::string& name, ad::Var m1, ad::Var m2) {
      return ad::film(tape, m1, m2, param(name + "/W1"), param(name + "/W2"));
    }
  };

  void add(const std::string& name, std::size_t rows, std::size_t cols, Rng* rng, bool glorot, T fill = T(0)) {
    if (index_.count(name)) throw ShapeError("duplicate parameter name '" + name + "'");
    ParamTensor<T> p;
    p.name = name;
    const auto r = static_cast<Eigen::Index>(rows), c = static_cast<Eigen::Index>(cols);
    p.value = ad::Matrix<T>::Constant(r, c, fill);
    if (glorot && rng) {
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) p.value(i, j) = static_cast<T>((2.0 * rng->uniform() - 1.0) * bound);
    }
    p.grad = p.m = p.v = ad::Matrix<T>::Zero(r, c);
    index_[name] = params_.size();
    params_.push_back(std::move(p));
  }

  void add_linear(const std::string& name, std::size_t in, std::size_t out, Rng* rng) {
    add(name + "/W", in, out, rng, true);
    add(name + "/b", 1, out, rng, false);
  }
  void add_mlp(const std::string& name, std::size_t in, std::size_t hidden, std::size_t out, Rng* rng) {
    add_linear(name + "/0", in, hidden, rng);
    add_linear(name + "/1", hidden, out, rng);
  }
  void add_norm(const std::string& name, std::size_t d) {
    add(name + "/g", 1, d, nullptr, false, T(1));
    add(name + "/b", 1, d, nullptr, false);
  }
  void add_film(const std::string& name, std::size_t cond, std::size_t d, Rng* rng) {
    add(name + "/W1", cond, d, rng, true);
    add(name + "/W2", d, d, rng, true);
  }

  void build(Rng* rng) {
    const std::size_t dx = arch_.node_width, de = arch_.edge_width, dy = arch_.global_width;
    add_mlp("enc_x", arch_.node_input(), dx, dx, rng);
    add_mlp("enc_e", Architecture::edge_input(), de, de, rng);
    add_mlp("enc_y", Architecture::global_input(), dy, dy, rng);
    for (std::size_t l = 0; l < arch_.n_layer; ++l) {
      const std::string p = "layer" + std::to_string(l) + "/";
      add_linear(p + "q", dx, dx, rng);
      add_linear(p + "k", dx, dx, rng);
      add_linear(p + "v", dx, dx, rng);
      add_film(p + "film_ey", de, dx, rng);
      add_film(p + "film_ye", dy, dx, rng);
      add_linear(p + "e_out", dx, de, rng);
      add_norm(p + "ln_e1", de);
      add_film(p + "film_yx", dy, dx, rng);
      add_linear(p + "x_out", dx, dx, rng);
      add_norm(p + "ln_x1", dx);
      add_linear(p + "y_self", dy, dy, rng);
      add(p + "pna_x/W", 4 * dx, dy, rng, true);
      add(p + "pna_e/W", 4 * de, dy, rng, true);
      add_mlp(p + "y_mlp", dy, dy, dy, rng);
      add_norm(p + "ln_y1", dy);
      add_mlp(p + "ffn_x", dx, 2 * dx, dx, rng);
      add_norm(p + "ln_x2", dx);
      add_mlp(p + "ffn_e", de, 2 * de, de, rng);
      add_norm(p + "ln_e2", de);
      add_mlp(p + "ffn_y", dy, 2 * dy, dy, rng);
      add_norm(p + "ln_y2", dy);
    }
    add_mlp("dec_x", dx, dx, arch_.atom_classes, rng);
    add_mlp("dec_e", de, de, arch_.bond_classes, rng);
  }

  Architecture arch_;
  std::vector<ParamTensor<T>> params_;
  std::map<std::string, std::size_t> index_;
  std::uint64_t adam_step_ = 0;
};

/// Softmax of logits into the per-position distributions the reverse kernel consumes.
template <typename T>
CleanPrediction to_clean_prediction(const Prediction<T>& p) {
  CleanPrediction c;
  c.n = p.n;
  c.a = static_cast<std::size_t>(p.node_logits.cols());
  c.b = static_cast<std::size_t>(p.edge_logits.cols());
  c.node.resize(c.n * c.a);
  c.edge.resize(c.n * c.n * c.b);
  auto soft = [](const auto& row, double* out) {
    const double mx = static_cast<double>(row.maxCoeff());
    double z = 0.0;
    for (Eigen::Index k = 0; k < row.size(); ++k) z += out[k] = std::exp(static_cast<double>(row(k)) - mx);
    for (Eigen::Index k = 0; k < row.size(); ++k) out[k] /= z;
  };
  for (std::size_t i = 0; i < c.n; ++i) {
    soft(p.node_logits.row(static_cast<Eigen::Index>(i)), c.node.data() + i * c.a);
    for (std::size_t j = 0; j < c.n; ++j)
      soft(p.edge_logits.row(static_cast<Eigen::Index>(i * c.n + j)), c.edge.data() + (i * c.n + j) * c.b);
  }
  return c;
}

}  // namespace retrodiff
