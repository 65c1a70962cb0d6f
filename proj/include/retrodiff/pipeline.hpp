#pragma once

// Staged template: group generation, bond generation and rule-based
// post-adaptation, for training and for sampling.
//
// Combined graph layout: product atoms occupy [0, n_x), the n_g generated
// slots occupy [n_x, n_x + n_g). Blocks: group nodes, group-internal edges,
// and the n_x x n_g cross block.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "retrodiff/checkpoint.hpp"
#include "retrodiff/config.hpp"
#include "retrodiff/denoiser.hpp"
#include "retrodiff/graph_features.hpp"
#include "retrodiff/molgraph.hpp"
#include "retrodiff/noise_model.hpp"
#include "retrodiff/random.hpp"
#include "retrodiff/reaction_data.hpp"

namespace retrodiff {

enum class StageKind { Group, Bond, Joint };

inline std::string to_string(StageKind k) {
  switch (k) {
    case StageKind::Group: return "group";
    case StageKind::Bond: return "bond";
    case StageKind::Joint: return "joint";
  }
  return "?";
}

struct StagePlan {
  StageKind kind;
  std::size_t T;
  double mu;
  std::string net;  ///< network name inside RetroModel
};

/// Stages in execution order. Bond generation always trains with mu = 0.
inline std::vector<StagePlan> stage_plan(const StageConfig& c) {
  const StagePlan group{StageKind::Group, c.T1, c.mu, "group"};
  const StagePlan bond{StageKind::Bond, c.T2, 0.0, "bond"};
  switch (c.order) {
    case StageOrder::GroupThenBond: return {group, bond};
    case StageOrder::BondThenGroup: return {bond, group};
    case StageOrder::Joint: return {StagePlan{StageKind::Joint, c.T1, c.mu, "group"}};
  }
  return {};
}

struct Layout {
  std::size_t n_x = 0, n_g = 0;

  std::size_t size() const { return n_x + n_g; }
  bool generated(std::size_t i) const { return i >= n_x; }
  bool cross(std::size_t i, std::size_t j) const { return generated(i) != generated(j); }
  bool group_edge(std::size_t i, std::size_t j) const { return i != j && generated(i) && generated(j); }

  bool owns_node(StageKind k, std::size_t i) const { return k != StageKind::Bond && generated(i); }
  bool owns_edge(StageKind k, std::size_t i, std::size_t j) const {
    if (i == j) return false;
    switch (k) {
      case StageKind::Group: return group_edge(i, j);
      case StageKind::Bond: return cross(i, j);
      case StageKind::Joint: return group_edge(i, j) || cross(i, j);
    }
    return false;
  }
};

/// Everything outside the stage's own block is frozen.
inline FreezeMask stage_mask(const Layout& L, StageKind k) {
  const std::size_t n = L.size();
  FreezeMask m{n, std::vector<char>(n, 1), std::vector<char>(n * n, 1)};
  for (std::size_t i = 0; i < n; ++i) {
    m.node[i] = L.owns_node(k, i) ? 0 : 1;
    for (std::size_t j = 0; j < n; ++j) m.edge[i * n + j] = L.owns_edge(k, i, j) ? 0 : 1;
  }
  return m;
}

/// Sets a stage's block to DUMMY atoms and NONE bonds (its "not yet generated" state).
inline void clear_block(MolGraph& g, const Layout& L, StageKind k) {
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (L.owns_node(k, i)) g.set_atom(i, kDummyAtom);
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (L.owns_edge(k, i, j)) g.set_bond(i, j, 0);
  }
}

/// Product plus the ground-truth group padded to n_g with DUMMY slots, and
/// the external bonds. Product bonds stay intact (post-adaptation breaks them).
inline MolGraph ground_truth_graph(const MolGraph& product, const SupervisionTarget& t, std::size_t n_g) {
  if (t.group.size() > n_g)
    throw ValidationError("group of " + std::to_string(t.group.size()) + " atoms exceeds n_g = " + std::to_string(n_g));
  MolGraph pad(n_g - t.group.size(), NodeTag::Group);
  MolGraph group = t.group;
  for (std::size_t i = 0; i < group.size(); ++i) group.set_tag(i, NodeTag::Group);
  std::vector<CrossEdge> cross;
  for (const auto& e : t.external_bonds) cross.push_back({e.product_node, product.size() + e.group_node, e.order});
  MolGraph p = product;
  for (std::size_t i = 0; i < p.size(); ++i) p.set_tag(i, NodeTag::Product);
  const std::array<MolGraph, 3> parts{p, group, pad};
  return splice(std::span<const MolGraph>(parts), cross);
}

/// The clean graph a stage learns to produce: stages after it are cleared.
inline MolGraph stage_target(const MolGraph& full, const Layout& L, const std::vector<StagePlan>& plan, std::size_t s) {
  MolGraph g = full;
  for (std::size_t later = s + 1; later < plan.size(); ++later) clear_block(g, L, plan[later].kind);
  return g;
}

// ---- post-adaptation ------------------------------------------------------

struct PostAdaptReport {
  std::vector<std::size_t> sites;
  std::vector<ProductBond> broken;
  bool invalid_sites = false;
};

struct PostAdaptResult {
  MolGraph reactant;
  PostAdaptReport report;
};

/// Rule (b1): every product endpoint of an external bond is a reaction site.
/// Rule (b2): every product bond joining two sites is broken. With two or
/// more sites, a site adjacent to no other site is flagged INVALID_SITES.
inline PostAdaptResult post_adapt(const MolGraph& combined, std::size_t n_x) {
  if (n_x > combined.size()) throw ValidationError("product size exceeds graph size");
  PostAdaptResult r{combined, {}};
  std::vector<char> site(n_x, 0);
  for (std::size_t u = 0; u < n_x; ++u)
    for (std::size_t v = n_x; v < combined.size(); ++v)
      if (combined.bond(u, v) != 0) site[u] = 1;
  for (std::size_t u = 0; u < n_x; ++u)
    if (site[u]) r.report.sites.push_back(u);
  std::vector<char> paired(n_x, 0);
  for (std::size_t a = 0; a < r.report.sites.size(); ++a)
    for (std::size_t b = a + 1; b < r.report.sites.size(); ++b) {
      const std::size_t u = r.report.sites[a], v = r.report.sites[b];
      if (combined.bond(u, v) == 0) continue;
      r.report.broken.push_back({u, v});
      r.reactant.set_bond(u, v, 0);
      paired[u] = paired[v] = 1;
    }
  if (r.report.sites.size() >= 2)
    for (auto u : r.report.sites)
      if (!paired[u]) r.report.invalid_sites = true;
  return r;
}

// ---- model ----------------------------------------------------------------

struct RetroModel {
  AtomVocab vocab;
  StageConfig stage;
  Architecture arch;
  std::map<std::string, Denoiser<float>> nets;

  static RetroModel create(const AtomVocab& vocab, const StageConfig& stage, Architecture arch, std::uint64_t seed) {
    stage.validate();
    arch.atom_classes = vocab.size();
    RetroModel m{vocab, stage, arch, {}};
    // Seeds depend on the network's role, not on stage order, so orders are comparable.
    for (const auto& p : stage_plan(stage))
      if (!m.nets.count(p.net)) m.nets.emplace(p.net, Denoiser<float>(arch, split_seed(seed, p.net == "group" ? 1 : 2)));
    return m;
  }

  Denoiser<float>& net(const std::string& name) {
    auto it = nets.find(name);
    if (it == nets.end()) throw ConfigError("model has no '" + name + "' network");
    return it->second;
  }
  const Denoiser<float>& net(const std::string& name) const {
    auto it = nets.find(name);
    if (it == nets.end()) throw ConfigError("model has no '" + name + "' network");
    return it->second;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint c{vocab.symbols(), stage, arch, {}, {}};
    for (const auto& [name, n] : nets) export_network(n, name + "/", c);
    return c;
  }

  static RetroModel from_checkpoint(const Checkpoint& c) {
    if (c.vocab_symbols.empty() || c.vocab_symbols[0] != kDummySymbol)
      throw CheckpointError("checkpoint vocabulary lacks the dummy category");
    const std::vector<std::string> elements(c.vocab_symbols.begin() + 1, c.vocab_symbols.end());
    RetroModel m{AtomVocab::from_elements(elements), c.stage, c.arch, {}};
    if (m.arch.atom_classes != m.vocab.size()) throw CheckpointError("architecture does not match the vocabulary size");
    for (const auto& p : stage_plan(c.stage))
      if (!m.nets.count(p.net)) m.nets.emplace(p.net, import_network(c, p.net + "/"));
    return m;
  }
};

struct StageKernels {
  TransitionKernel kx, ke;
};

inline StageKernels stage_kernels(const StagePlan& p, const StageConfig& c, std::size_t atom_classes) {
  const auto sched = NoiseSchedule::cosine(p.T);
  return {TransitionKernel(sched, atom_classes, c.prior), TransitionKernel(sched, BondVocab::kSize, c.prior)};
}

/// One denoiser evaluation at timestep t of a T-step stage.
inline Prediction<float> predict_stage(const Denoiser<float>& net, const MolGraph& gt, const FreezeMask& mask,
                                       const AtomVocab& vocab, std::size_t t, std::size_t T) {
  const auto f = compute_features(gt, vocab, static_cast<double>(t) / static_cast<double>(T));
  return net.predict(encode_input<float>(gt, f, mask, net.architecture()));
}

// ---- training -------------------------------------------------------------

struct TrainingExample {
  MolGraph product;
  MolGraph full;  ///< ground_truth_graph
  Layout layout;
};

struct TrainingSet {
  std::vector<TrainingExample> examples;
  std::size_t skipped_oversized = 0;
  std::size_t skipped_unreconstructable = 0;
};

/// Builds padded ground-truth graphs; groups larger than n_g are skipped and counted.
inline TrainingSet make_training_set(std::span<const ReactionRecord> records, std::span<const SupervisionTarget> targets,
                                     std::size_t n_g, bool include_unreconstructable = true) {
  TrainingSet s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!targets[i].reconstructable && !include_unreconstructable) {
      ++s.skipped_unreconstructable;
      continue;
    }
    if (targets[i].group.size() > n_g) {
      ++s.skipped_oversized;
      continue;
    }
    s.examples.push_back({records[i].product, ground_truth_graph(records[i].product, targets[i], n_g),
                          Layout{records[i].product.size(), n_g}});
  }
  return s;
}

struct TrainOptions {
  std::size_t steps = 1000;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct LossLogEntry {
  std::string stage;
  std::size_t step = 0;
  double atom_ce = 0.0, bond_ce = 0.0;
};

/// Resumable training of one stage: every call continues the same random
/// stream, so k calls of n steps equal one call of k*n steps.
class StageTrainer {
 public:
  StageTrainer(RetroModel& model, const TrainingSet& data, std::size_t stage_index, TrainOptions opt)
      : model_(model), data_(data), plan_(stage_plan(model.stage)), s_(stage_index), opt_(opt),
        rng_(split_seed(opt.seed, 0x57a9e0 + stage_index)),
        kernels_(stage_kernels(plan_.at(stage_index), model.stage, model.vocab.size())) {
    if (data.examples.empty()) throw DataError("no usable training examples");
    if (opt.batch == 0) throw ConfigError("batch must be at least 1");
  }

  const StagePlan& plan() const { return plan_[s_]; }
  std::size_t steps_done() const { return done_; }

  LossLogEntry step() {
    const StagePlan& p = plan_[s_];
    Denoiser<float>& net = model_.net(p.net);
    net.zero_grad();
    LossLogEntry log{to_string(p.kind), ++done_, 0.0, 0.0};
    const double w = 1.0 / static_cast<double>(opt_.batch);
    for (std::size_t b = 0; b < opt_.batch; ++b) {
      const auto& ex = data_.examples[rng_.below(data_.examples.size())];
      const MolGraph target = stage_target(ex.full, ex.layout, plan_, s_);
      const FreezeMask mask = stage_mask(ex.layout, p.kind);
      const std::size_t t = 1 + rng_.below(p.T);
      const MolGraph noisy = forward_sample(target, t, kernels_.kx, kernels_.ke, rng_, mask);
      const auto f = compute_features(noisy, model_.vocab, static_cast<double>(t) / static_cast<double>(p.T));
      const auto r = net.loss(encode_input<float>(noisy, f, mask, net.architecture()), supervision_for(target, mask),
                              p.mu, true, w);
      log.atom_ce += w * r.atom_ce;
      log.bond_ce += w * r.bond_ce;
    }
    net.adam_step(opt_.lr);
    return log;
  }

 private:
  RetroModel& model_;
  const TrainingSet& data_;
  std::vector<StagePlan> plan_;
  std::size_t s_;
  TrainOptions opt_;
  Rng rng_;
  StageKernels kernels_;
  std::size_t done_ = 0;
};

/// Trains every stage for `steps_per_stage[s]` steps, in plan order.
inline std::vector<LossLogEntry> train_all(RetroModel& model, const TrainingSet& data,
                                           std::span<const std::size_t> steps_per_stage, TrainOptions opt,
                                           const std::function<void(const LossLogEntry&)>& on_step = {}) {
  const auto plan = stage_plan(model.stage);
  if (steps_per_stage.size() != plan.size()) throw ConfigError("one step count per stage is required");
  std::vector<LossLogEntry> log;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    StageTrainer tr(model, data, s, opt);
    for (std::size_t k = 0; k < steps_per_stage[s]; ++k) {
      log.push_back(tr.step());
      if (on_step) on_step(log.back());
    }
  }
  return log;
}

// ---- sampling -------------------------------------------------------------

struct SampleTrace {
  std::vector<MolGraph> steps;           ///< recorded states (initial, then after every reverse step)
  std::vector<std::size_t> boundaries;   ///< index in `steps` where each stage starts
  std::vector<std::string> stage_names;  ///< per recorded step
  std::vector<std::size_t> timesteps;    ///< per recorded step
  MolGraph final_graph;                  ///< combined graph after the last stage
  MolGraph candidate;                    ///< final_graph with edges to DUMMY slots removed
  MolGraph reactant;                     ///< stripped and post-adapted
  std::size_t inconsistencies = 0;
  PostAdaptReport report;
  bool valid = false;
};

namespace detail {

inline void check_frozen(const MolGraph& before, const MolGraph& after, const FreezeMask& m) {
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (m.node_frozen(i) && before.atom(i) != after.atom(i)) throw std::logic_error("frozen atom changed");
    for (std::size_t j = i + 1; j < before.size(); ++j)
      if (m.edge_frozen(i, j) && before.bond(i, j) != after.bond(i, j)) throw std::logic_error("frozen bond changed");
  }
}

/// Draws a stage's block from the prior (DUMMY/NONE under ABSORBING).
inline void draw_prior(MolGraph& g, const Layout& L, StageKind k, const StageKernels& kern, Rng& rng) {
  const auto vx = kern.kx.limit(), ve = kern.ke.limit();
  const std::span<const double> px(vx.data(), static_cast<std::size_t>(vx.size()));
  const std::span<const double> pe(ve.data(), static_cast<std::size_t>(ve.size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    if (L.owns_node(k, i)) g.set_atom(i, static_cast<Category>(rng.categorical(px)));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = i + 1; j < g.size(); ++j)
      if (L.owns_edge(k, i, j)) g.set_bond(i, j, static_cast<Category>(rng.categorical(pe)));
}

}  // namespace detail

/// Turns a final combined graph into the reactant: drop DUMMY slots (and any
/// bond touching them), then post-adapt. Fills candidate/reactant/report/valid.
inline void finish_sample(SampleTrace& tr, std::size_t n_x, const AtomVocab& vocab) {
  tr.candidate = tr.final_graph;
  const auto stripped = strip_dummies(tr.final_graph);
  tr.inconsistencies = stripped.inconsistencies.size();
  for (const auto& e : stripped.inconsistencies) tr.candidate.set_bond(e.u, e.v, 0);
  for (std::size_t k = 0; k < n_x; ++k)
    if (stripped.kept[k] != k) throw std::logic_error("product atom stripped as dummy");
  auto adapted = post_adapt(stripped.graph, n_x);
  tr.reactant = std::move(adapted.reactant);
  tr.report = std::move(adapted.report);
  tr.valid = is_valid(tr.reactant, vocab) && !tr.report.invalid_sites;
}

inline SampleTrace sample(const RetroModel& model, const MolGraph& product, std::uint64_t seed, bool record = false) {
  if (product.empty()) throw ValidationError("empty product");
  for (std::size_t i = 0; i < product.size(); ++i)
    if (product.atom(i) == kDummyAtom || product.atom(i) >= model.vocab.size())
      throw ValidationError("product atom outside the model vocabulary");
  const Layout L{product.size(), model.stage.n_g};
  const auto plan = stage_plan(model.stage);
  MolGraph g = splice(product, MolGraph(L.n_g, NodeTag::Group));
  for (std::size_t i = 0; i < L.n_x; ++i) g.set_tag(i, NodeTag::Product);
  Rng rng(seed);
  SampleTrace tr;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    const auto& p = plan[s];
    const auto kern = stage_kernels(p, model.stage, model.vocab.size());
    const FreezeMask mask = stage_mask(L, p.kind);
    const Denoiser<float>& net = model.net(p.net);
    detail::draw_prior(g, L, p.kind, kern, rng);
    if (record) {
      tr.boundaries.push_back(tr.steps.size());
      if (s == 0) {
        tr.steps.push_back(g);
        tr.stage_names.push_back(to_string(p.kind));
        tr.timesteps.push_back(p.T);
      }
    }
    for (std::size_t t = p.T; t >= 1; --t) {
      const auto pred = to_clean_prediction(predict_stage(net, g, mask, model.vocab, t, p.T));
      MolGraph next = reverse_step(g, pred, kern.kx, kern.ke, t, rng, mask);
      detail::check_frozen(g, next, mask);
      g = std::move(next);
      if (record) {
        tr.steps.push_back(g);
        tr.stage_names.push_back(to_string(p.kind));
        tr.timesteps.push_back(t - 1);
      }
    }
  }
  tr.final_graph = g;
  finish_sample(tr, L.n_x, model.vocab);
  return tr;
}

}  // namespace retrodiff
