// Acceptance gate: one PASS/FAIL line per criterion. Tolerances and budgets
// are pinned below. Pass criterion names as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "retrodiff/cli.hpp"
#include "support/oracles.hpp"

using namespace retrodiff;
namespace fs = std::filesystem;

namespace {

// ---- pinned tolerances and budgets ------------------------------------------
constexpr double kPosteriorTol = 1e-12;
constexpr double kPosteriorSeconds = 10.0;
constexpr double kKernelTol = 1e-3;
constexpr double kAlphaBar0Min = 0.999;
constexpr double kAlphaBarTMax = 1e-12;
constexpr double kCycleTol = 1e-6;
constexpr double kCycleSeconds = 120.0;
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr double kGradFloor = 1e-7;
constexpr double kGradSeconds = 300.0;
constexpr double kEquivTol = 1e-6;
constexpr double kSmokeTop1 = 0.95;
constexpr double kSmokeValidity = 0.99;
constexpr std::size_t kSmokeStepsPerStage = 4000;  // 8000 total
constexpr double kSmokeTrainSeconds = 3600.0;
constexpr std::size_t kSmokeSamples = 100;
constexpr std::size_t kSmokeM = 50;
constexpr std::size_t kAblationT1 = 100, kAblationT2 = 20;
constexpr std::size_t kAblationSamples = 10, kAblationM = 10;
const std::vector<std::size_t> kAblationGrid{250, 500, 750, 1000, 1500, 2000, 3000, 4000};
constexpr std::size_t kDeterminismStepsPerStage = 250;  // 500 total

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string data(const std::string& name) { return std::string(RETRODIFF_DATA_DIR) + "/" + name; }

struct Prepared {
  AtomVocab vocab;
  std::vector<ReactionRecord> records;
  std::vector<SupervisionTarget> targets;
};

Prepared prepare(const std::string& corpus) {
  const auto raw = read_corpus_file(corpus);
  Prepared p{build_vocab(raw), {}, {}};
  for (const auto& r : raw) {
    p.records.push_back(remap_vocab(r, AtomVocab::organic(), p.vocab));
    p.targets.push_back(extract_supervision(p.records.back()));
  }
  return p;
}

// ---- criteria -----------------------------------------------------------------

Outcome paper_scale() {
  const std::string readme = read_file(fs::path(RETRODIFF_SOURCE_DIR) / "README.md");
  const bool documented = readme.find("## Scope and limits") != std::string::npos &&
                          readme.find("USPTO-50k") != std::string::npos &&
                          readme.find("not reproduced") != std::string::npos;
  return {documented, documented ? "USPTO-50k accuracy and validity are not reproduced; limit documented in README "
                                   "(Scope and limits); property criteria substitute"
                                 : "README lacks the Scope and limits section"};
}

Outcome posterior_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t T = 500;
  std::mt19937_64 rng(101);
  std::vector<std::vector<oracle::BayesKernel>> oracles(2);
  std::vector<std::vector<TransitionKernel>> kernels(2);
  for (int p = 0; p < 2; ++p)
    for (std::size_t d = 2; d <= 10; ++d) {
      oracles[p].emplace_back(T, 0.008, d, p == 0);
      kernels[p].emplace_back(NoiseSchedule::cosine(T), d, p == 0 ? Prior::Absorbing : Prior::Uniform);
    }
  double worst = 0.0;
  std::size_t checked = 0, impossible = 0, wrong_errors = 0;
  while (checked < 1000) {
    const int p = static_cast<int>(rng() % 2);
    const std::size_t d = 2 + rng() % 9;
    const std::size_t xt = rng() % d, x0 = rng() % d, t = 1 + rng() % T;
    const auto expect = oracles[p][d - 2].posterior(xt, x0, t);
    if (expect.empty()) {
      try {
        kernels[p][d - 2].posterior(xt, x0, t);
        ++wrong_errors;
      } catch (const NumericError&) {
      }
      ++impossible;
      continue;
    }
    const auto got = kernels[p][d - 2].posterior(xt, x0, t);
    for (std::size_t i = 0; i < d; ++i) worst = std::max(worst, std::abs(got[static_cast<Eigen::Index>(i)] - expect[i]));
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {worst < kPosteriorTol && wrong_errors == 0 && secs < kPosteriorSeconds,
          "1000 cases, dims 2-10, both priors: max abs diff " + fmt("%.3e", worst) + " (tol 1e-12); " +
              std::to_string(impossible) + " impossible pairs rejected; " + fmt("%.2f", secs) + " s (limit 10 s)"};
}

Outcome kernel_convergence() {
  const std::size_t T = 500;
  const auto sched = NoiseSchedule::cosine(T, 0.008);
  double worst = 0.0;
  for (auto p : {Prior::Absorbing, Prior::Uniform})
    for (std::size_t d = 2; d <= 10; ++d) {
      const TransitionKernel k(sched, d, p);
      const Eigen::MatrixXd lim = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(d)) * k.limit().transpose();
      worst = std::max(worst, (k.cumulative(T) - lim).cwiseAbs().maxCoeff());
    }
  const double a0 = sched.alpha_bar(0), aT = sched.alpha_bar(T);
  return {worst < kKernelTol && a0 >= kAlphaBar0Min && aT < kAlphaBarTMax,
          "max|Qbar_T - 1v^T| " + fmt("%.3e", worst) + " (tol 1e-3); alpha_bar_0 " + fmt("%.6f", a0) +
              " (>= 0.999); alpha_bar_T " + fmt("%.3e", aT) + " (< 1e-12)"};
}

std::vector<std::vector<int>> dense(const MolGraph& g) {
  std::vector<std::vector<int>> a(g.size(), std::vector<int>(g.size(), 0));
  for (const auto& e : g.edges()) a[e.u][e.v] = a[e.v][e.u] = 1;
  return a;
}

MolGraph from_mask(std::size_t n, std::uint32_t mask) {
  MolGraph g(n);
  std::size_t bit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    g.set_atom(i, 1);
    for (std::size_t j = i + 1; j < n; ++j, ++bit)
      if (mask >> bit & 1u) g.set_bond(i, j, 1);
  }
  return g;
}

Outcome cycle_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::size_t graphs = 0;
  auto check = [&](const MolGraph& g) {
    const auto c = cycle_counts(adjacency(g).A);
    const auto census = oracle::enumerate_cycles(dense(g), 6);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto k = static_cast<Eigen::Index>(i);
      worst = std::max({worst, std::abs(c.X3[k] - census.per_node[3][i]), std::abs(c.X4[k] - census.per_node[4][i]),
                        std::abs(c.X5[k] - census.per_node[5][i])});
    }
    worst = std::max({worst, std::abs(c.y3 - census.per_graph[3]), std::abs(c.y4 - census.per_graph[4]),
                      std::abs(c.y5 - census.per_graph[5]), std::abs(c.y6 - census.per_graph[6])});
    ++graphs;
  };
  for (std::size_t n = 1; n <= 6; ++n) {
    const auto edges = static_cast<std::uint32_t>(n * (n - 1) / 2);
    for (std::uint32_t mask = 0; mask < (1u << edges); ++mask) {
      const MolGraph g = from_mask(n, mask);
      if (oracle::component_count(dense(g)) == 1) check(g);
    }
  }
  const std::size_t exhaustive = graphs;
  std::mt19937_64 rng(7007);
  std::size_t random7 = 0;
  while (random7 < 200) {
    const MolGraph g = oracle::random_graph(rng, 7, 1, 0.25 + 0.5 * static_cast<double>(random7 % 5) / 4.0);
    if (oracle::component_count(dense(g)) != 1) continue;
    check(g);
    ++random7;
  }
  const double secs = seconds_since(t0);
  return {worst < kCycleTol && exhaustive == 27476 && secs < kCycleSeconds,
          std::to_string(exhaustive) + " connected graphs <= 6 nodes + 200 random connected 7-node graphs: max abs diff " +
              fmt("%.3e", worst) + " (tol 1e-6); " + fmt("%.1f", secs) + " s (limit 120 s)"};
}

struct Noisy {
  MolGraph g, target;
  FreezeMask mask;
};

Noisy random_noisy(std::mt19937_64& rng, std::size_t n, std::size_t classes) {
  Noisy ex{oracle::random_graph(rng, n, 3, 0.35, 3), oracle::random_graph(rng, n, 3, 0.35, 3), FreezeMask::none(n)};
  for (std::size_t i = 0; i < n; ++i) {
    ex.g.set_atom(i, static_cast<Category>(rng() % classes));
    ex.target.set_atom(i, static_cast<Category>(rng() % classes));
    ex.g.set_tag(i, i < n / 2 ? NodeTag::Product : NodeTag::Group);
    if (i < n / 2) ex.mask.node[i] = 1;
  }
  for (std::size_t i = 0; i < n / 2; ++i)
    for (std::size_t j = i + 1; j < n / 2; ++j) ex.mask.freeze_edge(i, j);
  return ex;
}

AtomVocab cno() {
  const std::vector<std::string> e{"C", "N", "O"};
  return AtomVocab::from_elements(e);
}

Outcome gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  const AtomVocab vocab = cno();
  Architecture arch;
  arch.n_layer = 2;
  arch.node_width = arch.edge_width = arch.global_width = 16;
  arch.heads = 2;
  arch.atom_classes = vocab.size();
  Denoiser<double> net(arch, 2024);
  std::mt19937_64 rng(31);
  const auto ex = random_noisy(rng, 6, vocab.size());
  const auto in = encode_input<double>(ex.g, compute_features(ex.g, vocab, 0.4), ex.mask, arch);
  const auto sup = supervision_for(ex.target, ex.mask);
  const double mu = 0.7;
  net.zero_grad();
  net.loss(in, sup, mu);
  double worst = 0.0;
  std::size_t coords = 0;
  std::string where;
  for (auto& p : net.tensors())
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      double& w = p.value.data()[k];
      const double saved = w;
      w = saved + kGradStep;
      const double up = net.loss(in, sup, mu, false).total;
      w = saved - kGradStep;
      const double down = net.loss(in, sup, mu, false).total;
      w = saved;
      const double numeric = (up - down) / (2 * kGradStep), analytic = p.grad.data()[k];
      const double scale = std::max({std::abs(numeric), std::abs(analytic), kGradFloor});
      const double err = std::abs(numeric - analytic) / scale;
      if (err > worst) {
        worst = err;
        where = p.name;
      }
      ++coords;
    }
  const double secs = seconds_since(t0);
  return {worst < kGradRelTol && coords == net.parameter_count() && secs < kGradSeconds,
          "2 layers, width 16, 6 nodes, every parameter (" + std::to_string(coords) + " coordinates): worst relative error " +
              fmt("%.3e", worst) + " in " + where + " (tol 1e-4, floor 1e-7); " + fmt("%.1f", secs) + " s (limit 300 s)"};
}

Outcome equivariance() {
  std::mt19937_64 rng(404);
  double feat = 0.0, den = 0.0;
  std::vector<MolGraph> graphs{parse_molecule("C1=CC=CC=C1").graph, parse_molecule("CC(C)(C)C(=O)OC").graph,
                               parse_molecule("C1CC2CCC1C2.CC").graph};
  for (int i = 0; i < 7; ++i) graphs.push_back(oracle::random_graph(rng, 5 + rng() % 8, 4, 0.3, 3));
  for (const auto& g : graphs) {
    const auto base = compute_features(g, AtomVocab::organic(), 0.3);
    for (int trial = 0; trial < 100; ++trial) {
      const auto perm = oracle::random_permutation(rng, g.size());
      const auto f = compute_features(g.permuted(perm), AtomVocab::organic(), 0.3);
      feat = std::max(feat, (f.graph_extra - base.graph_extra).cwiseAbs().maxCoeff());
      for (std::size_t k = 0; k < g.size(); ++k)
        feat = std::max(feat, (f.node_extra.row(static_cast<Eigen::Index>(k)) -
                               base.node_extra.row(static_cast<Eigen::Index>(perm[k])))
                                  .cwiseAbs()
                                  .maxCoeff());
    }
  }
  const AtomVocab vocab = cno();
  Architecture arch;
  arch.atom_classes = vocab.size();
  Denoiser<double> net(arch, 9);
  const std::size_t n = 10;
  const auto ex = random_noisy(rng, n, vocab.size());
  auto predict = [&](const MolGraph& g, const FreezeMask& m) {
    return net.predict(encode_input<double>(g, compute_features(g, vocab, 0.5), m, arch));
  };
  const auto base = predict(ex.g, ex.mask);
  for (int trial = 0; trial < 100; ++trial) {
    const auto perm = oracle::random_permutation(rng, n);
    FreezeMask m = FreezeMask::none(n);
    for (std::size_t k = 0; k < n; ++k) {
      m.node[k] = ex.mask.node[perm[k]];
      for (std::size_t l = 0; l < n; ++l) m.edge[k * n + l] = ex.mask.edge[perm[k] * n + perm[l]];
    }
    const auto p = predict(ex.g.permuted(perm), m);
    for (std::size_t k = 0; k < n; ++k) {
      den = std::max(den, (p.node_logits.row(static_cast<Eigen::Index>(k)) -
                           base.node_logits.row(static_cast<Eigen::Index>(perm[k])))
                              .cwiseAbs()
                              .maxCoeff());
      for (std::size_t l = 0; l < n; ++l)
        den = std::max(den, (p.edge_logits.row(static_cast<Eigen::Index>(k * n + l)) -
                             base.edge_logits.row(static_cast<Eigen::Index>(perm[k] * n + perm[l])))
                                .cwiseAbs()
                                .maxCoeff());
    }
  }
  return {feat < kEquivTol && den < kEquivTol,
          "features: max deviation " + fmt("%.3e", feat) + " over 10 graphs x 100 permutations; denoiser (default "
          "architecture, 10 nodes, double): " + fmt("%.3e", den) + " over 100 permutations (tol 1e-6)"};
}

Outcome reconstruction() {
  const auto p = prepare(data("corpus200.rxn"));
  std::size_t ok = 0, eligible = 0;
  for (std::size_t i = 0; i < p.records.size(); ++i) {
    if (!p.targets[i].reconstructable) continue;
    ++eligible;
    SampleTrace tr;
    tr.final_graph = ground_truth_graph(p.records[i].product, p.targets[i], p.targets[i].group.size());
    finish_sample(tr, p.records[i].product.size(), p.vocab);
    ok += oracle::isomorphic(tr.reactant, p.records[i].reactants) && tr.valid;
  }
  return {eligible > 0 && ok == eligible, std::to_string(ok) + "/" + std::to_string(eligible) +
                                              " non-flagged records reproduced up to isomorphism (" +
                                              std::to_string(p.records.size() - eligible) + " flagged)"};
}

MolGraph attach_sites(const MolGraph& product, const std::vector<std::size_t>& sites) {
  MolGraph group(sites.size(), NodeTag::Group);
  std::vector<CrossEdge> cross;
  for (std::size_t k = 0; k < sites.size(); ++k) {
    group.set_atom(k, 1);
    cross.push_back({sites[k], product.size() + k, 1});
  }
  return splice(product, group, cross);
}

Outcome post_adapt_oracle() {
  std::size_t configs = 0, mismatches = 0;
  for (std::size_t n = 1; n <= 6; ++n) {
    const auto edges = static_cast<std::uint32_t>(n * (n - 1) / 2);
    for (std::uint32_t mask = 0; mask < (1u << edges); ++mask) {
      const MolGraph p = from_mask(n, mask);
      if (oracle::component_count(dense(p)) != 1) continue;
      for (std::uint32_t s = 0; s < (1u << n); ++s) {
        std::vector<std::size_t> sites;
        for (std::size_t i = 0; i < n; ++i)
          if (s >> i & 1u) sites.push_back(i);
        const auto r = post_adapt(attach_sites(p, sites), n);
        const auto expect = oracle::site_rule(p, std::set<std::size_t>(sites.begin(), sites.end()));
        std::set<std::pair<std::size_t, std::size_t>> got;
        for (const auto& b : r.report.broken) got.insert({std::min(b.u, b.v), std::max(b.u, b.v)});
        mismatches += got != expect.broken || r.report.invalid_sites != expect.invalid;
        ++configs;
      }
    }
  }
  // The invalid configuration: two sites on non-adjacent atoms.
  const MolGraph butane = parse_molecule("CCCC").graph;
  const auto fig = post_adapt(attach_sites(butane, {0, 3}), 4);
  const auto adj = post_adapt(attach_sites(butane, {1, 2}), 4);
  const bool named = fig.report.invalid_sites && fig.report.broken.empty() && !adj.report.invalid_sites &&
                     adj.report.broken.size() == 1;
  return {mismatches == 0 && named, std::to_string(configs) + " (product, site subset) configurations on all connected "
                                    "products <= 6 atoms: " + std::to_string(mismatches) +
                                        " mismatches; non-adjacent pair flagged invalid: " + (named ? "yes" : "no")};
}

Outcome parser_roundtrip() {
  std::ifstream in(data("smiles200.txt"));
  std::string line;
  std::size_t total = 0, ok = 0;
  const auto& v = AtomVocab::organic();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++total;
    try {
      const auto g = parse_molecule(line).graph;
      const std::string canon = write_canonical(g, v);
      const auto back = parse_molecule(canon).graph;
      ok += oracle::isomorphic(g, back) && write_canonical(back, v) == canon;
    } catch (const Error&) {
    }
  }
  return {total == 200 && ok == total,
          std::to_string(ok) + "/" + std::to_string(total) + " strings parse, canonicalize, re-emit and re-parse to "
                                                             "isomorphic graphs"};
}

struct SmokeState {
  bool ran = false;
  RetroModel model;
  Prepared data;
};

SmokeState& smoke_state() {
  static SmokeState s;
  return s;
}

Outcome overfit_smoke() {
  auto& st = smoke_state();
  st.data = prepare(data("toy20.rxn"));
  const auto& d = st.data;
  StageConfig sc;
  sc.n_g = compute_group_budget(std::span<const SupervisionTarget>(d.targets)).n_g;
  st.model = RetroModel::create(d.vocab, sc, Architecture{}, 1);
  const auto set = make_training_set(d.records, d.targets, sc.n_g);
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<std::size_t> steps(2, kSmokeStepsPerStage);
  train_all(st.model, set, steps, TrainOptions{0, 8, 1e-3, 1});
  const double train_secs = seconds_since(t0);
  st.ran = true;
  const auto t1 = std::chrono::steady_clock::now();
  EvalOptions opt;
  opt.samples_per_case = kSmokeSamples;
  opt.M = kSmokeM;
  opt.seed = 1;
  const auto ev = rank_and_evaluate(st.model, d.records, d.targets, opt);
  const double eval_secs = seconds_since(t1);
  std::size_t strict = 0;
  for (const auto& c : ev.cases)
    strict += c.truth_rank == std::optional<std::size_t>(0) &&
              (c.ranked.size() == 1 || c.ranked[0].score.score < c.ranked[1].score.score);
  const auto& m = ev.metrics;
  return {m.accuracy[0] >= kSmokeTop1 && m.validity[0] >= kSmokeValidity && train_secs < kSmokeTrainSeconds,
          "toy20, GROUP_THEN_BOND, default architecture, 2 x 4000 steps, T1=500 T2=50, 100 samples, M=50: top-1 " +
              fmt("%.3f", m.accuracy[0]) + " (>= 0.95), top-1 validity " + fmt("%.3f", m.validity[0]) +
              " (>= 0.99), top-10 " + fmt("%.3f", m.accuracy[3]) + "; ground truth strictly lowest score in " +
              std::to_string(strict) + "/" + std::to_string(ev.cases.size()) + " cases; training " +
              fmt("%.0f", train_secs) + " s (limit 3600 s), evaluation " + fmt("%.0f", eval_secs) + " s"};
}

Outcome checkpoint_roundtrip() {
  auto& st = smoke_state();
  RetroModel model = st.ran ? st.model : RetroModel::create(AtomVocab::organic(), StageConfig{}, Architecture{}, 5);
  const fs::path path = fs::temp_directory_path() / "retrodiff_acceptance.rdck";
  const auto ck = model.to_checkpoint();
  save_checkpoint(ck, path.string());
  const auto loaded_ck = load_checkpoint(path.string());
  const auto loaded = RetroModel::from_checkpoint(loaded_ck);
  fs::remove(path);
  std::size_t tensors = 0, tensor_diff = 0;
  for (const auto& [name, net] : model.nets)
    for (std::size_t k = 0; k < net.tensors().size(); ++k) {
      const auto& a = net.tensors()[k];
      const auto& b = loaded.net(name).tensors()[k];
      for (const auto* pair : {&a.value, &a.m, &a.v}) {
        const auto& other = pair == &a.value ? b.value : pair == &a.m ? b.m : b.v;
        tensor_diff += std::memcmp(pair->data(), other.data(), sizeof(float) * static_cast<std::size_t>(pair->size())) != 0;
        ++tensors;
      }
    }
  std::size_t outputs = 0, output_diff = 0;
  const auto corpus = st.ran ? st.data.records : prepare(data("toy20.rxn")).records;
  for (const auto& r : corpus) {
    const Layout L{r.product.size(), model.stage.n_g};
    MolGraph g = splice(r.product, MolGraph(L.n_g, NodeTag::Group));
    for (const auto& p : stage_plan(model.stage)) {
      const auto mask = stage_mask(L, p.kind);
      const auto a = predict_stage(model.net(p.net), g, mask, model.vocab, p.T / 2, p.T);
      const auto b = predict_stage(loaded.net(p.net), g, mask, loaded.vocab, p.T / 2, p.T);
      output_diff += std::memcmp(a.node_logits.data(), b.node_logits.data(), sizeof(float) * a.node_logits.size()) != 0;
      output_diff += std::memcmp(a.edge_logits.data(), b.edge_logits.data(), sizeof(float) * a.edge_logits.size()) != 0;
      outputs += 2;
    }
  }
  const bool bytes_same = serialize_checkpoint(loaded.to_checkpoint()) == serialize_checkpoint(ck);
  return {tensor_diff == 0 && output_diff == 0 && bytes_same,
          std::string(st.ran ? "trained smoke model" : "fresh model") + ": " + std::to_string(tensors - tensor_diff) +
              "/" + std::to_string(tensors) + " tensors bitwise equal, " + std::to_string(outputs - output_diff) + "/" +
              std::to_string(outputs) + " forward outputs bitwise equal, re-serialized bytes " +
              (bytes_same ? "identical" : "differ")};
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "retrodiff_acceptance_determinism";
  fs::remove_all(root);
  const std::string cfg = (root / "run.cfg").string();
  fs::create_directories(root);
  std::ofstream(cfg) << "corpus = " << data("toy20.rxn") << "\nsteps = " << kDeterminismStepsPerStage
                     << "\nbatch = 8\nlr = 1e-3\nseed = 11\nsamples_per_case = 3\nM = 5\njobs = 2\n";
  std::vector<std::string> failures;
  auto run = [&](const std::string& args, const fs::path& out) {
    fs::create_directories(out);
    const std::string cmd = std::string(RETRODIFF_CLI) + " " + args + " --config " + cfg + " --out " + out.string() +
                            " > " + (out / "stdout.txt").string() + " 2>&1";
    if (std::system(cmd.c_str()) != 0) failures.push_back("command failed: " + args);
  };
  for (const char* run_id : {"a", "b"}) {
    const fs::path out = root / run_id;
    run("train", out);
    run("sample --product 'CCCCOC(C)=O' --num-samples 5 --trace --set checkpoint=" + (out / "model.rdck").string(),
        out / "sample");
    run("eval", out);
  }
  std::size_t compared = 0;
  for (const char* f : {"model.rdck", "train_loss.tsv", "stdout.txt", "eval_report.txt", "eval_cases.jsonl",
                        "sample/stdout.txt", "sample/trace.mgf", "sample/trace.svg"}) {
    const auto a = root / "a" / f, b = root / "b" / f;
    if (!fs::exists(a) || read_file(a) != read_file(b)) failures.push_back(std::string("differs or missing: ") + f);
    ++compared;
  }
  const bool pass = failures.empty();
  std::string detail = "two separate executions of train (2 x 250 steps), sample (--trace) and eval (jobs=2): " +
                       std::to_string(compared - failures.size()) + "/" + std::to_string(compared) +
                       " output files byte-identical";
  for (const auto& f : failures) detail += "; " + f;
  if (pass) fs::remove_all(root);
  return {pass, detail};
}

struct AblationRun {
  std::optional<std::size_t> total_steps;
  std::string curve;
};

AblationRun ablation_run(const Prepared& d, StageOrder order, std::uint64_t seed) {
  StageConfig sc;
  sc.T1 = kAblationT1;
  sc.T2 = kAblationT2;
  sc.order = order;
  sc.n_g = compute_group_budget(std::span<const SupervisionTarget>(d.targets)).n_g;
  RetroModel model = RetroModel::create(d.vocab, sc, Architecture{}, seed);
  const auto set = make_training_set(d.records, d.targets, sc.n_g);
  // Later stages are teacher-forced, so the stage networks train independently
  // and can advance side by side along the budget grid.
  std::vector<StageTrainer> trainers;
  for (std::size_t s = 0; s < stage_plan(sc).size(); ++s) trainers.emplace_back(model, set, s, TrainOptions{0, 8, 1e-3, seed});
  EvalOptions opt;
  opt.samples_per_case = kAblationSamples;
  opt.M = kAblationM;
  opt.seed = 99;
  AblationRun out;
  std::size_t done = 0;
  for (auto budget : kAblationGrid) {
    for (auto& tr : trainers)
      for (std::size_t k = done; k < budget; ++k) tr.step();
    done = budget;
    const double top1 = rank_and_evaluate(model, d.records, d.targets, opt).metrics.accuracy[0];
    out.curve += " " + std::to_string(budget * trainers.size()) + ":" + fmt("%.2f", top1);
    if (top1 >= kSmokeTop1) {
      out.total_steps = budget * trainers.size();
      break;
    }
  }
  return out;
}

Outcome ablation_direction() {
  const auto d = prepare(data("toy20.rxn"));
  const std::size_t censored = 2 * kAblationGrid.back() + 2 * kAblationGrid.front();
  std::string detail = "T1=" + std::to_string(kAblationT1) + " T2=" + std::to_string(kAblationT2) +
                       ", 10 samples, budget grid to 2 x 4000 steps;";
  double mean[2] = {0.0, 0.0};
  const StageOrder orders[2] = {StageOrder::GroupThenBond, StageOrder::BondThenGroup};
  for (int o = 0; o < 2; ++o) {
    detail += " " + to_string(orders[o]) + " steps-to-95%:";
    for (std::uint64_t seed : {1, 2, 3}) {
      const auto r = ablation_run(d, orders[o], seed);
      const std::size_t s = r.total_steps.value_or(censored);
      mean[o] += static_cast<double>(s) / 3.0;
      detail += " " + (r.total_steps ? std::to_string(s) : std::string(">8000")) + " [" + r.curve.substr(1) + "]";
    }
    detail += " mean " + fmt("%.0f", mean[o]) + ";";
  }
  detail += " non-converged runs count as " + std::to_string(censored);
  return {mean[0] <= mean[1], detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"paper_scale_limit", paper_scale},
      {"posterior_oracle", posterior_oracle},
      {"kernel_convergence", kernel_convergence},
      {"cycle_feature_oracle", cycle_oracle},
      {"gradient_check", gradient_check},
      {"equivariance", equivariance},
      {"reconstruction", reconstruction},
      {"post_adaptation_oracle", post_adapt_oracle},
      {"parser_roundtrip", parser_roundtrip},
      {"overfit_smoke", overfit_smoke},
      {"checkpoint_roundtrip", checkpoint_roundtrip},
      {"determinism", determinism},
      {"ablation_direction", ablation_direction},
  };
  std::set<std::string> only(argv + 1, argv + argc);
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && !only.count(name)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    std::printf("%s %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), seconds_since(t0), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%s: %d criteria failed\n", failed ? "ACCEPTANCE FAILED" : "ACCEPTANCE PASSED", failed);
  return failed ? 1 : 0;
}
