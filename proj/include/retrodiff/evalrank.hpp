#pragma once

// Variational-bound ranking of sampled candidates and top-k metrics.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "retrodiff/canonical.hpp"
#include "retrodiff/pipeline.hpp"
#include "retrodiff/smiles.hpp"

namespace retrodiff {

struct CandidateScore {
  double score = 0.0;      ///< mu * atom_term + bond_term; lower is better
  double atom_term = 0.0;  ///< mean atom CE of the stage that generates atoms
  double bond_term = 0.0;  ///< sum over stages of the mean bond CE
};

/// M timesteps spread evenly over [1, T], endpoints included.
inline std::vector<std::size_t> score_timesteps(std::size_t T, std::size_t M) {
  if (M == 0) throw ConfigError("M must be at least 1");
  std::vector<std::size_t> ts;
  for (std::size_t m = 0; m < M; ++m) {
    if (M == 1) {
      ts.push_back((T + 1) / 2);
      break;
    }
    const double x = 1.0 + static_cast<double>(m) * static_cast<double>(T - 1) / static_cast<double>(M - 1);
    ts.push_back(static_cast<std::size_t>(std::lround(x)));
  }
  return ts;
}

namespace detail {

/// Mean masked cross-entropies of float logits, accumulated in double.
inline void cross_entropies(const Prediction<float>& p, const Supervision& sup, double& atom, double& bond) {
  auto ce = [](const auto& logits, const std::vector<int>& target, const std::vector<char>& sel) {
    double total = 0.0;
    std::size_t count = 0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      if (!sel[static_cast<std::size_t>(i)]) continue;
      double mx = -INFINITY;
      for (Eigen::Index k = 0; k < logits.cols(); ++k) mx = std::max(mx, static_cast<double>(logits(i, k)));
      double z = 0.0;
      for (Eigen::Index k = 0; k < logits.cols(); ++k) z += std::exp(static_cast<double>(logits(i, k)) - mx);
      total += -(static_cast<double>(logits(i, target[static_cast<std::size_t>(i)])) - mx - std::log(z));
      ++count;
    }
    return count ? total / static_cast<double>(count) : 0.0;
  };
  atom = ce(p.node_logits, sup.atom_target, sup.atom_selected);
  bond = ce(p.edge_logits, sup.bond_target, sup.bond_selected);
}

}  // namespace detail

/// Monte-Carlo estimate of the negative bound for a candidate combined graph
/// (product block followed by n_g generated slots). The seed fixes the noise,
/// so scores of different candidates are comparable.
inline CandidateScore score_candidate(const RetroModel& model, const MolGraph& product, const MolGraph& candidate,
                                      std::size_t M, std::uint64_t seed) {
  const Layout L{product.size(), model.stage.n_g};
  if (candidate.size() != L.size()) throw ValidationError("candidate size does not match product plus n_g");
  for (std::size_t i = 0; i < L.n_x; ++i) {
    bool same = candidate.atom(i) == product.atom(i);
    for (std::size_t j = i + 1; j < L.n_x && same; ++j) same = candidate.bond(i, j) == product.bond(i, j);
    if (!same) throw ValidationError("candidate inconsistent with product");
  }
  MolGraph cand = candidate;
  for (std::size_t i = 0; i < cand.size(); ++i) cand.set_tag(i, L.generated(i) ? NodeTag::Group : NodeTag::Product);
  const auto plan = stage_plan(model.stage);
  CandidateScore sc;
  for (std::size_t s = 0; s < plan.size(); ++s) {
    const auto& p = plan[s];
    const auto kern = stage_kernels(p, model.stage, model.vocab.size());
    const FreezeMask mask = stage_mask(L, p.kind);
    const MolGraph target = stage_target(cand, L, plan, s);
    const Supervision sup = supervision_for(target, mask);
    const auto ts = score_timesteps(p.T, M);
    double atom = 0.0, bond = 0.0;
    for (std::size_t m = 0; m < ts.size(); ++m) {
      Rng rng(split_seed(seed, (s << 32) + m));
      const MolGraph noisy = forward_sample(target, ts[m], kern.kx, kern.ke, rng, mask);
      double a = 0.0, b = 0.0;
      detail::cross_entropies(predict_stage(model.net(p.net), noisy, mask, model.vocab, ts[m], p.T), sup, a, b);
      atom += a;
      bond += b;
    }
    if (sup.atom_count > 0) sc.atom_term += atom / static_cast<double>(ts.size());
    sc.bond_term += bond / static_cast<double>(ts.size());
  }
  sc.score = model.stage.mu * sc.atom_term + sc.bond_term;
  return sc;
}

struct RankedCandidate {
  MolGraph reactant;
  std::string key;  ///< canonical bytes of the reactant
  CandidateScore score;
  std::size_t sample_index = 0;
  bool valid = false;
  std::size_t copies = 1;
};

/// Drops duplicate reactants (keeping the best score, then the lowest sample
/// index) and orders by (score, canonical bytes, sample index).
inline std::vector<RankedCandidate> rank_candidates(std::vector<RankedCandidate> all) {
  auto less = [](const RankedCandidate& a, const RankedCandidate& b) {
    if (a.score.score != b.score.score) return a.score.score < b.score.score;
    if (a.key != b.key) return a.key < b.key;
    return a.sample_index < b.sample_index;
  };
  std::sort(all.begin(), all.end(), less);
  std::vector<RankedCandidate> out;
  std::map<std::string, std::size_t> seen;
  for (auto& c : all) {
    auto it = seen.find(c.key);
    if (it != seen.end()) {
      out[it->second].copies += c.copies;
      continue;
    }
    seen[c.key] = out.size();
    out.push_back(std::move(c));
  }
  return out;
}

struct CaseResult {
  std::size_t case_index = 0;
  std::string product;
  std::optional<int> class_label;
  std::vector<RankedCandidate> ranked;
  std::optional<std::size_t> truth_rank;  ///< 0-based position of the ground truth
  std::size_t samples = 0;
  bool oversized = false;  ///< ground-truth group exceeds n_g
};

struct EvalOptions {
  std::size_t samples_per_case = 100;
  std::size_t M = 50;
  std::vector<std::size_t> ks{1, 3, 5, 10};
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

/// Draws `samples_per_case` samples (seeds split_seed(seed, k)), scores each
/// distinct candidate once and returns them deduplicated and ranked.
inline std::vector<RankedCandidate> sample_and_rank(const RetroModel& model, const MolGraph& product,
                                                    const EvalOptions& opt, std::uint64_t seed) {
  std::vector<RankedCandidate> all;
  std::map<std::string, CandidateScore> cache;
  for (std::size_t k = 0; k < opt.samples_per_case; ++k) {
    const auto tr = sample(model, product, split_seed(seed, k));
    RankedCandidate c;
    c.reactant = tr.reactant;
    c.key = canonical_form(tr.reactant).bytes;
    c.sample_index = k;
    c.valid = tr.valid;
    std::string raw;
    for (auto a : tr.candidate.atoms()) raw += std::to_string(a) + ",";
    for (const auto& e : tr.candidate.edges())
      raw += ";" + std::to_string(e.u) + "-" + std::to_string(e.v) + ":" + std::to_string(e.order);
    auto it = cache.find(raw);
    if (it == cache.end())
      it = cache.emplace(raw, score_candidate(model, product, tr.candidate, opt.M, split_seed(~seed, 0)))
               .first;
    c.score = it->second;
    all.push_back(std::move(c));
  }
  return rank_candidates(std::move(all));
}

/// Samples, post-adapts, scores and ranks candidates for one product.
inline CaseResult evaluate_case(const RetroModel& model, const MolGraph& product, const MolGraph& truth,
                                const EvalOptions& opt, std::uint64_t seed) {
  CaseResult cr;
  cr.product = write_molecule(product, model.vocab);
  cr.samples = opt.samples_per_case;
  cr.ranked = sample_and_rank(model, product, opt, seed);
  const std::string truth_key = canonical_form(truth).bytes;
  for (std::size_t r = 0; r < cr.ranked.size(); ++r)
    if (cr.ranked[r].key == truth_key) {
      cr.truth_rank = r;
      break;
    }
  return cr;
}

struct MetricsReport {
  std::vector<std::size_t> ks;
  std::vector<double> accuracy, validity;
  std::map<int, std::vector<double>> class_accuracy;
  std::map<int, std::size_t> class_cases;
  std::size_t cases = 0;              ///< records offered
  std::size_t evaluated = 0;          ///< records sampled and scored
  std::size_t unreconstructable = 0;  ///< flagged records, excluded
  std::size_t oversized = 0;          ///< evaluated records whose group exceeds n_g
  std::size_t samples_per_case = 0;
  std::size_t duplicates_removed = 0;
};

/// Accuracy: a hit when the ground truth is among the k best. Validity: the
/// valid fraction of the min(k, available) best candidates, averaged over cases.
inline MetricsReport aggregate(const std::vector<CaseResult>& cases, const std::vector<std::size_t>& ks) {
  MetricsReport r;
  r.ks = ks;
  r.accuracy.assign(ks.size(), 0.0);
  r.validity.assign(ks.size(), 0.0);
  r.evaluated = cases.size();
  for (const auto& c : cases) {
    r.oversized += c.oversized ? 1 : 0;
    r.samples_per_case = c.samples;
    for (const auto& rc : c.ranked) r.duplicates_removed += rc.copies - 1;
    if (c.class_label) {
      auto& acc = r.class_accuracy[*c.class_label];
      acc.resize(ks.size(), 0.0);
      ++r.class_cases[*c.class_label];
    }
    for (std::size_t q = 0; q < ks.size(); ++q) {
      const bool hit = c.truth_rank && *c.truth_rank < ks[q];
      r.accuracy[q] += hit ? 1.0 : 0.0;
      if (c.class_label) r.class_accuracy[*c.class_label][q] += hit ? 1.0 : 0.0;
      const std::size_t top = std::min(ks[q], c.ranked.size());
      std::size_t valid = 0;
      for (std::size_t j = 0; j < top; ++j) valid += c.ranked[j].valid ? 1 : 0;
      r.validity[q] += top ? static_cast<double>(valid) / static_cast<double>(top) : 0.0;
    }
  }
  if (!cases.empty())
    for (std::size_t q = 0; q < ks.size(); ++q) {
      r.accuracy[q] /= static_cast<double>(cases.size());
      r.validity[q] /= static_cast<double>(cases.size());
    }
  for (auto& [cls, acc] : r.class_accuracy)
    for (auto& a : acc) a /= static_cast<double>(r.class_cases[cls]);
  return r;
}

struct Evaluation {
  MetricsReport metrics;
  std::vector<CaseResult> cases;
};

/// Evaluates every reconstructable record; cases run in parallel on `jobs`
/// threads with per-case seeds, and results are folded in record order.
inline Evaluation rank_and_evaluate(const RetroModel& model, std::span<const ReactionRecord> records,
                                    std::span<const SupervisionTarget> targets, const EvalOptions& opt) {
  if (records.empty()) throw DataError("empty test set");
  if (opt.samples_per_case == 0) throw ConfigError("samples_per_case must be at least 1");
  std::vector<std::size_t> todo;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (targets[i].reconstructable)
      todo.push_back(i);
    else
      ++flagged;
  }
  std::vector<CaseResult> results(todo.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(todo.size());
  auto worker = [&] {
    for (std::size_t k = next++; k < todo.size(); k = next++) {
      const std::size_t i = todo[k];
      try {
        results[k] = evaluate_case(model, records[i].product, records[i].reactants, opt, split_seed(opt.seed, i));
        results[k].case_index = i;
        results[k].class_label = records[i].class_label;
        results[k].oversized = targets[i].group.size() > model.stage.n_g;
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t k = 0; k < todo.size(); ++k)
    if (!errors[k].empty()) throw Error("evaluation", "case " + std::to_string(todo[k]) + ": " + errors[k]);
  Evaluation ev{aggregate(results, opt.ks), std::move(results)};
  ev.metrics.cases = records.size();
  ev.metrics.unreconstructable = flagged;
  ev.metrics.samples_per_case = opt.samples_per_case;
  return ev;
}

inline std::string format_metric(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

/// Flat key=value report.
inline std::string format_report(const MetricsReport& r) {
  std::ostringstream o;
  o << "cases=" << r.cases << "\n"
    << "evaluated=" << r.evaluated << "\n"
    << "unreconstructable=" << r.unreconstructable << "\n"
    << "oversized_groups=" << r.oversized << "\n"
    << "samples_per_case=" << r.samples_per_case << "\n"
    << "duplicates_removed=" << r.duplicates_removed << "\n";
  for (std::size_t q = 0; q < r.ks.size(); ++q) o << "top" << r.ks[q] << "_accuracy=" << format_metric(r.accuracy[q]) << "\n";
  for (std::size_t q = 0; q < r.ks.size(); ++q) o << "top" << r.ks[q] << "_validity=" << format_metric(r.validity[q]) << "\n";
  for (const auto& [cls, acc] : r.class_accuracy) {
    o << "class" << cls << "_cases=" << r.class_cases.at(cls) << "\n";
    for (std::size_t q = 0; q < r.ks.size(); ++q)
      o << "class" << cls << "_top" << r.ks[q] << "_accuracy=" << format_metric(acc[q]) << "\n";
  }
  return o.str();
}

/// One JSON object per case.
inline std::string format_case_record(const CaseResult& c, const std::vector<std::size_t>& ks, const AtomVocab& vocab,
                                      std::size_t keep = 10) {
  nlohmann::ordered_json j;
  j["case"] = c.case_index;
  j["product"] = c.product;
  if (c.class_label) j["class"] = *c.class_label;
  j["truth_rank"] = c.truth_rank ? nlohmann::json(*c.truth_rank + 1) : nlohmann::json(nullptr);
  auto& hits = j["hits"] = nlohmann::ordered_json::object();
  for (auto k : ks) hits["top" + std::to_string(k)] = c.truth_rank && *c.truth_rank < k;
  auto& cands = j["candidates"] = nlohmann::ordered_json::array();
  for (std::size_t r = 0; r < std::min(keep, c.ranked.size()); ++r) {
    const auto& rc = c.ranked[r];
    cands.push_back({{"reactants", write_canonical(rc.reactant, vocab)},
                     {"score", rc.score.score},
                     {"atom_term", rc.score.atom_term},
                     {"bond_term", rc.score.bond_term},
                     {"valid", rc.valid},
                     {"copies", rc.copies}});
  }
  return j.dump();
}

}  // namespace retrodiff
