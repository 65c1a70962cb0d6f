#pragma once

// Command implementations behind the `retrodiff` executable. Every command
// writes its primary output to the supplied stream so it can be driven
// in-process by tests.

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "retrodiff/canonical.hpp"
#include "retrodiff/checkpoint.hpp"
#include "retrodiff/evalrank.hpp"
#include "retrodiff/pipeline.hpp"
#include "retrodiff/reaction_data.hpp"
#include "retrodiff/smiles.hpp"

namespace retrodiff::cli {

namespace fs = std::filesystem;

struct RunConfig {
  std::string corpus;
  std::string test_corpus;  ///< defaults to `corpus`
  std::string checkpoint;   ///< defaults to <out>/model.rdck
  std::string out = ".";
  StageConfig stage;
  bool auto_n_g = true;
  Architecture arch;
  std::vector<std::size_t> steps{1000};  ///< per stage; one value applies to every stage
  std::size_t batch = 8;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;
  std::vector<std::size_t> ks{1, 3, 5, 10};
  std::size_t samples_per_case = 100;
  std::size_t M = 50;
  std::size_t jobs = 1;
  std::size_t num_samples = 10;
  std::size_t keep = 10;

  std::string checkpoint_path() const { return checkpoint.empty() ? (fs::path(out) / "model.rdck").string() : checkpoint; }
  std::string test_corpus_path() const { return test_corpus.empty() ? corpus : test_corpus; }

  std::vector<std::size_t> stage_steps() const {
    const std::size_t stages = stage_plan(stage).size();
    if (steps.size() == 1) return std::vector<std::size_t>(stages, steps[0]);
    if (steps.size() != stages)
      throw ConfigError("steps: expected 1 or " + std::to_string(stages) + " values, got " +
                        std::to_string(steps.size()));
    return steps;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& v) {
  std::istringstream in(v);
  U x{};
  if constexpr (std::is_unsigned_v<U>) {
    if (!v.empty() && v[0] == '-') throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
  }
  in >> x;
  if (in.fail() || !in.eof()) throw ConfigError(key + ": cannot parse '" + v + "'");
  return x;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

}  // namespace detail

/// Applies one key=value setting. Unknown keys are errors.
inline void apply_setting(RunConfig& c, const std::string& key, const std::string& value) {
  using detail::parse_number;
  static const std::map<std::string, std::function<void(RunConfig&, const std::string&)>> setters{
      {"corpus", [](RunConfig& c, const std::string& v) { c.corpus = v; }},
      {"test_corpus", [](RunConfig& c, const std::string& v) { c.test_corpus = v; }},
      {"checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; }},
      {"out", [](RunConfig& c, const std::string& v) { c.out = v; }},
      {"T1", [](RunConfig& c, const std::string& v) { c.stage.T1 = parse_number<std::size_t>("T1", v); }},
      {"T2", [](RunConfig& c, const std::string& v) { c.stage.T2 = parse_number<std::size_t>("T2", v); }},
      {"mu", [](RunConfig& c, const std::string& v) { c.stage.mu = parse_number<double>("mu", v); }},
      {"n_g",
       [](RunConfig& c, const std::string& v) {
         c.auto_n_g = v == "auto";
         if (!c.auto_n_g) c.stage.n_g = parse_number<std::size_t>("n_g", v);
       }},
      {"prior", [](RunConfig& c, const std::string& v) { c.stage.prior = parse_prior(v); }},
      {"stage_order", [](RunConfig& c, const std::string& v) { c.stage.order = parse_stage_order(v); }},
      {"n_layer", [](RunConfig& c, const std::string& v) { c.arch.n_layer = parse_number<std::size_t>("n_layer", v); }},
      {"node_width",
       [](RunConfig& c, const std::string& v) { c.arch.node_width = parse_number<std::size_t>("node_width", v); }},
      {"edge_width",
       [](RunConfig& c, const std::string& v) { c.arch.edge_width = parse_number<std::size_t>("edge_width", v); }},
      {"global_width",
       [](RunConfig& c, const std::string& v) { c.arch.global_width = parse_number<std::size_t>("global_width", v); }},
      {"heads", [](RunConfig& c, const std::string& v) { c.arch.heads = parse_number<std::size_t>("heads", v); }},
      {"steps", [](RunConfig& c, const std::string& v) { c.steps = detail::parse_list("steps", v); }},
      {"batch", [](RunConfig& c, const std::string& v) { c.batch = parse_number<std::size_t>("batch", v); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.lr = parse_number<double>("lr", v); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_number<std::uint64_t>("seed", v); }},
      {"checkpoint_every",
       [](RunConfig& c, const std::string& v) { c.checkpoint_every = parse_number<std::size_t>("checkpoint_every", v); }},
      {"ks", [](RunConfig& c, const std::string& v) { c.ks = detail::parse_list("ks", v); }},
      {"samples_per_case",
       [](RunConfig& c, const std::string& v) { c.samples_per_case = parse_number<std::size_t>("samples_per_case", v); }},
      {"M", [](RunConfig& c, const std::string& v) { c.M = parse_number<std::size_t>("M", v); }},
      {"jobs", [](RunConfig& c, const std::string& v) { c.jobs = parse_number<std::size_t>("jobs", v); }},
      {"num_samples",
       [](RunConfig& c, const std::string& v) { c.num_samples = parse_number<std::size_t>("num_samples", v); }},
      {"keep", [](RunConfig& c, const std::string& v) { c.keep = parse_number<std::size_t>("keep", v); }},
  };
  auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, value);
}

/// Flat `key = value` text; '#' starts a comment.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    try {
      apply_setting(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(c, ss.str());
}

/// Range checks shared by every command.
inline void validate_config(const RunConfig& c) {
  auto positive = [](const char* name, std::size_t v) {
    if (v == 0) throw ConfigError(std::string(name) + " must be at least 1");
  };
  c.stage.validate();
  if (!(c.lr > 0.0 && c.lr < 1.0)) throw ConfigError("lr must lie in (0, 1)");
  positive("batch", c.batch);
  positive("samples_per_case", c.samples_per_case);
  positive("M", c.M);
  positive("jobs", c.jobs);
  positive("num_samples", c.num_samples);
  for (auto k : c.ks) positive("ks", k);
  Architecture a = c.arch;
  a.atom_classes = 2;
  a.validate();
}

inline void require_file(const std::string& field, const std::string& path) {
  if (path.empty()) throw ConfigError(field + " is required");
  if (!fs::is_regular_file(path)) throw ConfigError(field + ": no such file '" + path + "'");
}

// ---- trace emitters -------------------------------------------------------

inline const char* tag_name(NodeTag t) {
  switch (t) {
    case NodeTag::Product: return "product";
    case NodeTag::Group: return "group";
    case NodeTag::Dummy: return "dummy";
  }
  return "?";
}

/// One block per recorded state:
///   step <k> stage <name> t <t>
///   n <nodes>
///   a <i> <symbol> <tag>      (one per node)
///   b <i> <j> <order>         (one per bond, i < j)
///   end
inline std::string format_mgf(const SampleTrace& tr, const AtomVocab& vocab) {
  std::ostringstream o;
  for (std::size_t k = 0; k < tr.steps.size(); ++k) {
    const MolGraph& g = tr.steps[k];
    o << "step " << k << " stage " << tr.stage_names[k] << " t " << tr.timesteps[k] << "\n";
    o << "n " << g.size() << "\n";
    for (std::size_t i = 0; i < g.size(); ++i) o << "a " << i << " " << vocab.symbol(g.atom(i)) << " " << tag_name(g.tag(i)) << "\n";
    for (const auto& e : g.edges()) o << "b " << e.u << " " << e.v << " " << static_cast<int>(e.order) << "\n";
    o << "end\n";
  }
  return o.str();
}

/// Static strip of panels, one per recorded state, wrapped into rows.
/// Nodes sit on a circle in index order; colour encodes the atom category.
inline std::string format_svg(const SampleTrace& tr, const AtomVocab& vocab, std::size_t per_row = 20) {
  static const char* palette[] = {"#d0d0d0", "#404040", "#3050f8", "#ff0d0d", "#c8a000",
                                  "#ff8000", "#90e050", "#1ff01f", "#a62929", "#940094"};
  constexpr double W = 120.0, H = 140.0, R = 42.0;
  const std::size_t panels = tr.steps.size();
  const std::size_t cols = std::min(per_row, std::max<std::size_t>(panels, 1));
  const std::size_t rows = (panels + cols - 1) / cols;
  std::ostringstream o;
  char buf[160];
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << cols * W << "\" height=\"" << rows * H
    << "\" font-family=\"monospace\" font-size=\"10\">\n";
  for (std::size_t k = 0; k < panels; ++k) {
    const MolGraph& g = tr.steps[k];
    const double ox = static_cast<double>(k % cols) * W, oy = static_cast<double>(k / cols) * H;
    const std::size_t n = g.size();
    std::vector<double> px(n), py(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(n, 1)) - M_PI / 2;
      px[i] = ox + W / 2 + R * std::cos(a);
      py[i] = oy + 20 + H / 2 - 10 + R * std::sin(a);
    }
    o << "<g>\n";
    std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\">%s t=%zu</text>\n", ox + 4, oy + 12,
                  tr.stage_names[k].c_str(), tr.timesteps[k]);
    o << buf;
    for (const auto& e : g.edges()) {
      std::snprintf(buf, sizeof buf,
                    "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#606060\" stroke-width=\"%d\"/>\n",
                    px[e.u], py[e.u], px[e.v], py[e.v], 2 * static_cast<int>(e.order) - 1);
      o << buf;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const Category a = g.atom(i);
      std::snprintf(buf, sizeof buf,
                    "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"6\" fill=\"%s\" stroke=\"%s\"><title>%zu %s</title></circle>\n",
                    px[i], py[i], palette[a % 10], g.tag(i) == NodeTag::Product ? "#000000" : "#ffffff", i,
                    vocab.symbol(a).c_str());
      o << buf;
    }
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

// ---- commands ---------------------------------------------------------------

struct Corpus {
  std::vector<ReactionRecord> records;
  std::vector<SupervisionTarget> targets;
};

inline Corpus load_corpus(const std::string& path, const AtomVocab& vocab = AtomVocab::organic()) {
  Corpus c;
  c.records = read_corpus_file(path, vocab);
  if (c.records.empty()) throw DataError("corpus '" + path + "' has no reactions");
  for (const auto& r : c.records) c.targets.push_back(extract_supervision(r));
  return c;
}

inline void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

inline std::string format_loss(const LossLogEntry& e, std::size_t global_step) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "%zu\t%s\t%zu\t%.9g\t%.9g\n", global_step, e.stage.c_str(), e.step, e.atom_ce,
                e.bond_ce);
  return buf;
}

/// Trains every stage and writes the checkpoint plus `train_loss.tsv`.
inline RetroModel cmd_train(const RunConfig& cfg, std::ostream& log) {
  validate_config(cfg);
  require_file("corpus", cfg.corpus);
  const Corpus raw = load_corpus(cfg.corpus);
  const AtomVocab vocab = build_vocab(raw.records);
  std::vector<ReactionRecord> records;
  for (const auto& r : raw.records) records.push_back(remap_vocab(r, AtomVocab::organic(), vocab));
  std::vector<SupervisionTarget> targets;
  for (const auto& r : records) targets.push_back(extract_supervision(r));

  StageConfig stage = cfg.stage;
  if (cfg.auto_n_g) {
    const auto b = compute_group_budget(std::span<const SupervisionTarget>(targets));
    stage.n_g = std::max<std::size_t>(b.n_g, 1);
    log << "n_g=" << stage.n_g << " (auto; " << b.excluded_count << " outliers excluded)\n";
  }
  const auto set = make_training_set(records, targets, stage.n_g);
  log << "training_examples=" << set.examples.size() << " skipped_oversized=" << set.skipped_oversized
      << " skipped_unreconstructable=" << set.skipped_unreconstructable << "\n";

  RetroModel model = RetroModel::create(vocab, stage, cfg.arch, cfg.seed);
  const fs::path out(cfg.out);
  fs::create_directories(out);
  std::ofstream loss(out / "train_loss.tsv", std::ios::trunc);
  if (!loss) throw DataError("cannot write '" + (out / "train_loss.tsv").string() + "'");
  loss << "global_step\tstage\tstep\tatom_ce\tbond_ce\n";

  const auto steps = cfg.stage_steps();
  TrainOptions opt{0, cfg.batch, cfg.lr, cfg.seed};
  std::size_t global = 0;
  for (std::size_t s = 0; s < steps.size(); ++s) {
    StageTrainer tr(model, set, s, opt);
    for (std::size_t k = 0; k < steps[s]; ++k) {
      const auto e = tr.step();
      loss << format_loss(e, ++global);
      if (cfg.checkpoint_every && global % cfg.checkpoint_every == 0) {
        auto c = model.to_checkpoint();
        c.counters["train/steps"] = global;
        save_checkpoint(c, (out / ("model.step" + std::to_string(global) + ".rdck")).string());
      }
    }
    log << "stage " << s + 1 << " (" << to_string(tr.plan().kind) << ") trained for " << steps[s] << " steps\n";
  }
  auto c = model.to_checkpoint();
  c.counters["train/steps"] = global;
  save_checkpoint(c, cfg.checkpoint_path());
  log << "checkpoint=" << cfg.checkpoint_path() << "\n";
  return model;
}

inline RetroModel load_model(const RunConfig& cfg) {
  require_file("checkpoint", cfg.checkpoint_path());
  return RetroModel::from_checkpoint(load_checkpoint(cfg.checkpoint_path()));
}

/// Samples reactants for one product and prints them ranked by score.
/// With `trace`, writes the top candidate's trajectory as trace.mgf/trace.svg.
inline void cmd_sample(const RunConfig& cfg, const std::string& product_text, bool trace, std::ostream& out) {
  validate_config(cfg);
  const RetroModel model = load_model(cfg);
  const auto parsed = parse_molecule(product_text);
  if (parsed.graph.empty()) throw ValidationError("empty product");
  if (parsed.graph.components().size() != 1) throw ValidationError("product must be a single molecule");
  const MolGraph product = remap_vocab(parsed.graph, AtomVocab::organic(), model.vocab);
  EvalOptions opt;
  opt.samples_per_case = cfg.num_samples;
  opt.M = cfg.M;
  const auto ranked = sample_and_rank(model, product, opt, cfg.seed);
  char buf[96];
  for (std::size_t r = 0; r < ranked.size(); ++r) {
    const auto& c = ranked[r];
    std::snprintf(buf, sizeof buf, "%zu\t%.6f\t%s\t%zu\t", r + 1, c.score.score, c.valid ? "valid" : "invalid", c.copies);
    out << buf << write_canonical(c.reactant, model.vocab) << "\n";
  }
  if (trace && !ranked.empty()) {
    const auto tr = sample(model, product, split_seed(cfg.seed, ranked.front().sample_index), true);
    write_text(fs::path(cfg.out) / "trace.mgf", format_mgf(tr, model.vocab));
    write_text(fs::path(cfg.out) / "trace.svg", format_svg(tr, model.vocab));
  }
}

/// Evaluates on the test corpus; writes eval_report.txt and eval_cases.jsonl.
inline MetricsReport cmd_eval(const RunConfig& cfg, std::ostream& out) {
  validate_config(cfg);
  require_file("test_corpus", cfg.test_corpus_path());
  const RetroModel model = load_model(cfg);
  const Corpus raw = load_corpus(cfg.test_corpus_path());
  Corpus test;
  for (std::size_t i = 0; i < raw.records.size(); ++i) {
    test.records.push_back(remap_vocab(raw.records[i], AtomVocab::organic(), model.vocab));
    test.targets.push_back(extract_supervision(test.records.back()));
  }
  EvalOptions opt;
  opt.samples_per_case = cfg.samples_per_case;
  opt.M = cfg.M;
  opt.ks = cfg.ks;
  opt.seed = cfg.seed;
  opt.jobs = cfg.jobs;
  const auto ev = rank_and_evaluate(model, test.records, test.targets, opt);
  const std::string report = format_report(ev.metrics);
  std::string lines;
  for (const auto& c : ev.cases) lines += format_case_record(c, opt.ks, model.vocab, cfg.keep) + "\n";
  write_text(fs::path(cfg.out) / "eval_report.txt", report);
  write_text(fs::path(cfg.out) / "eval_cases.jsonl", lines);
  out << report;
  return ev.metrics;
}

inline void inspect_checkpoint(const Checkpoint& c, std::ostream& out) {
  out << "kind=checkpoint\n";
  out << "vocab=";
  for (std::size_t i = 0; i < c.vocab_symbols.size(); ++i) out << (i ? "," : "") << c.vocab_symbols[i];
  out << "\nT1=" << c.stage.T1 << "\nT2=" << c.stage.T2 << "\nmu=" << c.stage.mu << "\nn_g=" << c.stage.n_g
      << "\nprior=" << to_string(c.stage.prior) << "\nstage_order=" << to_string(c.stage.order) << "\n";
  out << "n_layer=" << c.arch.n_layer << "\nnode_width=" << c.arch.node_width << "\nedge_width=" << c.arch.edge_width
      << "\nglobal_width=" << c.arch.global_width << "\nheads=" << c.arch.heads << "\n";
  for (const auto& [k, v] : c.counters) out << "counter " << k << "=" << v << "\n";
  char buf[32];
  for (const auto& t : c.tensors) {
    out << "tensor " << t.name << " [";
    for (std::size_t i = 0; i < t.dims.size(); ++i) out << (i ? "x" : "") << t.dims[i];
    const auto crc = retrodiff::detail::crc32_of(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
    std::snprintf(buf, sizeof buf, "%08x", crc);
    out << "] crc32=" << buf << "\n";
  }
}

inline void inspect_corpus(const Corpus& c, std::ostream& out) {
  const AtomVocab& vocab = AtomVocab::organic();
  out << "kind=corpus\nrecords=" << c.records.size() << "\n";
  std::map<std::size_t, std::size_t> sizes;
  std::map<std::string, std::size_t> elements;
  std::map<int, std::size_t> classes;
  std::size_t flagged = 0;
  for (std::size_t i = 0; i < c.records.size(); ++i) {
    const auto& r = c.records[i];
    ++sizes[r.product.size()];
    for (auto a : r.product.atoms()) ++elements[vocab.symbol(a)];
    if (r.class_label) ++classes[*r.class_label];
    flagged += c.targets[i].reconstructable ? 0 : 1;
  }
  out << "unreconstructable=" << flagged << "\n";
  for (const auto& [n, k] : sizes) out << "product_atoms " << n << " " << k << "\n";
  for (const auto& [e, k] : elements) out << "product_element " << e << " " << k << "\n";
  for (const auto& [cls, k] : classes) out << "class " << cls << " " << k << "\n";
  const auto b = compute_group_budget(std::span<const SupervisionTarget>(c.targets));
  char buf[96];
  std::snprintf(buf, sizeof buf, "group_size_mean=%.4f\ngroup_size_stddev=%.4f\n", b.mean, b.stddev);
  out << buf << "group_size_excluded=" << b.excluded_count << "\n";
  for (std::size_t i = 0; i < c.targets.size(); ++i)
    if (!b.retained[i])
      out << "excluded line " << c.records[i].line << " group_size " << c.targets[i].group_atoms.size() << "\n";
  out << "n_g=" << b.n_g << "\n";
}

/// Dumps a checkpoint (detected by its magic) or a reaction corpus.
inline void cmd_inspect(const std::string& path, std::ostream& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path + "'");
  char magic[4] = {};
  in.read(magic, 4);
  const bool is_checkpoint = in.gcount() == 4 && std::memcmp(magic, kCheckpointMagic, 4) == 0;
  in.close();
  if (is_checkpoint)
    inspect_checkpoint(load_checkpoint(path), out);
  else
    inspect_corpus(load_corpus(path), out);
}

}  // namespace retrodiff::cli
