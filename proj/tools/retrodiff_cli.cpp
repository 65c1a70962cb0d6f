#include <CLI11.hpp>

#include <iostream>

#include "retrodiff/cli.hpp"

using namespace retrodiff;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> set;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "key=value run configuration file");
  cmd->add_option("--set", f.set, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", f.seed, "random seed");
  cmd->add_option("--jobs", f.jobs, "worker threads for sampling and evaluation");
  cmd->add_option("--out", f.out, "output directory");
}

/// Config file first, then --set, then the dedicated flags: later wins.
cli::RunConfig resolve(const Flags& f) {
  cli::RunConfig c;
  if (!f.config.empty()) cli::apply_config_file(c, f.config);
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cli::apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) c.seed = *f.seed;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.out) c.out = *f.out;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RetroDiff: staged discrete graph diffusion for single-step retrosynthesis"};
  app.require_subcommand(1);
  Flags flags;

  auto* train = app.add_subcommand("train", "train every stage and write a checkpoint");
  add_common(train, flags);

  auto* sample = app.add_subcommand("sample", "sample and rank reactants for one product");
  add_common(sample, flags);
  std::string product;
  std::optional<std::size_t> num_samples;
  bool trace = false;
  sample->add_option("--product", product, "product SMILES")->required();
  sample->add_option("--num-samples", num_samples, "samples to draw");
  sample->add_flag("--trace", trace, "write trace.mgf and trace.svg for the top candidate");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a test corpus");
  add_common(eval, flags);

  auto* inspect = app.add_subcommand("inspect", "describe a checkpoint or corpus file");
  std::string path;
  inspect->add_option("path", path, "checkpoint or corpus")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error usage: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*inspect) {
      cli::cmd_inspect(path, std::cout);
      return 0;
    }
    auto cfg = resolve(flags);
    if (*train) {
      cli::cmd_train(cfg, std::cout);
    } else if (*sample) {
      if (num_samples) cfg.num_samples = *num_samples;
      cli::cmd_sample(cfg, product, trace, std::cout);
    } else if (*eval) {
      cli::cmd_eval(cfg, std::cout);
    }
  } catch (const Error& e) {
    std::cerr << "error " << e.error_class() << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
