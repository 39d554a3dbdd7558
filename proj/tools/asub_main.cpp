#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "asub/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"active-subspace estimation from Gaussian-process surrogates"};
  app.require_subcommand(1);

  std::string run_config, uq_config, out_override, data_path, kernel = "g";
  int jobs = 1, r = 0;
  uint64_t seed = 0;

  CLI::App* run = app.add_subcommand("run", "run a configured sequential-design experiment");
  run->add_option("config", run_config, "experiment config file")->required();
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--jobs", jobs, "concurrent (trial, method) tasks")->check(CLI::PositiveNumber);
  run->add_option("--out", out_override, "output directory (overrides the config)");

  CLI::App* uq = app.add_subcommand("uq", "eigenvalue interval tables from a config");
  uq->add_option("config", uq_config, "experiment config file")->required();
  uq->add_option("--seed", seed, "override the config seed");
  uq->add_option("--out", out_override, "output directory (overrides the config)");

  CLI::App* est = app.add_subcommand("estimate", "one-shot estimation from a data CSV");
  est->add_option("--data", data_path, "CSV with columns x1..xm,y")->required();
  est->add_option("--kernel", kernel, "g|m32|m52 (or full family names)");
  est->add_option("--r", r, "subspace dimension (omit for the advisory cut-off)");
  est->add_option("--out", out_override, "output directory for subspace.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems share the invalid-input exit code
  }

  try {
    if (run->parsed()) {
      asub::ExperimentConfig cfg = asub::parse_config(run_config);
      if (run->count("--seed")) cfg.seed = seed;
      if (!out_override.empty()) cfg.out.dir = out_override;
      return asub::cmd_run(cfg, jobs);
    }
    if (uq->parsed()) {
      asub::ExperimentConfig cfg = asub::parse_config(uq_config);
      if (uq->count("--seed")) cfg.seed = seed;
      if (!out_override.empty()) cfg.out.dir = out_override;
      return asub::cmd_uq(cfg);
    }
    if (est->parsed())
      return asub::cmd_estimate(data_path, kernel, r,
                                out_override.empty() ? "out" : out_override);
  } catch (const asub::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
