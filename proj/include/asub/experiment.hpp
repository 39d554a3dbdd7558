#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "asub/types.hpp"

namespace asub {

inline constexpr const char* kVersion = "0.1.0";

// Configuration problems carry the offending line when known; the CLI maps
// them to exit code 2.
struct ConfigError : Error {
  int line = 0;  // 0 when not tied to a config line
  explicit ConfigError(const std::string& msg, int line_ = 0) : Error(msg), line(line_) {}
};

struct AcqSettings {
  int n_candidates = 0;  // 0 → 100·m
  int n_local = 5;
  int restarts = 10;
  int warm_restarts = 3;
};

struct UqSettings {
  int n_draws = 500;
  std::vector<double> levels{0.95, 0.99};
  std::vector<int> design_sizes{20};  // one interval table per design size
};

struct RefSettings {
  std::string source = "analytic";  // analytic | fd_mc
  int evals = 10000;                // evaluation budget for the fd_mc reference
  int r = 1;
};

struct OutSettings {
  std::string dir = "out";
  bool timing = false;  // true fills wall_ms (and gives up byte-identical reruns)
};

struct ExperimentConfig {
  std::string benchmark;  // rank1 | wing | testfun2d | covid
  int m = 0;              // required for rank1; fixed by the other benchmarks
  KernelFamily family = KernelFamily::Gaussian;
  std::vector<std::string> criteria;  // trace|var1|var2|random|mc_fd|ols|ll
  int n0 = 0;
  int budget = 0;
  int n_trials = 1;
  uint64_t seed = 0;
  double noise_sd = -1.0;  // negative → benchmark default
  int refit_every = 1;
  bool noiseless_fit = true;
  double fd_step = 1e-4;  // step for FD baselines
  AcqSettings acq;
  UqSettings uq;
  RefSettings ref;
  OutSettings out;

  void validate_run() const;  // throws ConfigError
  void validate_uq() const;
  // resolved settings as sorted section.key=value lines; the output directory
  // is excluded so moving results does not change identity
  std::string canonical() const;
  uint64_t hash() const;         // FNV-1a over canonical()
  std::string hash_hex() const;  // 16 hex digits
};

uint64_t fnv1a64(const std::string& s);

// key = value file with [sections]; '#' starts a comment; unknown sections or
// keys are errors referencing the line.
ExperimentConfig parse_config(const std::string& path);

struct ResultRow {
  int trial = 0;
  std::string method;
  int eval_count = 0;             // cumulative raw objective evaluations
  double subspace_error = 0.0;    // NaN when undefined at this eval count
  double wall_ms = 0.0;           // total task milliseconds; 0 unless timing
  VectorXd eigvals;               // estimate spectrum, may be empty
};

// round-trip decimal formatting; "nan" for NaN
std::string format_double(double v);
// RFC-4180: quote when the field contains comma, quote, or newline
std::string csv_field(const std::string& s);
// interpolated quantile of the sorted values (p in [0,1])
double quantile_sorted(const std::vector<double>& sorted, double p);

// Run the configured experiment with up to `jobs` concurrent (trial, method)
// tasks; writes results.csv, run.json, summary.json. Returns a process exit
// code (0 ok, 1 runtime failure with partial flush, 2 config problem).
int cmd_run(const ExperimentConfig& cfg, int jobs);

// Eigenvalue interval tables at each configured design size; writes uq.csv and
// uq.json. Same exit-code contract.
int cmd_uq(const ExperimentConfig& cfg);

// One-shot estimation from a CSV with columns x1..xm,y; prints the spectrum
// and writes subspace.json. r <= 0 selects the advisory cut-off.
int cmd_estimate(const std::string& data_path, const std::string& kernel, int r,
                 const std::string& out_dir);

}  // namespace asub
