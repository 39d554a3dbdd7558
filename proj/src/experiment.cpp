#include "asub/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "asub/asm_core.hpp"
#include "asub/baselines.hpp"
#include "asub/benchfns.hpp"
#include "asub/gp.hpp"
#include "asub/sequential.hpp"
#include "asub/uq.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using njson = nlohmann::ordered_json;

namespace asub {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

const std::vector<std::string> kMethods{"trace", "var1", "var2", "random",
                                        "mc_fd", "ols",  "ll"};

// fixed ids keep per-task seeds independent of which subset is configured
int method_id(const std::string& name) {
  for (size_t i = 0; i < kMethods.size(); ++i)
    if (kMethods[i] == name) return static_cast<int>(i) + 1;
  return 0;
}

bool is_sequential(const std::string& name) {
  return name == "trace" || name == "var1" || name == "var2" || name == "random";
}

std::string join_list(const std::vector<std::string>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + v[i];
  return s;
}

njson jvec(const VectorXd& v) {
  njson a = njson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

njson jmat(const MatrixXd& M) {
  njson rows = njson::array();
  for (int i = 0; i < M.rows(); ++i) {
    njson r = njson::array();
    for (int j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
    rows.push_back(r);
  }
  return rows;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("write failed for " + path.string());
}

std::string serialize_eigvals(const VectorXd& v) {
  std::string s;
  for (int i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v[i]);
  return s;
}

}  // namespace

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    q += c;
    if (c == '"') q += '"';
  }
  q += '"';
  return q;
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return kNaN;
  if (sorted.size() == 1) return sorted[0];
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

uint64_t fnv1a64(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// configuration

namespace {

std::string bool_str(bool b) { return b ? "true" : "false"; }

std::string list_str(const std::vector<double>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::string list_str(const std::vector<int>& v) {
  std::string s;
  for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

std::string ExperimentConfig::canonical() const {
  std::vector<std::string> lines{
      "acquisition.n_candidates=" + std::to_string(acq.n_candidates),
      "acquisition.n_local=" + std::to_string(acq.n_local),
      "acquisition.restarts=" + std::to_string(acq.restarts),
      "acquisition.warm_restarts=" + std::to_string(acq.warm_restarts),
      "experiment.benchmark=" + benchmark,
      "experiment.budget=" + std::to_string(budget),
      "experiment.criteria=" + join_list(criteria),
      "experiment.fd_step=" + format_double(fd_step),
      "experiment.kernel=" + std::string(family_name(family)),
      "experiment.m=" + std::to_string(m),
      "experiment.n0=" + std::to_string(n0),
      "experiment.n_trials=" + std::to_string(n_trials),
      "experiment.noise_sd=" + format_double(noise_sd),
      "experiment.noiseless_fit=" + bool_str(noiseless_fit),
      "experiment.refit_every=" + std::to_string(refit_every),
      "experiment.seed=" + std::to_string(seed),
      "output.timing=" + bool_str(out.timing),
      "reference.evals=" + std::to_string(ref.evals),
      "reference.r=" + std::to_string(ref.r),
      "reference.source=" + ref.source,
      "uq.design_sizes=" + list_str(uq.design_sizes),
      "uq.levels=" + list_str(uq.levels),
      "uq.n_draws=" + std::to_string(uq.n_draws),
  };
  std::string s;
  for (const auto& l : lines) s += l + "\n";
  return s;
}

uint64_t ExperimentConfig::hash() const { return fnv1a64(canonical()); }

std::string ExperimentConfig::hash_hex() const {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(hash()));
  return buf;
}

namespace {

int parse_int(const std::string& v, const std::string& where, int line) {
  try {
    size_t used = 0;
    const int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected an integer, got '" + v + "'", line);
  }
}

uint64_t parse_u64(const std::string& v, const std::string& where, int line) {
  try {
    size_t used = 0;
    const unsigned long long x = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a non-negative integer, got '" + v + "'", line);
  }
}

double parse_real(const std::string& v, const std::string& where, int line) {
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (const std::exception&) {
    throw ConfigError(where + ": expected a number, got '" + v + "'", line);
  }
}

bool parse_bool(const std::string& v, const std::string& where, int line) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError(where + ": expected true or false, got '" + v + "'", line);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::string cur;
  for (char c : v) {
    if (c == ',') {
      parts.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  parts.push_back(cur);
  parts.erase(std::remove(parts.begin(), parts.end(), std::string()), parts.end());
  return parts;
}

KernelFamily parse_family(std::string v, const std::string& where, int line) {
  if (v == "g") v = "gaussian";
  if (v == "m32") v = "matern32";
  if (v == "m52") v = "matern52";
  try {
    return family_from_name(v);
  } catch (const Error&) {
    throw ConfigError(where + ": unknown kernel '" + v + "' (gaussian|matern32|matern52)", line);
  }
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

ExperimentConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  ExperimentConfig cfg;
  std::string section;
  std::string raw;
  int ln = 0;
  auto where = [&](const std::string& key) {
    return path + ":" + std::to_string(ln) + ": [" + section + "] " + key;
  };
  while (std::getline(in, raw)) {
    ++ln;
    const size_t hash_pos = raw.find('#');
    std::string line = trim(hash_pos == std::string::npos ? raw : raw.substr(0, hash_pos));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError(path + ":" + std::to_string(ln) + ": malformed section header", ln);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "experiment" && section != "acquisition" && section != "uq" &&
          section != "reference" && section != "output")
        throw ConfigError(path + ":" + std::to_string(ln) + ": unknown section [" + section + "]",
                          ln);
      continue;
    }
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path + ":" + std::to_string(ln) + ": expected key = value", ln);
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError(path + ":" + std::to_string(ln) + ": expected key = value", ln);
    if (section.empty())
      throw ConfigError(path + ":" + std::to_string(ln) + ": key outside any [section]", ln);

    bool known = true;
    if (section == "experiment") {
      if (key == "benchmark") cfg.benchmark = val;
      else if (key == "m") cfg.m = parse_int(val, where(key), ln);
      else if (key == "kernel") cfg.family = parse_family(val, where(key), ln);
      else if (key == "criteria") cfg.criteria = split_list(val);
      else if (key == "n0") cfg.n0 = parse_int(val, where(key), ln);
      else if (key == "budget") cfg.budget = parse_int(val, where(key), ln);
      else if (key == "n_trials") cfg.n_trials = parse_int(val, where(key), ln);
      else if (key == "seed") cfg.seed = parse_u64(val, where(key), ln);
      else if (key == "noise_sd") cfg.noise_sd = parse_real(val, where(key), ln);
      else if (key == "refit_every") cfg.refit_every = parse_int(val, where(key), ln);
      else if (key == "noiseless_fit") cfg.noiseless_fit = parse_bool(val, where(key), ln);
      else if (key == "fd_step") cfg.fd_step = parse_real(val, where(key), ln);
      else known = false;
    } else if (section == "acquisition") {
      if (key == "n_candidates") cfg.acq.n_candidates = parse_int(val, where(key), ln);
      else if (key == "n_local") cfg.acq.n_local = parse_int(val, where(key), ln);
      else if (key == "restarts") cfg.acq.restarts = parse_int(val, where(key), ln);
      else if (key == "warm_restarts") cfg.acq.warm_restarts = parse_int(val, where(key), ln);
      else known = false;
    } else if (section == "uq") {
      if (key == "n_draws") cfg.uq.n_draws = parse_int(val, where(key), ln);
      else if (key == "levels") {
        cfg.uq.levels.clear();
        for (const auto& p : split_list(val)) cfg.uq.levels.push_back(parse_real(p, where(key), ln));
      } else if (key == "n") {
        cfg.uq.design_sizes.clear();
        for (const auto& p : split_list(val))
          cfg.uq.design_sizes.push_back(parse_int(p, where(key), ln));
      } else known = false;
    } else if (section == "reference") {
      if (key == "source") cfg.ref.source = val;
      else if (key == "evals") cfg.ref.evals = parse_int(val, where(key), ln);
      else if (key == "r") cfg.ref.r = parse_int(val, where(key), ln);
      else known = false;
    } else if (section == "output") {
      if (key == "dir") cfg.out.dir = val;
      else if (key == "timing") cfg.out.timing = parse_bool(val, where(key), ln);
      else known = false;
    }
    if (!known)
      throw ConfigError(
          path + ":" + std::to_string(ln) + ": unknown key '" + key + "' in [" + section + "]",
          ln);
  }
  return cfg;
}

namespace {

int benchmark_dim(const std::string& name, int m_cfg) {
  if (name == "testfun2d") return 2;
  if (name == "wing") return 10;
  if (name == "covid") return 7;
  if (name == "rank1") return m_cfg;
  return 0;
}

void validate_benchmark(const ExperimentConfig& cfg) {
  const std::string& b = cfg.benchmark;
  if (b != "rank1" && b != "wing" && b != "testfun2d" && b != "covid")
    throw ConfigError("unknown benchmark '" + b + "' (rank1|wing|testfun2d|covid)");
  if (b == "rank1") {
    if (cfg.m < 2) throw ConfigError("rank1 benchmark needs m >= 2 in [experiment]");
  } else {
    const int fixed = benchmark_dim(b, 0);
    if (cfg.m != 0 && cfg.m != fixed)
      throw ConfigError("benchmark '" + b + "' has fixed dimension " + std::to_string(fixed));
  }
}

}  // namespace

void ExperimentConfig::validate_run() const {
  validate_benchmark(*this);
  if (criteria.empty()) throw ConfigError("criteria must not be empty");
  for (const auto& c : criteria)
    if (method_id(c) == 0)
      throw ConfigError("unknown criterion '" + c + "' (trace|var1|var2|random|mc_fd|ols|ll)");
  for (size_t i = 0; i < criteria.size(); ++i)
    for (size_t j = i + 1; j < criteria.size(); ++j)
      if (criteria[i] == criteria[j]) throw ConfigError("duplicate criterion '" + criteria[i] + "'");
  if (n0 < 2) throw ConfigError("n0 must be at least 2");
  if (budget <= n0) throw ConfigError("budget must exceed n0");
  if (n_trials < 1) throw ConfigError("n_trials must be at least 1");
  if (refit_every < 1) throw ConfigError("refit_every must be at least 1");
  if (fd_step <= 0) throw ConfigError("fd_step must be positive");
  if (acq.n_candidates < 0 || acq.n_local < 0 || acq.restarts < 1 || acq.warm_restarts < 0)
    throw ConfigError("acquisition settings out of range");
  if (ref.source != "analytic" && ref.source != "fd_mc")
    throw ConfigError("reference source must be analytic or fd_mc");
  if (ref.r < 1) throw ConfigError("reference r must be at least 1");
}

void ExperimentConfig::validate_uq() const {
  validate_benchmark(*this);
  if (uq.n_draws < 1) throw ConfigError("uq n_draws must be at least 1");
  if (uq.levels.empty()) throw ConfigError("uq levels must not be empty");
  for (double l : uq.levels)
    if (!(l > 0.0 && l < 1.0)) throw ConfigError("uq levels must lie in (0,1)");
  if (uq.design_sizes.empty()) throw ConfigError("uq n must not be empty");
  for (int n : uq.design_sizes)
    if (n < 3) throw ConfigError("uq design sizes must be at least 3");
}

// ---------------------------------------------------------------------------
// cmd_run

namespace {

struct RunContext {
  Benchmark bench;
  int m = 0;
  double noise_sd = 0.0;
  Subspace reference;
  int r = 1;
};

RunContext make_run_context(const ExperimentConfig& cfg) {
  RunContext ctx;
  ctx.bench = make_benchmark(cfg.benchmark, benchmark_dim(cfg.benchmark, cfg.m), cfg.seed);
  ctx.m = ctx.bench.m;
  ctx.noise_sd = cfg.noise_sd >= 0 ? cfg.noise_sd : ctx.bench.noise_sd;
  if (cfg.ref.source == "analytic") {
    if (ctx.bench.true_subspace.size() == 0)
      throw ConfigError("benchmark '" + cfg.benchmark +
                        "' has no analytic reference subspace; use reference source fd_mc");
    ctx.reference = Subspace{ctx.bench.true_subspace, ctx.bench.true_r};
    ctx.r = ctx.bench.true_r;
  } else {
    if (cfg.ref.evals < (ctx.m + 1) * 2)
      throw ConfigError("reference evals too small for an fd_mc reference");
    GradientOracle oracle;
    oracle.kind = GradientOracle::Kind::ForwardFD;
    oracle.m = ctx.m;
    oracle.f = ctx.bench.f;  // the reference uses noise-free evaluations
    oracle.fd_step = cfg.fd_step;
    const int M = cfg.ref.evals / (ctx.m + 1);
    const CEstimate est = mc_estimate_C(oracle, M, mix_seed(cfg.seed, 0xEEF));
    ctx.reference = subspace(est, cfg.ref.r);
    ctx.r = cfg.ref.r;
  }
  return ctx;
}

struct TaskSpec {
  int trial = 0;
  std::string method;
  uint64_t seed = 0;
};

struct TaskOutcome {
  std::vector<ResultRow> rows;
  njson record;  // RunRecord detail for sequential arms, null otherwise
  bool ok = false;
  std::string message;
};

std::vector<ResultRow> rows_from_record(const RunRecord& rec, int trial,
                                        const std::string& method, int n0) {
  std::vector<ResultRow> rows;
  if (rec.initial_eigvals.size() > 0) {
    ResultRow r;
    r.trial = trial;
    r.method = method;
    r.eval_count = n0;
    r.subspace_error = rec.initial_error;
    r.eigvals = rec.initial_eigvals;
    rows.push_back(std::move(r));
  }
  for (const StepRecord& s : rec.steps) {
    ResultRow r;
    r.trial = trial;
    r.method = method;
    r.eval_count = s.index;
    r.subspace_error = s.subspace_error;
    r.eigvals = s.eigvals;
    rows.push_back(std::move(r));
  }
  return rows;
}

njson record_json(const RunRecord& rec) {
  njson steps = njson::array();
  for (const StepRecord& s : rec.steps) {
    njson j;
    j["index"] = s.index;
    j["x"] = jvec(s.xtilde);
    j["acq"] = s.acq_value;
    j["y"] = s.y;
    j["eigvals"] = jvec(s.eigvals);
    j["error"] = s.subspace_error;
    steps.push_back(std::move(j));
  }
  njson j;
  j["X0"] = jmat(rec.X0);
  j["y0"] = jvec(rec.y0);
  j["initial_eigvals"] = jvec(rec.initial_eigvals);
  j["initial_error"] = rec.initial_error;
  j["steps"] = std::move(steps);
  return j;
}

TaskOutcome run_sequential_task(const ExperimentConfig& cfg, const RunContext& ctx,
                                const TaskSpec& task) {
  TaskOutcome out;
  SeqOptions opt;
  opt.m = ctx.m;
  opt.family = cfg.family;
  opt.n0 = cfg.n0;
  opt.budget = cfg.budget;
  opt.random_arm = task.method == "random";
  if (task.method == "trace") opt.criterion = AcqCriterion::Trace;
  if (task.method == "var1") opt.criterion = AcqCriterion::Var1;
  if (task.method == "var2") opt.criterion = AcqCriterion::Var2;
  opt.refit_every = cfg.refit_every;
  opt.n_candidates = cfg.acq.n_candidates;
  opt.n_local = cfg.acq.n_local;
  opt.restarts = cfg.acq.restarts;
  opt.warm_restarts = cfg.acq.warm_restarts;
  opt.noiseless_fit = cfg.noiseless_fit;
  opt.seed = task.seed;
  opt.reference = &ctx.reference;
  opt.r = ctx.r;
  opt.config_note = task.method + "/trial" + std::to_string(task.trial);
  auto f = with_noise(ctx.bench.f, ctx.noise_sd, mix_seed(task.seed, 11));
  try {
    const RunRecord rec = run_sequential(f, opt);
    out.rows = rows_from_record(rec, task.trial, task.method, cfg.n0);
    out.record = record_json(rec);
    out.ok = true;
  } catch (const AbortWithPartialRecord& e) {
    out.rows = rows_from_record(e.partial, task.trial, task.method, cfg.n0);
    out.record = record_json(e.partial);
    out.message = e.what();
  }
  return out;
}

TaskOutcome run_mcfd_task(const ExperimentConfig& cfg, const RunContext& ctx,
                          const TaskSpec& task) {
  TaskOutcome out;
  out.record = nullptr;
  GradientOracle oracle;
  oracle.kind = GradientOracle::Kind::ForwardFD;
  oracle.m = ctx.m;
  oracle.f = with_noise(ctx.bench.f, ctx.noise_sd, mix_seed(task.seed, 11));
  oracle.fd_step = cfg.fd_step;

  const int per_grad = ctx.m + 1;
  const int max_grads = cfg.budget / per_grad;
  Rng rng(mix_seed(task.seed, 12));
  MatrixXd S = MatrixXd::Zero(ctx.m, ctx.m);
  std::vector<double> err_at(max_grads + 1, kNaN);
  std::vector<VectorXd> eig_at(max_grads + 1);
  KernelSpec tag;  // carried through for the eigendecomposition helper only
  tag.lengthscales = VectorXd::Ones(ctx.m);
  for (int g = 1; g <= max_grads; ++g) {
    VectorXd x(ctx.m);
    for (int d = 0; d < ctx.m; ++d) x[d] = rng.uniform();
    const VectorXd grad = oracle.gradient(x);
    S.selfadjointView<Eigen::Lower>().rankUpdate(grad);
    const CEstimate est = finalize_C(MatrixXd(S.selfadjointView<Eigen::Lower>()) / g, g, tag);
    err_at[g] = subspace_distance(ctx.reference, subspace(est, ctx.r));
    eig_at[g] = est.eigvals;
  }
  for (int e = cfg.n0; e <= cfg.budget; ++e) {
    ResultRow r;
    r.trial = task.trial;
    r.method = task.method;
    r.eval_count = e;
    const int g = e / per_grad;
    r.subspace_error = g >= 1 ? err_at[g] : kNaN;
    if (g >= 1) r.eigvals = eig_at[g];
    out.rows.push_back(std::move(r));
  }
  out.ok = true;
  return out;
}

TaskOutcome run_regression_task(const ExperimentConfig& cfg, const RunContext& ctx,
                                const TaskSpec& task, bool local_linear) {
  TaskOutcome out;
  out.record = nullptr;
  auto f = with_noise(ctx.bench.f, ctx.noise_sd, mix_seed(task.seed, 11));
  Rng rng(mix_seed(task.seed, 12));
  MatrixXd X(cfg.budget, ctx.m);
  VectorXd y(cfg.budget);
  for (int i = 0; i < cfg.budget; ++i) {
    for (int d = 0; d < ctx.m; ++d) X(i, d) = rng.uniform();
    y[i] = f(X.row(i).transpose());
  }
  const int k = 3 * ctx.m;
  for (int e = cfg.n0; e <= cfg.budget; ++e) {
    ResultRow r;
    r.trial = task.trial;
    r.method = task.method;
    r.eval_count = e;
    r.subspace_error = kNaN;
    Dataset data{X.topRows(e), y.head(e)};
    try {
      if (local_linear) {
        if (e >= k && k >= ctx.m + 1) {
          const CEstimate est = local_linear_C(data, k);
          r.subspace_error = subspace_distance(ctx.reference, subspace(est, ctx.r));
          r.eigvals = est.eigvals;
        }
      } else if (ctx.r == 1 && e >= ctx.m + 1) {
        const Subspace dir = ols_direction(data);
        r.subspace_error = subspace_distance(ctx.reference, dir);
      }
    } catch (const NumericalError&) {
      r.subspace_error = kNaN;  // degenerate prefix; later rows may recover
    }
    out.rows.push_back(std::move(r));
  }
  out.ok = true;
  return out;
}

std::optional<std::string> existing_dir_hash(const fs::path& dir) {
  for (const char* name : {"run.json", "uq.json", "summary.json"}) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) continue;
    try {
      std::ifstream in(p);
      njson j = njson::parse(in);
      if (j.contains("config_hash")) return j["config_hash"].get<std::string>();
    } catch (...) {
    }
  }
  for (const char* name : {"results.csv", "uq.csv"}) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) continue;
    std::ifstream in(p);
    std::string header, row;
    if (std::getline(in, header) && std::getline(in, row)) {
      const size_t pos = row.find_last_of(',');
      if (pos != std::string::npos && row.size() - pos - 1 == 16) return row.substr(pos + 1);
    }
  }
  return std::nullopt;
}

void reject_mixed_dir(const fs::path& dir, const std::string& hash) {
  const auto existing = existing_dir_hash(dir);
  if (existing && *existing != hash)
    throw ConfigError("output directory '" + dir.string() +
                      "' holds results for a different configuration (hash " + *existing +
                      " vs " + hash + "); use a fresh directory");
}

std::string results_csv(const std::vector<ResultRow>& rows, const std::string& hash) {
  std::string s = "trial,method,eval_count,subspace_error,wall_ms,eigvals,config_hash\n";
  for (const ResultRow& r : rows) {
    s += std::to_string(r.trial);
    s += ',' + csv_field(r.method);
    s += ',' + std::to_string(r.eval_count);
    s += ',' + format_double(r.subspace_error);
    s += ',' + format_double(r.wall_ms);
    s += ',' + csv_field(serialize_eigvals(r.eigvals));
    s += ',' + hash;
    s += '\n';
  }
  return s;
}

njson config_echo(const ExperimentConfig& cfg) {
  njson j;
  std::istringstream in(cfg.canonical());
  std::string line;
  while (std::getline(in, line)) {
    const size_t eq = line.find('=');
    if (eq != std::string::npos) j[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return j;
}

njson summary_json(const ExperimentConfig& cfg, const std::vector<ResultRow>& rows) {
  njson j;
  j["config_hash"] = cfg.hash_hex();
  j["version"] = kVersion;
  njson evals = njson::array();
  for (int e = cfg.n0; e <= cfg.budget; ++e) evals.push_back(e);
  j["eval_counts"] = evals;
  njson methods;
  for (const std::string& method : cfg.criteria) {
    std::vector<std::vector<double>> per_eval(cfg.budget - cfg.n0 + 1);
    for (const ResultRow& r : rows) {
      if (r.method != method) continue;
      if (r.eval_count < cfg.n0 || r.eval_count > cfg.budget) continue;
      if (std::isfinite(r.subspace_error))
        per_eval[r.eval_count - cfg.n0].push_back(r.subspace_error);
    }
    njson med = njson::array(), q25 = njson::array(), q75 = njson::array(),
          mean = njson::array(), cnt = njson::array();
    for (auto& vals : per_eval) {
      std::sort(vals.begin(), vals.end());
      cnt.push_back(vals.size());
      if (vals.empty()) {
        med.push_back(nullptr);
        q25.push_back(nullptr);
        q75.push_back(nullptr);
        mean.push_back(nullptr);
      } else {
        med.push_back(quantile_sorted(vals, 0.5));
        q25.push_back(quantile_sorted(vals, 0.25));
        q75.push_back(quantile_sorted(vals, 0.75));
        double s = 0;
        for (double v : vals) s += v;
        mean.push_back(s / static_cast<double>(vals.size()));
      }
    }
    njson entry;
    entry["median"] = std::move(med);
    entry["q25"] = std::move(q25);
    entry["q75"] = std::move(q75);
    entry["mean"] = std::move(mean);
    entry["n_finite"] = std::move(cnt);
    methods[method] = std::move(entry);
  }
  j["methods"] = std::move(methods);
  return j;
}

std::string seed_hex(uint64_t s) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(s));
  return buf;
}

}  // namespace

int cmd_run(const ExperimentConfig& cfg, int jobs) {
  try {
    cfg.validate_run();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  const std::string hash = cfg.hash_hex();
  const fs::path dir(cfg.out.dir);
  RunContext ctx;
  try {
    fs::create_directories(dir);
    reject_mixed_dir(dir, hash);
    ctx = make_run_context(cfg);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  std::vector<TaskSpec> tasks;
  for (int t = 0; t < cfg.n_trials; ++t)
    for (const std::string& method : cfg.criteria)
      tasks.push_back(
          {t, method, mix_seed(cfg.seed, static_cast<uint64_t>(t), method_id(method))});

  std::vector<TaskOutcome> outcomes(tasks.size());
  std::atomic<size_t> next{0};
  const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(tasks.size())));
  auto worker = [&]() {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const auto t0 = std::chrono::steady_clock::now();
      TaskOutcome out;
      try {
        if (is_sequential(tasks[i].method))
          out = run_sequential_task(cfg, ctx, tasks[i]);
        else if (tasks[i].method == "mc_fd")
          out = run_mcfd_task(cfg, ctx, tasks[i]);
        else
          out = run_regression_task(cfg, ctx, tasks[i], tasks[i].method == "ll");
      } catch (const std::exception& e) {
        out.ok = false;
        out.message = e.what();
        out.record = nullptr;
      }
      if (cfg.out.timing) {
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        for (ResultRow& r : out.rows) r.wall_ms = ms;
      }
      outcomes[i] = std::move(out);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();

  std::vector<ResultRow> rows;
  bool any_failed = false;
  std::string first_error;
  for (size_t i = 0; i < tasks.size(); ++i) {
    rows.insert(rows.end(), outcomes[i].rows.begin(), outcomes[i].rows.end());
    if (!outcomes[i].ok) {
      any_failed = true;
      if (first_error.empty())
        first_error = tasks[i].method + "/trial" + std::to_string(tasks[i].trial) + ": " +
                      outcomes[i].message;
    }
  }

  njson run;
  run["config_hash"] = hash;
  run["version"] = kVersion;
  run["config"] = config_echo(cfg);
  njson bj;
  bj["name"] = cfg.benchmark;
  bj["m"] = ctx.m;
  bj["noise_sd"] = ctx.noise_sd;
  bj["reference_source"] = cfg.ref.source;
  bj["reference_r"] = ctx.r;
  run["benchmark"] = std::move(bj);
  njson tj = njson::array();
  for (size_t i = 0; i < tasks.size(); ++i) {
    njson t;
    t["trial"] = tasks[i].trial;
    t["method"] = tasks[i].method;
    t["seed"] = seed_hex(tasks[i].seed);
    t["ok"] = outcomes[i].ok;
    if (!outcomes[i].ok) t["message"] = outcomes[i].message;
    t["record"] = outcomes[i].record;
    tj.push_back(std::move(t));
  }
  run["tasks"] = std::move(tj);

  try {
    write_text(dir / "results.csv", results_csv(rows, hash));
    write_text(dir / "run.json", run.dump());
    write_text(dir / "summary.json", summary_json(cfg, rows).dump(2) + "\n");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  if (any_failed) {
    std::fprintf(stderr, "error: task failed (%s); partial results flushed to %s\n",
                 first_error.c_str(), dir.string().c_str());
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// cmd_uq

namespace {

std::string level_tag(double level) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%g", level * 100.0);
  return buf;
}

}  // namespace

int cmd_uq(const ExperimentConfig& cfg) {
  try {
    cfg.validate_uq();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  const std::string hash = cfg.hash_hex();
  const fs::path dir(cfg.out.dir);
  try {
    fs::create_directories(dir);
    reject_mixed_dir(dir, hash);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }

  Benchmark bench;
  try {
    bench = make_benchmark(cfg.benchmark, benchmark_dim(cfg.benchmark, cfg.m), cfg.seed);
  } catch (const Error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  }
  const double noise_sd = cfg.noise_sd >= 0 ? cfg.noise_sd : bench.noise_sd;

  // level columns come out ascending regardless of config order
  std::vector<double> levels = cfg.uq.levels;
  std::sort(levels.begin(), levels.end());

  std::string csv = "n,index,point";
  for (double l : levels) csv += ",lo" + level_tag(l) + ",hi" + level_tag(l);
  csv += ",config_hash\n";
  njson tables = njson::array();

  for (int n : cfg.uq.design_sizes) {
    try {
      Rng design_rng(mix_seed(cfg.seed, 0xD51, static_cast<uint64_t>(n)));
      const MatrixXd X = lhs(n, bench.m, design_rng);
      auto f = with_noise(bench.f, noise_sd, mix_seed(cfg.seed, 0xD52, static_cast<uint64_t>(n)));
      VectorXd y(n);
      for (int i = 0; i < n; ++i) y[i] = f(X.row(i).transpose());
      Dataset data{X, y};

      FitOptions fopt;
      fopt.n_restarts = cfg.acq.restarts;
      fopt.seed = mix_seed(cfg.seed, 0xD53, static_cast<uint64_t>(n));
      fopt.noiseless = cfg.noiseless_fit;
      const GPModel model = fit(data, cfg.family, fopt);

      VectorXd lo, hi;
      const double var_y = (y.array() - y.mean()).square().sum() / std::max(1, n - 1);
      default_log_bounds(bench.m, var_y, cfg.noiseless_fit, lo, hi);
      const HyperPosterior post = laplace_cov(model, lo, hi, cfg.noiseless_fit);
      const std::vector<KernelSpec> draws = sample_hypers(
          post, cfg.uq.n_draws, lo, hi, mix_seed(cfg.seed, 0xD54, static_cast<uint64_t>(n)));
      const EigenIntervals iv = eigen_intervals(model, draws, levels, 0);

      njson table;
      table["n"] = n;
      table["kept_draws"] = iv.n_draws;
      table["skipped_draws"] = iv.n_skipped;
      table["point"] = jvec(iv.point);
      njson intervals;
      for (size_t li = 0; li < iv.levels.size(); ++li) {
        njson band;
        band["lo"] = jvec(iv.lo.row(li).transpose());
        band["hi"] = jvec(iv.hi.row(li).transpose());
        intervals[level_tag(iv.levels[li])] = std::move(band);
      }
      table["intervals"] = std::move(intervals);
      tables.push_back(std::move(table));

      for (int idx = 0; idx < iv.point.size(); ++idx) {
        csv += std::to_string(n) + ',' + std::to_string(idx) + ',' + format_double(iv.point[idx]);
        for (size_t li = 0; li < iv.levels.size(); ++li)
          csv += ',' + format_double(iv.lo(li, idx)) + ',' + format_double(iv.hi(li, idx));
        csv += ',' + hash + '\n';
      }
    } catch (const Error& e) {
      std::fprintf(stderr, "error: interval table at n=%d failed: %s\n", n, e.what());
      try {
        write_text(dir / "uq.csv", csv);  // flush tables finished so far
      } catch (...) {
      }
      return 1;
    }
  }

  njson j;
  j["config_hash"] = hash;
  j["version"] = kVersion;
  j["config"] = config_echo(cfg);
  njson lv = njson::array();
  for (double l : levels) lv.push_back(l);
  j["levels"] = std::move(lv);
  j["tables"] = std::move(tables);
  try {
    write_text(dir / "uq.csv", csv);
    write_text(dir / "uq.json", j.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// cmd_estimate

namespace {

std::vector<std::string> split_csv_line(const std::string& line, int row) {
  if (line.find('"') != std::string::npos)
    throw ConfigError("row " + std::to_string(row) + ": quoted fields are not supported here");
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

}  // namespace

int cmd_estimate(const std::string& data_path, const std::string& kernel, int r,
                 const std::string& out_dir) {
  MatrixXd X;
  VectorXd y;
  KernelFamily family;
  std::string raw_bytes;
  try {
    family = parse_family(kernel, "--kernel", 0);
    std::ifstream in(data_path, std::ios::binary);
    if (!in) throw ConfigError("cannot open data file '" + data_path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    raw_bytes = ss.str();

    std::istringstream lines(raw_bytes);
    std::string line;
    int row = 0;
    int m = -1;
    std::vector<std::vector<double>> rows;
    while (std::getline(lines, line)) {
      ++row;
      while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
      if (trim(line).empty()) continue;
      const std::vector<std::string> fields = split_csv_line(line, row);
      if (row == 1) {
        if (fields.size() < 2 || fields.back() != "y")
          throw ConfigError("row 1: expected header x1,..,xm,y");
        m = static_cast<int>(fields.size()) - 1;
        for (int d = 0; d < m; ++d)
          if (fields[d] != "x" + std::to_string(d + 1))
            throw ConfigError("row 1, column " + std::to_string(d + 1) +
                              ": expected header field x" + std::to_string(d + 1) + ", got '" +
                              fields[d] + "'");
        continue;
      }
      if (static_cast<int>(fields.size()) != m + 1)
        throw ConfigError("row " + std::to_string(row) + ": expected " + std::to_string(m + 1) +
                          " fields, got " + std::to_string(fields.size()));
      std::vector<double> vals(m + 1);
      for (int c = 0; c <= m; ++c) {
        try {
          size_t used = 0;
          vals[c] = std::stod(fields[c], &used);
          if (used != fields[c].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
          throw ConfigError("row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                            ": not a number: '" + fields[c] + "'");
        }
        if (c < m && (vals[c] < 0.0 || vals[c] > 1.0))
          throw ConfigError("row " + std::to_string(row) + ", column " + std::to_string(c + 1) +
                            ": value " + fields[c] +
                            " outside [0,1]; rescale inputs to the unit cube first");
      }
      rows.push_back(std::move(vals));
    }
    if (m < 1) throw ConfigError("empty data file");
    if (static_cast<int>(rows.size()) < m + 2)
      throw ConfigError("need at least m+2 data rows, got " + std::to_string(rows.size()));
    X.resize(static_cast<int>(rows.size()), m);
    y.resize(static_cast<int>(rows.size()));
    for (size_t i = 0; i < rows.size(); ++i) {
      for (int d = 0; d < m; ++d) X(static_cast<int>(i), d) = rows[i][d];
      y[static_cast<int>(i)] = rows[i][m];
    }
    if (r > m) throw ConfigError("--r exceeds the input dimension");
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  }

  try {
    Dataset data{X, y};
    FitOptions fopt;
    fopt.n_restarts = 6;
    fopt.seed = 0;  // one-shot estimation is deterministic by construction
    const GPModel model = fit(data, family, fopt);
    const CEstimate est = estimate_C(model, build_W(model));
    const int suggested = suggest_r(est.eigvals);
    const int chosen = r >= 1 ? r : suggested;
    // r == m keeps every direction (the 1-D case in particular)
    const Subspace sub = chosen >= model.m() ? Subspace{est.eigvecs, model.m()}
                                             : subspace(est, chosen);

    std::printf("n = %d, m = %d, kernel = %s\n", model.n(), model.m(),
                family_name(model.spec.family));
    std::printf("eigenvalues:");
    for (int i = 0; i < est.eigvals.size(); ++i) std::printf(" %.6g", est.eigvals[i]);
    std::printf("\nsuggested r = %d%s\n", suggested,
                r >= 1 ? (" (using --r " + std::to_string(r) + ")").c_str() : "");
    for (int c = 0; c < sub.U.cols(); ++c) {
      std::printf("u%d =", c + 1);
      for (int i = 0; i < sub.U.rows(); ++i) std::printf(" % .6f", sub.U(i, c));
      std::printf("\n");
    }

    char dh[20];
    std::snprintf(dh, sizeof(dh), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(raw_bytes)));
    njson j;
    j["version"] = kVersion;
    j["data_file"] = data_path;
    j["data_hash"] = dh;
    j["kernel"] = family_name(family);
    j["n"] = model.n();
    j["m"] = model.m();
    j["lengthscales"] = jvec(model.spec.lengthscales);
    j["variance"] = model.spec.variance;
    j["nugget"] = model.spec.nugget;
    j["C"] = jmat(est.C);
    j["eigvals"] = jvec(est.eigvals);
    j["eigvecs"] = jmat(est.eigvecs);
    j["suggested_r"] = suggested;
    j["r"] = chosen;
    j["U"] = jmat(sub.U);
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "subspace.json", j.dump(2) + "\n");
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

}  // namespace asub
