#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "asub/experiment.hpp"
#include "asub/rng.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace asub;
namespace fs = std::filesystem;
using njson = nlohmann::json;

namespace {

fs::path test_root() {
  static fs::path root = [] {
    fs::path p = fs::temp_directory_path() / "asub_test_cli";
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  out << content;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string tiny_config(const std::string& out_dir, const std::string& extra = "") {
  return "[experiment]\n"
         "benchmark = rank1\n"
         "m = 2\n"
         "kernel = gaussian\n"
         "criteria = var2,random,mc_fd,ols,ll\n"
         "n0 = 6\n"
         "budget = 10\n"
         "n_trials = 2\n"
         "seed = 7\n"
         "refit_every = 2\n" +
         extra +
         "[acquisition]\n"
         "restarts = 4\n"
         "warm_restarts = 2\n"
         "[output]\n"
         "dir = " +
         out_dir + "\n";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

CsvTable parse_csv(const std::string& text) {
  CsvTable t;
  std::istringstream in(text);
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
      if (c == ',') {
        fields.push_back(cur);
        cur.clear();
      } else {
        cur += c;
      }
    }
    fields.push_back(cur);
    if (first) {
      t.header = fields;
      first = false;
    } else {
      t.rows.push_back(fields);
    }
  }
  return t;
}

}  // namespace

TEST_CASE("config parser: values, comments, short kernel names") {
  const fs::path p = test_root() / "cfg" / "full.toml";
  write_file(p,
             "# full exercise\n"
             "[experiment]\n"
             "benchmark = rank1   # trailing comment\n"
             "m = 5\n"
             "kernel = m52\n"
             "criteria = trace, var2\n"
             "n0 = 10\n"
             "budget = 20\n"
             "n_trials = 3\n"
             "seed = 123\n"
             "noise_sd = 0.001\n"
             "refit_every = 4\n"
             "noiseless_fit = false\n"
             "fd_step = 1e-3\n"
             "\n"
             "[acquisition]\n"
             "n_candidates = 50\n"
             "n_local = 2\n"
             "restarts = 6\n"
             "warm_restarts = 1\n"
             "[uq]\n"
             "n_draws = 99\n"
             "levels = 0.9, 0.99\n"
             "n = 15, 25\n"
             "[reference]\n"
             "source = fd_mc\n"
             "evals = 500\n"
             "r = 2\n"
             "[output]\n"
             "dir = somewhere\n"
             "timing = true\n");
  const ExperimentConfig cfg = parse_config(p.string());
  CHECK(cfg.benchmark == "rank1");
  CHECK(cfg.m == 5);
  CHECK(cfg.family == KernelFamily::Matern52);
  CHECK(cfg.criteria == std::vector<std::string>{"trace", "var2"});
  CHECK(cfg.n0 == 10);
  CHECK(cfg.budget == 20);
  CHECK(cfg.n_trials == 3);
  CHECK(cfg.seed == 123);
  CHECK(cfg.noise_sd == doctest::Approx(0.001));
  CHECK(cfg.refit_every == 4);
  CHECK(cfg.noiseless_fit == false);
  CHECK(cfg.fd_step == doctest::Approx(1e-3));
  CHECK(cfg.acq.n_candidates == 50);
  CHECK(cfg.acq.n_local == 2);
  CHECK(cfg.acq.restarts == 6);
  CHECK(cfg.acq.warm_restarts == 1);
  CHECK(cfg.uq.n_draws == 99);
  CHECK(cfg.uq.levels == std::vector<double>{0.9, 0.99});
  CHECK(cfg.uq.design_sizes == std::vector<int>{15, 25});
  CHECK(cfg.ref.source == "fd_mc");
  CHECK(cfg.ref.evals == 500);
  CHECK(cfg.ref.r == 2);
  CHECK(cfg.out.dir == "somewhere");
  CHECK(cfg.out.timing == true);
  cfg.validate_run();  // no throw
}

TEST_CASE("config parser: errors carry the offending line") {
  const fs::path dir = test_root() / "cfg";
  auto expect_line = [&](const std::string& content, int line) {
    const fs::path p = dir / "err.toml";
    write_file(p, content);
    try {
      parse_config(p.string());
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(e.line == line);
      CHECK(std::string(e.what()).find(":" + std::to_string(line) + ":") != std::string::npos);
    }
  };
  expect_line("[experiment]\nbenchmark = rank1\nwat = 1\n", 3);
  expect_line("[nonsense]\n", 1);
  expect_line("[experiment]\nm = twelve\n", 2);
  expect_line("[experiment]\nno equals sign here\n", 2);
  expect_line("key = 1\n", 1);  // before any section
  expect_line("[experiment]\nkernel = cubic\n", 2);
  expect_line("[output]\ntiming = yes\n", 2);

  CHECK_THROWS_AS(parse_config((dir / "missing.toml").string()), ConfigError);
}

TEST_CASE("config validation: run invariants") {
  const fs::path p = test_root() / "cfg" / "val.toml";
  auto parse_with = [&](const std::string& body) {
    write_file(p, body);
    return parse_config(p.string());
  };
  // budget must exceed n0
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = rank1\nm = 2\ncriteria = var2\n"
                             "n0 = 10\nbudget = 10\n")
                      .validate_run(),
                  ConfigError);
  // criteria must be non-empty and known
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = rank1\nm = 2\nn0 = 5\nbudget = 9\n")
                      .validate_run(),
                  ConfigError);
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = rank1\nm = 2\ncriteria = var3\n"
                             "n0 = 5\nbudget = 9\n")
                      .validate_run(),
                  ConfigError);
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = rank1\nm = 2\ncriteria = var2,var2\n"
                             "n0 = 5\nbudget = 9\n")
                      .validate_run(),
                  ConfigError);
  // rank1 needs m; fixed-dimension benchmarks reject a contradicting m
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = rank1\ncriteria = var2\n"
                             "n0 = 5\nbudget = 9\n")
                      .validate_run(),
                  ConfigError);
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = wing\nm = 3\ncriteria = var2\n"
                             "n0 = 5\nbudget = 9\n")
                      .validate_run(),
                  ConfigError);
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = hockey\nm = 2\ncriteria = var2\n"
                             "n0 = 5\nbudget = 9\n")
                      .validate_run(),
                  ConfigError);
  // uq settings
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = testfun2d\n[uq]\nlevels = 1.5\n")
                      .validate_uq(),
                  ConfigError);
  CHECK_THROWS_AS(parse_with("[experiment]\nbenchmark = testfun2d\n[uq]\nn = 2\n").validate_uq(),
                  ConfigError);
}

TEST_CASE("config hash: canonical identity ignores the output location") {
  const fs::path p1 = test_root() / "cfg" / "h1.toml";
  const fs::path p2 = test_root() / "cfg" / "h2.toml";
  write_file(p1, tiny_config("dirA"));
  write_file(p2, tiny_config("dirB"));
  const ExperimentConfig a = parse_config(p1.string());
  const ExperimentConfig b = parse_config(p2.string());
  CHECK(a.hash_hex() == b.hash_hex());
  CHECK(a.hash_hex().size() == 16);

  ExperimentConfig c = a;
  c.seed = 8;
  CHECK(c.hash_hex() != a.hash_hex());
  ExperimentConfig d = a;
  d.out.timing = true;  // timing changes file contents, so it is part of identity
  CHECK(d.hash_hex() != a.hash_hex());
}

TEST_CASE("formatting helpers") {
  CHECK(format_double(std::numeric_limits<double>::quiet_NaN()) == "nan");
  CHECK(format_double(0.5) == "0.5");
  const double v = 0.1234567890123456789;
  CHECK(std::stod(format_double(v)) == v);  // round-trip exact

  CHECK(csv_field("plain") == "plain");
  CHECK(csv_field("a,b") == "\"a,b\"");
  CHECK(csv_field("say \"hi\"") == "\"say \"\"hi\"\"\"");

  CHECK(quantile_sorted({1.0, 2.0, 3.0, 4.0}, 0.5) == doctest::Approx(2.5));
  CHECK(quantile_sorted({1.0, 2.0, 3.0}, 0.0) == 1.0);
  CHECK(quantile_sorted({1.0, 2.0, 3.0}, 1.0) == 3.0);
  CHECK(quantile_sorted({1.0, 2.0, 3.0, 4.0, 5.0}, 0.25) == doctest::Approx(2.0));
  CHECK(std::isnan(quantile_sorted({}, 0.5)));
}

TEST_CASE("cmd_run: row accounting, method coverage, monotone eval counts") {
  const fs::path dir = test_root() / "runA";
  const fs::path cfg_path = test_root() / "cfg" / "runA.toml";
  write_file(cfg_path, tiny_config(dir.string()));
  ExperimentConfig cfg = parse_config(cfg_path.string());
  REQUIRE(cmd_run(cfg, 1) == 0);

  const CsvTable t = parse_csv(read_file(dir / "results.csv"));
  REQUIRE(t.header == std::vector<std::string>{"trial", "method", "eval_count", "subspace_error",
                                               "wall_ms", "eigvals", "config_hash"});
  const int expected = 2 * 5 * (10 - 6 + 1);
  CHECK(static_cast<int>(t.rows.size()) == expected);

  std::map<std::pair<std::string, int>, std::vector<int>> evals;
  for (const auto& r : t.rows) {
    REQUIRE(r.size() == 7);
    CHECK(r[6] == cfg.hash_hex());
    CHECK(r[4] == "0");  // timing off by default
    evals[{r[1], std::stoi(r[0])}].push_back(std::stoi(r[2]));
  }
  CHECK(evals.size() == 10);  // 5 methods × 2 trials
  for (const auto& [key, es] : evals) {
    REQUIRE(static_cast<int>(es.size()) == 10 - 6 + 1);
    for (size_t i = 0; i + 1 < es.size(); ++i) CHECK(es[i] < es[i + 1]);
    CHECK(es.front() == 6);
    CHECK(es.back() == 10);
  }

  // sequential arms carry eigenvalue spectra; the ols arm has none
  for (const auto& r : t.rows) {
    if (r[1] == "var2" || r[1] == "random") CHECK(r[5].find(';') != std::string::npos);
    if (r[1] == "ols") CHECK(r[5].empty());
  }
}

TEST_CASE("cmd_run: byte-identical artifacts across reruns and thread counts") {
  const fs::path d1 = test_root() / "det1";
  const fs::path d2 = test_root() / "det2";
  const fs::path d3 = test_root() / "det3";
  const fs::path cfg_path = test_root() / "cfg" / "det.toml";
  write_file(cfg_path, tiny_config(d1.string()));
  ExperimentConfig cfg = parse_config(cfg_path.string());
  REQUIRE(cmd_run(cfg, 1) == 0);
  cfg.out.dir = d2.string();
  REQUIRE(cmd_run(cfg, 1) == 0);
  cfg.out.dir = d3.string();
  REQUIRE(cmd_run(cfg, 4) == 0);

  CHECK(read_file(d1 / "results.csv") == read_file(d2 / "results.csv"));
  CHECK(read_file(d1 / "run.json") == read_file(d2 / "run.json"));
  CHECK(read_file(d1 / "summary.json") == read_file(d2 / "summary.json"));
  CHECK(read_file(d1 / "results.csv") == read_file(d3 / "results.csv"));
  CHECK(read_file(d1 / "run.json") == read_file(d3 / "run.json"));
  CHECK(read_file(d1 / "summary.json") == read_file(d3 / "summary.json"));

  // rerunning into the same directory is allowed (same config)
  cfg.out.dir = d1.string();
  CHECK(cmd_run(cfg, 1) == 0);
  // a different seed is a different experiment: the directory is rejected
  cfg.seed = 99;
  CHECK(cmd_run(cfg, 1) == 2);
}

TEST_CASE("cmd_run: summary quantiles reconstruct exactly from the CSV") {
  const fs::path dir = test_root() / "runA";  // artifacts from the accounting test
  const CsvTable t = parse_csv(read_file(dir / "results.csv"));
  const njson summary = njson::parse(read_file(dir / "summary.json"));

  std::map<std::string, std::map<int, std::vector<double>>> grouped;
  for (const auto& r : t.rows) {
    const double err = r[3] == "nan" ? std::numeric_limits<double>::quiet_NaN() : std::stod(r[3]);
    if (std::isfinite(err)) grouped[r[1]][std::stoi(r[2])].push_back(err);
  }
  const auto& evals = summary.at("eval_counts");
  for (const auto& [method, per_eval] : summary.at("methods").items()) {
    for (size_t i = 0; i < evals.size(); ++i) {
      const int e = evals[i].get<int>();
      auto vals = grouped[method].count(e) ? grouped[method][e] : std::vector<double>{};
      std::sort(vals.begin(), vals.end());
      const auto& med = per_eval.at("median")[i];
      const auto& q25 = per_eval.at("q25")[i];
      const auto& q75 = per_eval.at("q75")[i];
      CHECK(per_eval.at("n_finite")[i].get<int>() == static_cast<int>(vals.size()));
      if (vals.empty()) {
        CHECK(med.is_null());
        CHECK(q25.is_null());
        CHECK(q75.is_null());
      } else {
        CHECK(med.get<double>() == quantile_sorted(vals, 0.5));
        CHECK(q25.get<double>() == quantile_sorted(vals, 0.25));
        CHECK(q75.get<double>() == quantile_sorted(vals, 0.75));
      }
    }
  }
}

TEST_CASE("cmd_run: finite-difference arm charges m+1 evaluations per gradient") {
  const fs::path dir = test_root() / "runFd";
  const fs::path cfg_path = test_root() / "cfg" / "runFd.toml";
  // m = 5: one FD gradient costs 6 evaluations, so rows below 6 are undefined
  write_file(cfg_path,
             "[experiment]\n"
             "benchmark = rank1\n"
             "m = 5\n"
             "criteria = mc_fd,ll\n"
             "n0 = 4\n"
             "budget = 13\n"
             "n_trials = 1\n"
             "seed = 3\n"
             "[output]\n"
             "dir = " +
                 dir.string() + "\n");
  REQUIRE(cmd_run(parse_config(cfg_path.string()), 1) == 0);
  const CsvTable t = parse_csv(read_file(dir / "results.csv"));
  std::map<int, std::string> fd_err;
  int ll_nan = 0, ll_rows = 0;
  for (const auto& r : t.rows) {
    if (r[1] == "mc_fd") fd_err[std::stoi(r[2])] = r[3];
    if (r[1] == "ll") {
      ++ll_rows;
      if (r[3] == "nan") ++ll_nan;
    }
  }
  for (int e = 4; e <= 5; ++e) CHECK(fd_err[e] == "nan");  // zero complete gradients
  for (int e = 6; e <= 13; ++e) CHECK(fd_err[e] != "nan");
  // one gradient for e in [6,11], two from 12: the error value changes there
  CHECK(fd_err[6] == fd_err[11]);
  CHECK(fd_err[12] != fd_err[11]);
  CHECK(fd_err[12] == fd_err[13]);
  // the local-linear arm needs 3m = 15 points and the budget stops at 13
  CHECK(ll_rows == 10);
  CHECK(ll_nan == 10);
}

TEST_CASE("cmd_uq: tables on disk, dual-emit equality, determinism") {
  const fs::path dir = test_root() / "uqA";
  const fs::path cfg_path = test_root() / "cfg" / "uqA.toml";
  const std::string body =
      "[experiment]\n"
      "benchmark = testfun2d\n"
      "kernel = gaussian\n"
      "seed = 3\n"
      "noise_sd = 5e-5\n"
      "[acquisition]\n"
      "restarts = 4\n"
      "[uq]\n"
      "n_draws = 60\n"
      "levels = 0.95,0.99\n"
      "n = 10,16\n"
      "[output]\n"
      "dir = " +
      dir.string() + "\n";
  write_file(cfg_path, body);
  ExperimentConfig cfg = parse_config(cfg_path.string());
  REQUIRE(cmd_uq(cfg) == 0);

  const CsvTable t = parse_csv(read_file(dir / "uq.csv"));
  REQUIRE(t.header ==
          std::vector<std::string>{"n", "index", "point", "lo95", "hi95", "lo99", "hi99",
                                   "config_hash"});
  REQUIRE(t.rows.size() == 4);  // two design sizes × two eigenvalues

  const njson j = njson::parse(read_file(dir / "uq.json"));
  CHECK(j.at("config_hash").get<std::string>() == cfg.hash_hex());
  REQUIRE(j.at("tables").size() == 2);
  size_t row = 0;
  for (const auto& table : j.at("tables")) {
    const int n = table.at("n").get<int>();
    for (size_t idx = 0; idx < table.at("point").size(); ++idx, ++row) {
      CHECK(std::stoi(t.rows[row][0]) == n);
      CHECK(std::stoi(t.rows[row][1]) == static_cast<int>(idx));
      // CSV and JSON carry bit-identical numbers
      CHECK(std::stod(t.rows[row][2]) == table.at("point")[idx].get<double>());
      CHECK(std::stod(t.rows[row][3]) == table.at("intervals").at("95").at("lo")[idx].get<double>());
      CHECK(std::stod(t.rows[row][4]) == table.at("intervals").at("95").at("hi")[idx].get<double>());
      CHECK(std::stod(t.rows[row][5]) == table.at("intervals").at("99").at("lo")[idx].get<double>());
      CHECK(std::stod(t.rows[row][6]) == table.at("intervals").at("99").at("hi")[idx].get<double>());
      // interval nesting
      CHECK(std::stod(t.rows[row][5]) <= std::stod(t.rows[row][3]));
      CHECK(std::stod(t.rows[row][4]) <= std::stod(t.rows[row][6]));
    }
  }

  const fs::path dir2 = test_root() / "uqB";
  cfg.out.dir = dir2.string();
  REQUIRE(cmd_uq(cfg) == 0);
  CHECK(read_file(dir / "uq.csv") == read_file(dir2 / "uq.csv"));
  CHECK(read_file(dir / "uq.json") == read_file(dir2 / "uq.json"));
}

TEST_CASE("cmd_estimate: estimation from CSV, diagnostics, edge dimensions") {
  const fs::path dir = test_root() / "est";
  const fs::path data = dir / "data.csv";

  // quadratic in a single known direction; n = 40 points on a seeded grid
  std::ostringstream csv;
  csv << "x1,x2,y\n";
  Rng rng(31);
  for (int i = 0; i < 40; ++i) {
    const double a = rng.uniform(), b = rng.uniform();
    csv << a << ',' << b << ',' << (3.0 * b * b) << "\n";
  }
  write_file(data, csv.str());
  REQUIRE(cmd_estimate(data.string(), "g", 1, (dir / "out").string()) == 0);
  const njson j = njson::parse(read_file(dir / "out" / "subspace.json"));
  CHECK(j.at("m").get<int>() == 2);
  CHECK(j.at("n").get<int>() == 40);
  CHECK(j.at("r").get<int>() == 1);
  const double loading = std::abs(j.at("U")[1][0].get<double>());
  CHECK(loading > 0.99);
  CHECK(j.at("eigvals")[0].get<double>() > j.at("eigvals")[1].get<double>());
  CHECK(j.at("data_hash").get<std::string>().size() == 16);

  // single input column
  std::ostringstream one;
  one << "x1,y\n";
  for (int i = 0; i <= 10; ++i) one << (0.05 + 0.09 * i) << ',' << (0.05 + 0.09 * i) * 2.0 << "\n";
  write_file(dir / "one.csv", one.str());
  REQUIRE(cmd_estimate((dir / "one.csv").string(), "m52", 0, (dir / "out1").string()) == 0);
  const njson j1 = njson::parse(read_file(dir / "out1" / "subspace.json"));
  CHECK(j1.at("m").get<int>() == 1);
  CHECK(j1.at("C").size() == 1);
  CHECK(std::abs(j1.at("U")[0][0].get<double>()) == doctest::Approx(1.0).epsilon(1e-12));

  // malformed inputs exit with code 2
  write_file(dir / "badhdr.csv", "a,b\n0.1,0.2\n");
  CHECK(cmd_estimate((dir / "badhdr.csv").string(), "g", 1, (dir / "o2").string()) == 2);
  write_file(dir / "badnum.csv", "x1,y\n0.1,fish\n0.2,1\n0.3,2\n0.4,3\n");
  CHECK(cmd_estimate((dir / "badnum.csv").string(), "g", 1, (dir / "o3").string()) == 2);
  write_file(dir / "badrange.csv", "x1,y\n1.4,1\n0.2,1\n0.3,2\n0.4,3\n");
  CHECK(cmd_estimate((dir / "badrange.csv").string(), "g", 1, (dir / "o4").string()) == 2);
  write_file(dir / "short.csv", "x1,y\n0.1,1\n0.2,2\n");
  CHECK(cmd_estimate((dir / "short.csv").string(), "g", 1, (dir / "o5").string()) == 2);
  CHECK(cmd_estimate((dir / "nothere.csv").string(), "g", 1, (dir / "o6").string()) == 2);
  CHECK(cmd_estimate(data.string(), "cubic", 1, (dir / "o7").string()) == 2);
  CHECK(cmd_estimate(data.string(), "g", 5, (dir / "o8").string()) == 2);
}

#ifdef ASUB_BIN
TEST_CASE("binary: subcommand exit codes through the real executable") {
  const fs::path dir = test_root() / "bin";
  const fs::path cfg_path = dir / "t.toml";
  write_file(cfg_path, tiny_config((dir / "out").string(),
                                   "") );
  auto run = [](const std::string& args) {
    const std::string cmd = std::string(ASUB_BIN) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
  };
  CHECK(run("") == 2);                    // missing subcommand
  CHECK(run("frobnicate") == 2);          // unknown subcommand
  CHECK(run("run missing.toml") == 2);    // unreadable config
  CHECK(run("--help") == 0);
  const fs::path bad = dir / "bad.toml";
  write_file(bad, "[experiment]\nwat = 1\n");
  CHECK(run("run " + bad.string()) == 2);
}
#endif
