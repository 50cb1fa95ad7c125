#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bridgesim/runner.hpp"

using namespace bridgesim;

namespace {

const char* kBrownianConfig = R"cfg({
  "model": {"kind": "linear", "dimension": 1, "noise_dimension": 1,
            "A": [[0]], "b": [0], "sigma": [[1]]},
  "bridge": {"u": [0.0], "v": [1.0], "T": 1.0},
  "functional": {"kind": "at-time", "coordinate": 1, "time": 0.5},
  "run": {"paths": 500, "steps": 50, "seed": 42, "grid": "uniform",
          "method": "case1-transform"}
})cfg";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("parse_config: linear round trip") {
  const RunConfig cfg = parse_config_text(kBrownianConfig);
  CHECK(cfg.kind == ModelKind::Linear);
  CHECK(cfg.dimension == 1);
  CHECK(cfg.paths == 500);
  CHECK(cfg.steps == 50);
  CHECK(cfg.seed == 42);
  CHECK(cfg.method == Method::Case1Transform);
  CHECK(cfg.T == 1.0);
  CHECK(cfg.hash != 0);

  const LinearModel lm = cfg.linear_model();
  CHECK(lm.sigma_at(0.3)(0, 0) == 1.0);
  CHECK(lm.A_at(0.3)(0, 0) == 0.0);
  CHECK_THROWS_AS(cfg.general_model(), config_error);
}

TEST_CASE("parse_config: general model with expressions") {
  const RunConfig cfg = parse_config_text(R"cfg({
    "model": {"kind": "general", "dimension": 1,
              "b": ["sin(x1)"], "sigma": [["1 + 0.5*tanh(x1)"]],
              "drift_bounded": false},
    "bridge": {"u": [0.0], "v": [1.0], "T": 1.0},
    "run": {"paths": 10, "steps": 10, "seed": 1, "method": "case2-unbounded"}
  })cfg");
  const GeneralModel gm = cfg.general_model();
  CHECK(gm.drift_at(0.0, Vec::Zero(1))[0] == 0.0);
  CHECK(gm.sigma_at(0.0, Vec::Zero(1))(0, 0) == 1.0);
  CHECK(gm.drift_at(0.0, Vec::Constant(1, 1.0))[0] == doctest::Approx(std::sin(1.0)));
  CHECK(!gm.drift_bounded);
}

TEST_CASE("parse_config: rejects inconsistent input") {
  // method/model mismatch
  CHECK_THROWS_AS(parse_config_text(R"cfg({
    "model": {"kind": "general", "dimension": 1, "b": [0], "sigma": [[1]]},
    "bridge": {"u": [0], "v": [1], "T": 1.0},
    "run": {"paths": 10, "steps": 10, "method": "case1-transform"}
  })cfg"), config_error);
  // bad dimension of v
  CHECK_THROWS_AS(parse_config_text(R"cfg({
    "model": {"kind": "general", "dimension": 2,
              "b": [0, 0], "sigma": [[1, 0], [0, 1]]},
    "bridge": {"u": [0, 0], "v": [1], "T": 1.0},
    "run": {"paths": 10, "steps": 10, "method": "case2-bounded"}
  })cfg"), config_error);
  // state-dependent entry in a deterministic coefficient
  CHECK_THROWS_AS(parse_config_text(R"cfg({
    "model": {"kind": "linear", "dimension": 1, "A": [["x1"]], "b": [0],
              "sigma": [[1]]},
    "bridge": {"u": [0], "v": [1], "T": 1.0},
    "run": {"paths": 10, "steps": 10, "method": "case1-transform"}
  })cfg"), config_error);
  // bridge2d requires d = 2
  CHECK_THROWS_AS(parse_config_text(R"cfg({
    "model": {"kind": "linear", "dimension": 1, "A": [[0]], "b": [0],
              "sigma": [[1]]},
    "bridge": {"u": [0], "v": [1], "T": 1.0},
    "run": {"paths": 10, "steps": 10, "method": "bridge2d-closed"}
  })cfg"), config_error);
  // expression syntax error
  CHECK_THROWS_AS(parse_config_text(R"cfg({
    "model": {"kind": "linear", "dimension": 1, "A": [["1 +"]], "b": [0],
              "sigma": [[1]]},
    "bridge": {"u": [0], "v": [1], "T": 1.0},
    "run": {"paths": 10, "steps": 10, "method": "case1-transform"}
  })cfg"), config_error);
  // not JSON at all
  CHECK_THROWS_AS(parse_config_text("not json"), config_error);
}

TEST_CASE("make_functional: built-ins") {
  Path p(make_uniform_grid(1.0, 4), 2);
  for (std::size_t i = 0; i <= 4; ++i) {
    p.values(0, static_cast<Eigen::Index>(i)) = static_cast<double>(i);
    p.values(1, static_cast<Eigen::Index>(i)) = 1.0;
  }

  FunctionalSpec terminal;
  terminal.kind = FunctionalSpec::Kind::Terminal;
  terminal.coordinate = 1;
  CHECK(make_functional(terminal)(p) == 4.0);

  FunctionalSpec at;
  at.kind = FunctionalSpec::Kind::AtTime;
  at.coordinate = 2;
  at.time = 0.5;
  CHECK(make_functional(at)(p) == 1.0);

  FunctionalSpec integral;
  integral.kind = FunctionalSpec::Kind::Integral;
  integral.integrand = expr::parse("x1 + t");
  // trapezoid of (x1(t) + t) where x1 = 4t: integral of 5t over [0,1] = 2.5
  CHECK(make_functional(integral)(p) == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("run_estimate: writes result JSON and is reproducible byte for byte") {
  const auto dir = std::filesystem::temp_directory_path() / "bridgesim_test_est";
  std::filesystem::remove_all(dir);
  RunConfig cfg = parse_config_text(kBrownianConfig);
  RunOptions opts;
  opts.out_dir_override = dir.string();

  const json a = run_estimate(cfg, opts);
  const std::string file_a = slurp(dir / "estimate.json");
  CHECK(a.contains("estimate"));
  CHECK(a.contains("std_error"));
  CHECK(a.contains("ess"));
  CHECK(a.contains("n_paths"));
  CHECK(a.contains("n_degenerate"));
  CHECK(a.contains("method"));
  CHECK(a.contains("seed"));
  CHECK(a.contains("config_hash"));
  CHECK(a["n_paths"] == 500);
  CHECK(std::abs(a["estimate"].get<double>() - 0.5) <
        3.0 * a["std_error"].get<double>());

  const json b = run_estimate(cfg, opts);
  CHECK(slurp(dir / "estimate.json") == file_a);
  CHECK(a == b);

  // thread count must not change the result
  RunOptions opts4 = opts;
  opts4.threads = 4;
  CHECK(run_estimate(cfg, opts4) == a);
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_sample: CSV shape and provenance header") {
  const auto dir = std::filesystem::temp_directory_path() / "bridgesim_test_csv";
  std::filesystem::remove_all(dir);
  RunConfig cfg = parse_config_text(kBrownianConfig);
  RunOptions opts;
  opts.out_dir_override = dir.string();
  opts.paths_override = 3;
  opts.steps_override = 4;
  run_sample(cfg, opts);

  std::ifstream is(dir / "paths.csv");
  REQUIRE(is.good());
  std::string line;
  std::getline(is, line);
  CHECK(line.find("config_hash=") != std::string::npos);
  CHECK(line.find("seed=42") != std::string::npos);
  std::getline(is, line);
  CHECK(line == "path_id,t,x1,log_weight");
  int rows = 0;
  while (std::getline(is, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 3 * 5);  // 3 paths x (K+1) nodes
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_check: Brownian pass report") {
  RunConfig cfg = parse_config_text(kBrownianConfig);
  RunOptions opts;
  const json rep = run_check(cfg, opts);
  CHECK(rep["pass"] == true);
  CHECK(rep["controllability"]["pass"] == true);
  // min eigenvalue of M(t_i) over interior nodes = last interval length
  CHECK(std::abs(rep["controllability"]["min_eigenvalue"].get<double>() - 0.02) < 1e-10);
}
