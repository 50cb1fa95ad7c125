#ifndef BRIDGESIM_RUNNER_HPP
#define BRIDGESIM_RUNNER_HPP

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "bridgesim/config.hpp"
#include "bridgesim/gaussbridge.hpp"
#include "bridgesim/integrate.hpp"
#include "bridgesim/oracle.hpp"

/**
 * \file
 * \brief Command implementations behind the CLI: check, sample, estimate,
 *        oracle, diagnose. Kept in the library so they are testable without
 *        spawning the binary.
 */

namespace bridgesim {

struct RunOptions {
  long paths_override = -1;
  int steps_override = -1;
  std::optional<std::uint64_t> seed_override;
  std::string out_dir_override;
  int threads = 0;  ///< 0 = hardware concurrency
  bool deterministic_reduce = false;
};

namespace detail {

inline int log_level() {
  static const int level = [] {
    const char* env = std::getenv("BRIDGESIM_LOG");
    if (!env) return 1;
    const std::string s = env;
    if (s == "quiet" || s == "0") return 0;
    if (s == "debug" || s == "2") return 2;
    return 1;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= 1) std::fprintf(stderr, "[bridgesim] %s\n", msg.c_str());
}
inline void log_debug(const std::string& msg) {
  if (log_level() >= 2) std::fprintf(stderr, "[bridgesim] %s\n", msg.c_str());
}

inline int effective_threads(const RunOptions& opts) {
  if (opts.threads > 0) return opts.threads;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

/// Runs fn(i) for i in [0, n) on `threads` workers by contiguous blocks.
/// Results must be written into per-index slots; the reduction over those
/// slots is always sequential, so outputs do not depend on the schedule.
template <typename Fn>
void parallel_for(long n, int threads, Fn&& fn) {
  if (threads <= 1 || n < 2) {
    for (long i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  const long chunk = (n + threads - 1) / threads;
  std::exception_ptr first_error;
  std::mutex err_mutex;
  for (int w = 0; w < threads; ++w) {
    const long lo = w * chunk;
    const long hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (long i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-method sampling engine
// ---------------------------------------------------------------------------

/// Bound sampler for one configured run: owns the models/kits and produces
/// the i-th weighted path as a pure function of (seed, i).
class BridgeSampler {
 public:
  BridgeSampler(const RunConfig& cfg, std::uint64_t seed, int steps)
      : method_(cfg.method), seed_(seed), grid_(cfg.make_grid(steps)) {
    problem_ = cfg.problem();
    switch (method_) {
      case Method::Case1Transform:
      case Method::Case1Sde:
        kit_ = make_kit(cfg.linear_model(), problem_, grid_);
        break;
      case Method::Bridge2dClosed:
      case Method::Bridge2dSde: {
        LinearModel lm = cfg.linear_model();
        validate_bridge2d_shape(lm);
        noise_scale_ = lm.sigma_at(0.0)(1, 0);
        kit_ = make_kit(std::move(lm), problem_, grid_);
        break;
      }
      case Method::Case2Bounded:
      case Method::Case2Unbounded:
        general_ = cfg.general_model();
        break;
    }
  }

  const TimeGrid& grid() const { return grid_; }

  WeightedSample sample(long path_index) const {
    const NoiseStream ns(seed_, static_cast<std::uint64_t>(path_index));
    switch (method_) {
      case Method::Case1Transform: {
        Path p = condition_path(*kit_, sample_xi(*kit_, ns));
        const double w = weight_case1(p);
        return {std::move(p), w};
      }
      case Method::Case1Sde: {
        Path p = sample_bridge_sde(*kit_, ns);
        const double w = weight_case1(p);
        return {std::move(p), w};
      }
      case Method::Bridge2dClosed: {
        Path p = bridge2d_closed_form(problem_.u, problem_.v, noise_scale_, grid_, ns);
        const double w = weight_case1(p);
        return {std::move(p), w};
      }
      case Method::Bridge2dSde: {
        Path p = sample_bridge2d_sde(problem_.u, problem_.v, noise_scale_, grid_, ns);
        const double w = weight_case1(p);
        return {std::move(p), w};
      }
      case Method::Case2Bounded:
        return sample_case2_bridge(*general_, problem_, grid_, ns, true);
      case Method::Case2Unbounded:
        return sample_case2_bridge(*general_, problem_, grid_, ns, false);
    }
    throw std::logic_error("BridgeSampler: corrupt method");
  }

 private:
  double weight_case1(const Path& p) const { return case1_log_weight(*kit_, p); }

  static void validate_bridge2d_shape(const LinearModel& lm) {
    if (lm.d != 2 || lm.m != 1)
      throw config_error("bridge2d methods need d=2, noise_dimension=1");
    Mat expected(2, 2);
    expected << 0, 1, 0, 0;
    for (double t : {0.0, 0.37, 0.91}) {
      if ((lm.A_at(t) - expected).cwiseAbs().maxCoeff() > 1e-12 ||
          lm.b_at(t).cwiseAbs().maxCoeff() > 1e-12)
        throw config_error(
            "bridge2d methods require A = [[0,1],[0,0]] and b = 0");
      const Mat sig = lm.sigma_at(t);
      if (std::abs(sig(0, 0)) > 1e-12)
        throw config_error("bridge2d methods require sigma = (0, s)^T");
    }
    const double s0 = lm.sigma_at(0.0)(1, 0);
    for (double t : {0.37, 0.91})
      if (std::abs(lm.sigma_at(t)(1, 0) - s0) > 1e-12)
        throw config_error("bridge2d closed form requires constant noise scale");
    if (s0 == 0.0) throw config_error("bridge2d: noise scale must be nonzero");
  }

  Method method_;
  std::uint64_t seed_;
  TimeGrid grid_;
  BridgeProblem problem_;
  std::optional<GaussianBridgeKit> kit_;
  std::optional<GeneralModel> general_;
  double noise_scale_ = 0.0;
};

// ---------------------------------------------------------------------------
// Batch estimation
// ---------------------------------------------------------------------------

struct BatchValues {
  std::vector<double> logw;
  std::vector<double> fval;
};

inline BatchValues run_batch(const BridgeSampler& sampler, const PathFunctional& f,
                             long n, int threads) {
  BatchValues out;
  out.logw.assign(static_cast<std::size_t>(n), 0.0);
  out.fval.assign(static_cast<std::size_t>(n), 0.0);
  detail::parallel_for(n, threads, [&](long i) {
    const WeightedSample ws = sampler.sample(i);
    out.logw[static_cast<std::size_t>(i)] = ws.log_weight;
    out.fval[static_cast<std::size_t>(i)] =
        ws.degenerate() ? 0.0 : f(ws.path);
  });
  return out;
}

inline ISResult estimate_from_batch(const BatchValues& batch) {
  Mat fvals(1, static_cast<Eigen::Index>(batch.fval.size()));
  for (std::size_t i = 0; i < batch.fval.size(); ++i)
    fvals(0, static_cast<Eigen::Index>(i)) = batch.fval[i];
  return self_normalized_from_values(fvals, batch.logw);
}

// ---------------------------------------------------------------------------
// Output writers
// ---------------------------------------------------------------------------

inline void write_paths_csv(std::ostream& os,
                            const std::vector<WeightedSample>& samples,
                            std::uint64_t config_hash, std::uint64_t seed) {
  os << "# bridgesim paths; config_hash=" << detail::hash_hex(config_hash)
     << " seed=" << seed << "\n";
  os << "path_id,t";
  const int d = samples.empty() ? 0 : samples.front().path.dim();
  for (int c = 1; c <= d; ++c) os << ",x" << c;
  os << ",log_weight\n";
  for (std::size_t p = 0; p < samples.size(); ++p) {
    const auto& ws = samples[p];
    for (std::size_t i = 0; i < ws.path.grid.size(); ++i) {
      os << p << ',' << detail::fmt17(ws.path.grid.node(i));
      for (int c = 0; c < d; ++c)
        os << ',' << detail::fmt17(ws.path.values(c, static_cast<Eigen::Index>(i)));
      os << ',' << detail::fmt17(ws.log_weight) << "\n";
    }
  }
}

inline json result_json(const ISResult& res, const RunConfig& cfg,
                        std::uint64_t seed) {
  json j;
  j["estimate"] = res.value();
  j["std_error"] = res.error();
  j["ess"] = res.ess;
  j["n_paths"] = res.n_paths;
  j["n_degenerate"] = res.n_degenerate;
  j["method"] = method_name(cfg.method);
  j["seed"] = seed;
  j["config_hash"] = detail::hash_hex(cfg.hash);
  return j;
}

inline void write_text_file(const std::filesystem::path& path,
                            const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file " + path.string());
  os << text;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

namespace detail {

inline void resolve(const RunConfig& cfg, const RunOptions& opts, long& n,
                    int& steps, std::uint64_t& seed, std::filesystem::path& out_dir) {
  n = opts.paths_override > 0 ? opts.paths_override : cfg.paths;
  steps = opts.steps_override > 0 ? opts.steps_override : cfg.steps;
  seed = opts.seed_override.value_or(cfg.seed);
  out_dir = opts.out_dir_override.empty() ? cfg.out_dir : opts.out_dir_override;
  std::filesystem::create_directories(out_dir);
}

/// State lattice for the sigma invertibility probe: 7 points per coordinate
/// spanning [min(u_i,v_i) - 3, max(u_i,v_i) + 3]; full product up to d = 3,
/// axis sweeps around the midpoint beyond that.
inline std::vector<Vec> probe_lattice(const RunConfig& cfg) {
  const int d = cfg.dimension;
  const int npts = 7;
  std::vector<std::vector<double>> axes(d);
  Vec mid(d);
  for (int c = 0; c < d; ++c) {
    const double lo = std::min(cfg.u[c], cfg.v[c]) - 3.0;
    const double hi = std::max(cfg.u[c], cfg.v[c]) + 3.0;
    mid[c] = 0.5 * (lo + hi);
    for (int k = 0; k < npts; ++k)
      axes[c].push_back(lo + (hi - lo) * k / (npts - 1));
  }
  std::vector<Vec> pts;
  if (d <= 3) {
    long total = 1;
    for (int c = 0; c < d; ++c) total *= npts;
    for (long idx = 0; idx < total; ++idx) {
      long rem = idx;
      Vec x(d);
      for (int c = 0; c < d; ++c) {
        x[c] = axes[c][rem % npts];
        rem /= npts;
      }
      pts.push_back(x);
    }
  } else {
    for (int c = 0; c < d; ++c)
      for (int k = 0; k < npts; ++k) {
        Vec x = mid;
        x[c] = axes[c][k];
        pts.push_back(x);
      }
  }
  return pts;
}

}  // namespace detail

/// `check`: config validation plus model health probes.
inline json run_check(const RunConfig& cfg, const RunOptions& opts) {
  long n;
  int steps;
  std::uint64_t seed;
  std::filesystem::path out_dir;
  detail::resolve(cfg, opts, n, steps, seed, out_dir);
  const TimeGrid grid = cfg.make_grid(steps);

  json report;
  report["config_hash"] = detail::hash_hex(cfg.hash);
  report["seed"] = seed;
  report["method"] = method_name(cfg.method);
  report["grid"] = {{"steps", steps}, {"mesh", grid.mesh()}, {"T", grid.T()}};

  if (cfg.kind == ModelKind::Linear) {
    const LinearModel lm = cfg.linear_model();
    const CovarianceTable table = covariance_table(lm, grid);
    const ControllabilityReport rep = check_controllable(table);
    report["controllability"] = {{"min_eigenvalue", rep.min_eigenvalue},
                                 {"argmin_time", rep.argmin_time},
                                 {"tol", rep.tol},
                                 {"pass", rep.pass}};
    double sp_err = 0.0;
    for (double t : {0.0, 0.5 * cfg.T, grid.node(grid.intervals() - 1)}) {
      const Mat prod = lm.sigma_plus_at(t) * lm.sigma_at(t);
      sp_err = std::max(sp_err,
                        (prod - Mat::Identity(lm.m, lm.m)).cwiseAbs().maxCoeff());
    }
    report["sigma_left_inverse_error"] = sp_err;
    report["pass"] = rep.pass && sp_err <= 1e-10;
  } else {
    const GeneralModel gm = cfg.general_model();
    double min_rcond = std::numeric_limits<double>::infinity();
    json worst;
    for (const Vec& x : detail::probe_lattice(cfg)) {
      for (double t : {0.0, 0.5 * cfg.T, grid.node(grid.intervals() - 1)}) {
        const Mat sig = gm.sigma_at(t, x);
        double rcond;
        if (gm.d == 1) {
          rcond = std::abs(sig(0, 0));
        } else {
          Eigen::PartialPivLU<Mat> lu(sig);
          rcond = lu.rcond();
        }
        if (rcond < min_rcond) {
          min_rcond = rcond;
          worst = {{"t", t}, {"x", std::vector<double>(x.data(), x.data() + x.size())}};
        }
      }
    }
    report["sigma_probe"] = {{"min_rcond", min_rcond}, {"worst_point", worst}};
    report["pass"] = min_rcond > 1e-12;
  }

  if (!report["pass"].get<bool>())
    throw numeric_error("check failed: " + report.dump());
  write_text_file(out_dir / "check.json", report.dump(2) + "\n");
  return report;
}

/// `sample`: emit paths as CSV, ordered by path index.
inline json run_sample(const RunConfig& cfg, const RunOptions& opts) {
  long n;
  int steps;
  std::uint64_t seed;
  std::filesystem::path out_dir;
  detail::resolve(cfg, opts, n, steps, seed, out_dir);

  const BridgeSampler sampler(cfg, seed, steps);
  std::vector<WeightedSample> samples(static_cast<std::size_t>(n));
  detail::parallel_for(n, detail::effective_threads(opts),
                       [&](long i) { samples[static_cast<std::size_t>(i)] = sampler.sample(i); });

  std::ostringstream os;
  write_paths_csv(os, samples, cfg.hash, seed);
  write_text_file(out_dir / "paths.csv", os.str());
  detail::log_info("wrote " + (out_dir / "paths.csv").string());

  json j;
  j["paths"] = n;
  j["file"] = (out_dir / "paths.csv").string();
  return j;
}

/// `estimate`: self-normalized conditional-expectation estimate as JSON.
inline json run_estimate(const RunConfig& cfg, const RunOptions& opts) {
  long n;
  int steps;
  std::uint64_t seed;
  std::filesystem::path out_dir;
  detail::resolve(cfg, opts, n, steps, seed, out_dir);

  const BridgeSampler sampler(cfg, seed, steps);
  const PathFunctional f = make_functional(cfg.functional);
  const BatchValues batch =
      run_batch(sampler, f, n, detail::effective_threads(opts));
  const ISResult res = estimate_from_batch(batch);
  const json j = result_json(res, cfg, seed);
  write_text_file(out_dir / "estimate.json", j.dump(2) + "\n");
  detail::log_info("estimate " + std::to_string(res.value()) + " +/- " +
                   std::to_string(res.error()));
  return j;
}

/// `oracle`: estimator vs an independent reference, as a comparison JSON.
inline json run_oracle(const RunConfig& cfg, const RunOptions& opts) {
  long n;
  int steps;
  std::uint64_t seed;
  std::filesystem::path out_dir;
  detail::resolve(cfg, opts, n, steps, seed, out_dir);
  if (!cfg.oracle) throw config_error("oracle command needs an 'oracle' section");

  const BridgeSampler sampler(cfg, seed, steps);
  const PathFunctional f = make_functional(cfg.functional);
  const BatchValues batch =
      run_batch(sampler, f, n, detail::effective_threads(opts));
  const ISResult res = estimate_from_batch(batch);

  json j;
  j["estimate"] = result_json(res, cfg, seed);

  double oracle_value = 0.0, oracle_se = 0.0;
  if (cfg.oracle->kind == OracleSpec::Kind::Rejection) {
    if (cfg.kind != ModelKind::General)
      throw config_error("rejection oracle requires a general model");
    const GeneralModel gm = cfg.general_model();
    double eps = cfg.oracle->epsilon;
    if (eps <= 0.0) {
      const Mat sig0 = gm.sigma_at(0.0, cfg.u);
      eps = default_rejection_epsilon(cfg.T, sig0.norm());
    }
    const TimeGrid fine = cfg.make_grid(steps * cfg.oracle->grid_factor);
    const RejectionResult rr =
        rejection_conditional(gm, cfg.problem(), f, eps, cfg.oracle->paths, fine,
                              seed + 0x0A11CE, detail::effective_threads(opts));
    oracle_value = rr.estimate;
    oracle_se = rr.std_error;
    j["oracle"] = {{"kind", "rejection"},
                   {"estimate", rr.estimate},
                   {"std_error", rr.std_error},
                   {"accepted", rr.accepted},
                   {"n_paths", rr.n_paths},
                   {"epsilon", rr.epsilon}};
  } else {
    if (cfg.kind != ModelKind::Linear || !cfg.h_lin.empty())
      throw config_error("gaussian oracle requires a linear model with h = 0");
    if (cfg.functional.kind == FunctionalSpec::Kind::Integral)
      throw config_error("gaussian oracle supports terminal / at-time functionals");
    const TimeGrid grid = cfg.make_grid(steps);
    const ConditionedGaussianLaw law =
        gaussian_conditioning_oracle(cfg.linear_model(), cfg.problem(), grid);
    const double t = cfg.functional.kind == FunctionalSpec::Kind::Terminal
                         ? cfg.T
                         : cfg.functional.time;
    oracle_value = law.mean_at(t)[cfg.functional.coordinate - 1];
    oracle_se = 0.0;
    j["oracle"] = {{"kind", "gaussian"}, {"estimate", oracle_value}, {"std_error", 0.0}};
  }

  const double combined = std::hypot(res.error(), oracle_se);
  j["comparison"] = {{"difference", res.value() - oracle_value},
                     {"combined_sigma", combined},
                     {"z", combined > 0 ? (res.value() - oracle_value) / combined : 0.0},
                     {"consistent", std::abs(res.value() - oracle_value) <= 3 * combined}};
  write_text_file(out_dir / "oracle.json", j.dump(2) + "\n");
  return j;
}

/// `diagnose`: weight diagnostics plus a cross-refinement (K vs 2K) study.
inline json run_diagnose(const RunConfig& cfg, const RunOptions& opts) {
  long n;
  int steps;
  std::uint64_t seed;
  std::filesystem::path out_dir;
  detail::resolve(cfg, opts, n, steps, seed, out_dir);
  const PathFunctional f = make_functional(cfg.functional);
  const int threads = detail::effective_threads(opts);

  auto study = [&](int K) {
    const BridgeSampler sampler(cfg, seed, K);
    const BatchValues batch = run_batch(sampler, f, n, threads);
    const WeightDiagnostics d = weight_diagnostics(batch.logw);
    json jd = {{"steps", K},
               {"logw_mean", d.logw_mean},
               {"logw_variance", d.logw_variance},
               {"logw_spread", d.logw_spread},
               {"ess", d.ess},
               {"ess_fraction", d.ess_fraction},
               {"n_paths", d.n_paths},
               {"n_degenerate", d.n_degenerate}};
    return std::make_pair(jd, estimate_from_batch(batch));
  };

  auto [coarse_diag, coarse_res] = study(steps);
  auto [fine_diag, fine_res] = study(2 * steps);
  const RefinementCheck rc = refinement_check(coarse_res, fine_res);

  json j;
  j["config_hash"] = detail::hash_hex(cfg.hash);
  j["seed"] = seed;
  j["coarse"] = coarse_diag;
  j["fine"] = fine_diag;
  j["cross_refinement"] = {{"estimate_coarse", coarse_res.value()},
                           {"estimate_fine", fine_res.value()},
                           {"delta", rc.delta},
                           {"combined_sigma", rc.combined_sigma},
                           {"consistent", rc.consistent}};
  write_text_file(out_dir / "diagnose.json", j.dump(2) + "\n");
  return j;
}

}  // namespace bridgesim

#endif  // BRIDGESIM_RUNNER_HPP
