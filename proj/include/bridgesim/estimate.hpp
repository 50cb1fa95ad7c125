#ifndef BRIDGESIM_ESTIMATE_HPP
#define BRIDGESIM_ESTIMATE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>
#include <vector>

#include "bridgesim/core.hpp"
#include "bridgesim/gaussbridge.hpp"
#include "bridgesim/integrate.hpp"
#include "bridgesim/rng.hpp"

/**
 * \file
 * \brief Self-normalized importance-sampling estimation, weight diagnostics,
 *        and multi-segment posterior path sampling between observations.
 */

namespace bridgesim {

using PathFunctional = std::function<double(const Path&)>;
using VectorPathFunctional = std::function<Vec(const Path&)>;

// ---------------------------------------------------------------------------
// Self-normalized estimator
// ---------------------------------------------------------------------------

/// Output of the ratio estimator sum w_i f_i / sum w_i. The normalizing
/// constant of the underlying change of measure cancels, so only log-weight
/// differences matter (max-subtraction is applied before exponentiation).
struct ISResult {
  Vec estimate;   ///< componentwise ratio estimate
  Vec std_error;  ///< delta-method standard error, same shape
  double ess = 0.0;
  int n_paths = 0;
  int n_degenerate = 0;  ///< -inf log weights; kept in n_paths, excluded from sums

  double value() const { return estimate[0]; }
  double error() const { return std_error[0]; }
};

/// Ratio estimate from precomputed functional values (one column per path)
/// and the matching log weights.
inline ISResult self_normalized_from_values(const Mat& fvals,
                                            const std::vector<double>& logw) {
  const int n = static_cast<int>(logw.size());
  if (fvals.cols() != n)
    throw std::invalid_argument("self_normalized_from_values: size mismatch");

  double max_lw = -std::numeric_limits<double>::infinity();
  int n_finite = 0;
  for (double lw : logw) {
    if (std::isinf(lw) && lw > 0)
      throw std::invalid_argument("self_normalized_from_values: +inf log weight");
    if (std::isfinite(lw)) {
      ++n_finite;
      max_lw = std::max(max_lw, lw);
    } else if (!std::isinf(lw)) {
      throw std::invalid_argument("self_normalized_from_values: NaN log weight");
    }
  }
  if (n < 2)
    throw estimation_error("self_normalized_from_values: need at least 2 samples");
  if (n_finite == 0)
    throw estimation_error("self_normalized_from_values: all weights degenerate");

  const Eigen::Index q = fvals.rows();
  double wsum = 0.0, w2sum = 0.0;
  Vec num = Vec::Zero(q);
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(logw[i])) continue;
    const double w = std::exp(logw[i] - max_lw);
    wsum += w;
    w2sum += w * w;
    num += w * fvals.col(i);
  }

  ISResult res;
  res.estimate = num / wsum;
  res.ess = wsum * wsum / w2sum;
  res.n_paths = n;
  res.n_degenerate = n - n_finite;

  // Delta method for the ratio estimator.
  Vec var = Vec::Zero(q);
  for (int i = 0; i < n; ++i) {
    if (!std::isfinite(logw[i])) continue;
    const double wn = std::exp(logw[i] - max_lw) / wsum;
    var += (wn * wn) * (fvals.col(i) - res.estimate).cwiseAbs2();
  }
  res.std_error = var.cwiseSqrt();
  return res;
}

inline ISResult self_normalized_estimate(const VectorPathFunctional& f,
                                         const std::vector<WeightedSample>& samples) {
  if (samples.size() < 2)
    throw estimation_error("self_normalized_estimate: need at least 2 samples");
  std::vector<double> logw(samples.size());
  Mat fvals;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    logw[i] = samples[i].log_weight;
    const Vec fv = f(samples[i].path);
    if (fvals.size() == 0) fvals.resize(fv.size(), static_cast<Eigen::Index>(samples.size()));
    fvals.col(static_cast<Eigen::Index>(i)) = fv;
  }
  return self_normalized_from_values(fvals, logw);
}

inline ISResult self_normalized_estimate(const PathFunctional& f,
                                         const std::vector<WeightedSample>& samples) {
  return self_normalized_estimate(
      [&f](const Path& p) { return Vec::Constant(1, f(p)); }, samples);
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

struct WeightDiagnostics {
  double logw_mean = 0.0;
  double logw_variance = 0.0;
  double logw_spread = 0.0;  ///< max - min over finite log weights
  double ess = 0.0;
  double ess_fraction = 0.0;
  int n_paths = 0;
  int n_degenerate = 0;
};

inline WeightDiagnostics weight_diagnostics(const std::vector<double>& logw) {
  if (logw.empty())
    throw std::invalid_argument("weight_diagnostics: empty sample set");
  WeightDiagnostics d;
  d.n_paths = static_cast<int>(logw.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  double s = 0.0, s2 = 0.0;
  double max_lw = -std::numeric_limits<double>::infinity();
  int nf = 0;
  for (double lw : logw) {
    if (!std::isfinite(lw)) {
      ++d.n_degenerate;
      continue;
    }
    ++nf;
    s += lw;
    s2 += lw * lw;
    lo = std::min(lo, lw);
    hi = std::max(hi, lw);
    max_lw = std::max(max_lw, lw);
  }
  if (nf > 0) {
    d.logw_mean = s / nf;
    d.logw_variance = std::max(0.0, s2 / nf - d.logw_mean * d.logw_mean);
    d.logw_spread = hi - lo;
    double wsum = 0.0, w2sum = 0.0;
    for (double lw : logw) {
      if (!std::isfinite(lw)) continue;
      const double w = std::exp(lw - max_lw);
      wsum += w;
      w2sum += w * w;
    }
    d.ess = wsum * wsum / w2sum;
    d.ess_fraction = d.ess / d.n_paths;
  }
  return d;
}

inline WeightDiagnostics weight_diagnostics(const std::vector<WeightedSample>& samples) {
  std::vector<double> logw(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) logw[i] = samples[i].log_weight;
  return weight_diagnostics(logw);
}

/// Cross-refinement stability: |estimate_a - estimate_b| vs combined sigma.
struct RefinementCheck {
  double delta = 0.0;
  double combined_sigma = 0.0;
  bool consistent = false;
};

inline RefinementCheck refinement_check(const ISResult& a, const ISResult& b,
                                        double n_sigma = 3.0) {
  RefinementCheck rc;
  rc.delta = std::abs(a.value() - b.value());
  rc.combined_sigma = std::hypot(a.error(), b.error());
  rc.consistent = rc.delta <= n_sigma * rc.combined_sigma;
  return rc;
}

/// Explicit multinomial resampling by weight (never applied implicitly).
/// Returns n_out indices into the sample set.
inline std::vector<int> multinomial_resample(const std::vector<double>& logw,
                                             int n_out, const NoiseStream& noise) {
  double max_lw = -std::numeric_limits<double>::infinity();
  for (double lw : logw)
    if (std::isfinite(lw)) max_lw = std::max(max_lw, lw);
  if (!std::isfinite(max_lw))
    throw estimation_error("multinomial_resample: all weights degenerate");
  std::vector<double> cdf(logw.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < logw.size(); ++i) {
    if (std::isfinite(logw[i])) acc += std::exp(logw[i] - max_lw);
    cdf[i] = acc;
  }
  std::vector<int> out(static_cast<std::size_t>(n_out));
  for (int k = 0; k < n_out; ++k) {
    // uniform from the Gaussian stream's underlying counter
    const double g = noise.gaussian(static_cast<std::uint64_t>(k), 0);
    const double u = 0.5 * std::erfc(-g / std::sqrt(2.0));  // Phi(g) ~ U(0,1)
    const double target = u * acc;
    out[k] = static_cast<int>(
        std::lower_bound(cdf.begin(), cdf.end(), target) - cdf.begin());
    out[k] = std::min<int>(out[k], static_cast<int>(logw.size()) - 1);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-segment posterior sampling
// ---------------------------------------------------------------------------

/// Observations (t_j, v_j) with 0 < t_1 < ... < t_n, plus the initial value u
/// at time 0.
struct ObservationSet {
  Vec u;
  std::vector<double> times;
  std::vector<Vec> values;

  void validate() const {
    if (times.size() != values.size() || times.empty())
      throw std::invalid_argument("ObservationSet: times/values mismatch");
    double prev = 0.0;
    for (std::size_t j = 0; j < times.size(); ++j) {
      if (!(times[j] > prev))
        throw std::invalid_argument("ObservationSet: times must be strictly increasing");
      prev = times[j];
      if (values[j].size() != u.size())
        throw std::invalid_argument("ObservationSet: inconsistent dimensions");
    }
  }
};

enum class Method {
  Case1Transform,
  Case1Sde,
  Case2Bounded,
  Case2Unbounded,
  Bridge2dClosed,
  Bridge2dSde,
};

using AnyModel = std::variant<LinearModel, GeneralModel>;

namespace detail {

/// Shift a model's time origin by t0 (segment-local clocks start at 0).
inline LinearModel shift_time(const LinearModel& m, double t0) {
  LinearModel out = m;
  out.A = [f = m.A, t0](double t, Eigen::Ref<Mat> o) { f(t + t0, o); };
  out.b = [f = m.b, t0](double t, Eigen::Ref<Vec> o) { f(t + t0, o); };
  out.sigma = [f = m.sigma, t0](double t, Eigen::Ref<Mat> o) { f(t + t0, o); };
  if (m.h)
    out.h = [f = m.h, t0](double t, Eigen::Ref<const Vec> x, Eigen::Ref<Vec> o) {
      f(t + t0, x, o);
    };
  if (m.sigma_plus)
    out.sigma_plus = [f = m.sigma_plus, t0](double t, Eigen::Ref<Mat> o) {
      f(t + t0, o);
    };
  return out;
}

inline GeneralModel shift_time(const GeneralModel& m, double t0) {
  GeneralModel out = m;
  out.drift = [f = m.drift, t0](double t, Eigen::Ref<const Vec> x,
                                Eigen::Ref<Vec> o) { f(t + t0, x, o); };
  out.sigma = [f = m.sigma, t0](double t, Eigen::Ref<const Vec> x,
                                Eigen::Ref<Mat> o) { f(t + t0, x, o); };
  return out;
}

}  // namespace detail

/// One weighted posterior draw: independent bridges per observation segment,
/// concatenated, with the per-segment log weights summed. The draw is
/// weighted; unweighted posterior samples require resampling by weight.
inline WeightedSample sample_posterior_path(const AnyModel& model,
                                            const ObservationSet& obs,
                                            int steps_per_segment,
                                            const NoiseStream& noise,
                                            Method method) {
  obs.validate();
  const int d = static_cast<int>(obs.u.size());
  const std::size_t n_seg = obs.times.size();

  std::vector<Path> segments(n_seg);
  double total_logw = 0.0;
  double t0 = 0.0;
  Vec start = obs.u;
  for (std::size_t j = 0; j < n_seg; ++j) {
    const double horizon = obs.times[j] - t0;
    const TimeGrid grid = make_uniform_grid(horizon, steps_per_segment);
    const BridgeProblem seg_problem(start, obs.values[j], horizon);
    const NoiseStream seg_noise = noise.child(j);

    switch (method) {
      case Method::Case1Transform:
      case Method::Case1Sde: {
        const auto& lm = std::get<LinearModel>(model);
        const GaussianBridgeKit kit =
            make_kit(detail::shift_time(lm, t0), seg_problem, grid);
        segments[j] = (method == Method::Case1Transform)
                          ? condition_path(kit, sample_xi(kit, seg_noise))
                          : sample_bridge_sde(kit, seg_noise);
        total_logw += case1_log_weight(kit, segments[j]);
        break;
      }
      case Method::Case2Bounded:
      case Method::Case2Unbounded: {
        const auto& gm = std::get<GeneralModel>(model);
        const WeightedSample ws = sample_case2_bridge(
            detail::shift_time(gm, t0), seg_problem, grid, seg_noise,
            method == Method::Case2Bounded);
        segments[j] = ws.path;
        total_logw += ws.log_weight;
        break;
      }
      default:
        throw std::invalid_argument(
            "sample_posterior_path: unsupported method for segment sampling");
    }
    t0 = obs.times[j];
    start = obs.values[j];
  }

  // Concatenate on a global grid, dropping duplicated segment boundaries.
  std::vector<double> nodes;
  nodes.push_back(0.0);
  std::size_t total_nodes = 1;
  for (const auto& seg : segments) total_nodes += seg.grid.intervals();
  nodes.reserve(total_nodes);

  Path out;
  Mat values(d, static_cast<Eigen::Index>(total_nodes));
  values.col(0) = obs.u;
  Eigen::Index col = 1;
  double offset = 0.0;
  for (const auto& seg : segments) {
    for (std::size_t i = 1; i < seg.grid.size(); ++i) {
      nodes.push_back(offset + seg.grid.node(i));
      values.col(col++) = seg.values.col(static_cast<Eigen::Index>(i));
    }
    offset = nodes.back();
  }
  out.grid = TimeGrid(std::move(nodes));
  out.values = std::move(values);
  return {std::move(out), total_logw};
}

}  // namespace bridgesim

#endif  // BRIDGESIM_ESTIMATE_HPP
