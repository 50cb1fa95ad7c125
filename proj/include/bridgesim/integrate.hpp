#ifndef BRIDGESIM_INTEGRATE_HPP
#define BRIDGESIM_INTEGRATE_HPP

#include <optional>
#include <vector>

#include "bridgesim/core.hpp"
#include "bridgesim/girsanov.hpp"
#include "bridgesim/rng.hpp"

/**
 * \file
 * \brief Euler-Maruyama integration for general SDEs and singular bridge SDEs,
 *        with endpoint pinning and reproducible counter-based noise.
 */

namespace bridgesim {

constexpr double kBlowupThreshold = 1e8;

/// Path together with the driving Brownian increments, for Girsanov reuse.
struct EulerResult {
  Path path;
  std::vector<Vec> dw;  ///< K increments, dw[i] ~ N(0, dt_i Id_m)
};

/// Explicit Euler: x_{i+1} = x_i + drift(t_i, x_i) dt_i + diffusion(t_i, x_i) dw_i.
///
/// If `pin` is set the final value is overwritten with it (the drift may then
/// be singular at T but must be finite at interior nodes, so the last Euler
/// step from t_{K-1} is replaced by the pin). Throws blowup_error when the
/// state becomes non-finite or leaves |x| <= 1e8.
inline EulerResult euler(const VectorField& drift, const MatrixField& diffusion,
                         const Vec& x0, const TimeGrid& grid,
                         const NoiseStream& noise,
                         const Vec* pin = nullptr, int noise_dim = -1) {
  const std::size_t K = grid.intervals();
  const int d = static_cast<int>(x0.size());
  const int m = noise_dim > 0 ? noise_dim : d;

  EulerResult out;
  out.path = Path(grid, d);
  out.path.values.col(0) = x0;
  out.dw.resize(K);

  Vec z(m), b(d);
  Mat sig(d, m);
  const std::size_t last_euler = pin ? K - 1 : K;
  for (std::size_t i = 0; i < K; ++i) {
    const double dt = grid.dt(i);
    noise.gaussians(i, z);
    out.dw[i] = std::sqrt(dt) * z;
    if (i >= last_euler) break;
    const double t = grid.node(i);
    const auto x = out.path.values.col(static_cast<Eigen::Index>(i));
    drift(t, x, b);
    diffusion(t, x, sig);
    out.path.values.col(static_cast<Eigen::Index>(i + 1)) =
        x + b * dt + sig * out.dw[i];
    const auto next = out.path.values.col(static_cast<Eigen::Index>(i + 1));
    if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kBlowupThreshold)
      throw blowup_error("euler: state blew up at t=" + std::to_string(grid.node(i + 1)),
                         grid.node(i + 1));
  }
  if (pin) out.path.values.col(static_cast<Eigen::Index>(K)) = *pin;
  return out;
}

// ---------------------------------------------------------------------------
// Case-2 bridge sampling
// ---------------------------------------------------------------------------

/// Bridge sample plus diagnostics. A blown-up path carries log weight -inf
/// (and a placeholder path) instead of aborting the batch.
struct Case2Sample {
  WeightedSample sample;
  Case2WeightBreakdown breakdown;
  double pre_pin_gap = 0.0;   ///< |y_{t_{K-1}} - v| of the last Euler state
  bool endpoint_flagged = false;  ///< pre-pin gap beyond the iterated-log rate
  bool blew_up = false;
};

namespace detail {

/// Diagnostic threshold 10 sqrt(mesh log log(1/mesh + e)) (1 + |v|), the only
/// quantitative handle on how close the unpinned endpoint should be to v.
inline double endpoint_rate_threshold(double mesh, double vnorm) {
  const double ll = std::log(std::log(1.0 / mesh + std::exp(1.0)));
  return 10.0 * std::sqrt(mesh * std::max(ll, 0.0)) * (1.0 + vnorm);
}

}  // namespace detail

/// Integrates the pinned bridge SDE and attaches the matching log weight:
/// include_b = true keeps b in the proposal drift and uses the bounded-drift
/// weight; include_b = false drops b and uses the unbounded-drift weight.
inline Case2Sample sample_case2_bridge_detailed(const GeneralModel& model,
                                                const BridgeProblem& problem,
                                                const TimeGrid& grid,
                                                const NoiseStream& noise,
                                                bool include_b) {
  if (std::abs(grid.T() - problem.T) > 1e-12 * (1.0 + problem.T))
    throw std::invalid_argument("sample_case2_bridge: grid horizon != problem horizon");

  Case2Sample out;
  VectorField drift = [&, b = Vec(model.d)](double t, Eigen::Ref<const Vec> y,
                                            Eigen::Ref<Vec> o) mutable {
    o = (problem.v - y) / (problem.T - t);
    if (include_b) {
      model.drift(t, y, b);
      o += b;
    }
  };

  EulerResult er;
  try {
    er = euler(drift, model.sigma, problem.u, grid, noise, &problem.v);
  } catch (const blowup_error&) {
    // Report the path as degenerate rather than aborting the whole batch.
    out.blew_up = true;
    Path flat(grid, model.d);
    for (std::size_t i = 0; i < grid.size(); ++i)
      flat.values.col(static_cast<Eigen::Index>(i)) = problem.v;
    flat.values.col(0) = problem.u;
    out.sample = {std::move(flat), -std::numeric_limits<double>::infinity()};
    return out;
  }

  const Eigen::Index Km1 = static_cast<Eigen::Index>(grid.intervals()) - 1;
  out.pre_pin_gap = (er.path.values.col(Km1) - problem.v).norm();
  out.endpoint_flagged =
      out.pre_pin_gap >
      detail::endpoint_rate_threshold(grid.mesh(), problem.v.norm());

  out.breakdown = include_b
                      ? case2_bounded_log_weight(model, problem, er.path)
                      : case2_unbounded_log_weight(model, problem, er.path);
  out.sample = {std::move(er.path), out.breakdown.total};
  return out;
}

inline WeightedSample sample_case2_bridge(const GeneralModel& model,
                                          const BridgeProblem& problem,
                                          const TimeGrid& grid,
                                          const NoiseStream& noise,
                                          bool include_b) {
  return sample_case2_bridge_detailed(model, problem, grid, noise, include_b).sample;
}

}  // namespace bridgesim

#endif  // BRIDGESIM_INTEGRATE_HPP
