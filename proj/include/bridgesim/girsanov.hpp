#ifndef BRIDGESIM_GIRSANOV_HPP
#define BRIDGESIM_GIRSANOV_HPP

#include <vector>

#include "bridgesim/core.hpp"

/**
 * \file
 * \brief Case 2 and generic change-of-measure log weights: the Girsanov
 *        functional for a drift perturbation, the bounded-drift bridge weight,
 *        the unbounded-drift bridge weight, and the singular bridge drifts.
 */

namespace bridgesim {

// ---------------------------------------------------------------------------
// Generic Girsanov log weight
// ---------------------------------------------------------------------------

/// log weight sum_i h*(t_i, x_i) dw_i - 1/2 sum_i |h(t_i, x_i)|^2 dt_i for a
/// path driven by the recorded Brownian increments dw.
inline double girsanov_log_weight(const VectorField& h, const Path& path,
                                  const std::vector<Vec>& dw) {
  const std::size_t K = path.grid.intervals();
  if (dw.size() != K)
    throw std::invalid_argument(
        "girsanov_log_weight: increment count does not match the path grid");
  const Eigen::Index m = dw.empty() ? 0 : dw.front().size();
  double acc = 0.0;
  Vec hval(m);
  for (std::size_t i = 0; i < K; ++i) {
    if (dw[i].size() != m)
      throw std::invalid_argument("girsanov_log_weight: ragged increments");
    h(path.grid.node(i), path.values.col(static_cast<Eigen::Index>(i)), hval);
    if (!hval.allFinite())
      throw evaluation_error("girsanov_log_weight: h(t,x) non-finite");
    acc += hval.dot(dw[i]) - 0.5 * hval.squaredNorm() * path.grid.dt(i);
  }
  return acc;
}

// ---------------------------------------------------------------------------
// Inverse diffusion matrix A(t,y) = sigma^{-*} sigma^{-1}
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kSigmaConditionLimit = 1e12;

/// Computes A = sigma^{-*} sigma^{-1} by solving against sigma (no explicit
/// inverse), with a condition-number guard.
inline void inverse_diffusion(const Mat& sigma, Mat& A, double t) {
  const Eigen::Index d = sigma.rows();
  if (d == 1) {
    const double s = sigma(0, 0);
    if (std::abs(s) < 1.0 / kSigmaConditionLimit || !std::isfinite(s))
      throw numeric_error("sigma(t,y) numerically singular at t=" + std::to_string(t));
    A(0, 0) = 1.0 / (s * s);
    return;
  }
  Eigen::PartialPivLU<Mat> lu(sigma);
  const double rcond = lu.rcond();
  if (!(rcond > 1.0 / kSigmaConditionLimit))
    throw numeric_error("sigma(t,y) numerically singular at t=" + std::to_string(t) +
                        " (rcond " + std::to_string(rcond) + ")");
  const Mat sig_inv = lu.solve(Mat::Identity(d, d));
  A = sig_inv.transpose() * sig_inv;
}

}  // namespace detail

/// A(t,y) = sigma(t,y)^{-*} sigma(t,y)^{-1}, computed by linear solves with a
/// condition-number guard (invertibility is enforced numerically).
inline Mat inverse_diffusion_matrix(const GeneralModel& model, double t,
                                    Eigen::Ref<const Vec> y) {
  Mat sigma(model.d, model.d);
  model.sigma(t, y, sigma);
  if (!sigma.allFinite())
    throw evaluation_error("sigma(t,y) non-finite at t=" + std::to_string(t));
  Mat A(model.d, model.d);
  detail::inverse_diffusion(sigma, A, t);
  return A;
}

// ---------------------------------------------------------------------------
// Case-2 bridge drift
// ---------------------------------------------------------------------------

/// Bridge drift b(t,y) - (y - v)/(T - t), or just the pull term when the
/// drift is dropped from the proposal (unbounded-drift weighting).
inline Vec case2_bridge_drift(const GeneralModel& model,
                              const BridgeProblem& problem, double t,
                              Eigen::Ref<const Vec> y, bool include_b) {
  if (!(t < problem.T))
    throw std::invalid_argument("case2_bridge_drift: requires t < T");
  Vec out = (problem.v - y) / (problem.T - t);
  if (include_b) {
    Vec b(model.d);
    model.drift(t, y, b);
    out += b;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Case-2 log weights
// ---------------------------------------------------------------------------

/// Additive breakdown of a Case-2 log weight. `total` is always the exact
/// arithmetic sum of the applicable parts.
struct Case2WeightBreakdown {
  double term_drift = 0.0;   ///< sum y~* A b dt / (T-t) part (bounded case)
  double term_dA = 0.0;      ///< combined y~*(dA)y~ + covariation part
  double term_ito_b = 0.0;   ///< sum (b* A) dy part (unbounded case)
  double term_quad_b = 0.0;  ///< -1/2 sum |sigma^{-1} b|^2 dt part (unbounded case)
  double total = 0.0;
};

namespace detail {

inline void require_pinned(const BridgeProblem& problem, const Path& y) {
  const Eigen::Index K = static_cast<Eigen::Index>(y.grid.intervals());
  const double gap = (y.values.col(K) - problem.v).norm();
  if (gap > 1e-12 * (1.0 + problem.v.norm()))
    throw std::invalid_argument(
        "case2 weight: path is not pinned at v (|y_T - v| = " +
        std::to_string(gap) + ")");
}

/// The combined dA-plus-covariation term, discretized as
///   sum_{k: t_k < T} y~_k* (A_k - A_{k-1}) y~_k / (2 (T - t_k)).
/// The k = K summand is identically zero (y~_K = 0) and is skipped, which is
/// what keeps the (T-t)^{-1} singularity out of the sum.
inline double dA_term(const GeneralModel& model, const BridgeProblem& problem,
                      const Path& y) {
  const std::size_t K = y.grid.intervals();
  const double T = problem.T;
  double acc = 0.0;
  Mat sigma(model.d, model.d), A_prev(model.d, model.d), A_cur(model.d, model.d);
  Vec ytil(model.d);

  auto eval_A = [&](std::size_t k, Mat& A) {
    const double t = y.grid.node(k);
    model.sigma(t, y.values.col(static_cast<Eigen::Index>(k)), sigma);
    if (!sigma.allFinite())
      throw evaluation_error("case2 weight: sigma(t,y) non-finite");
    inverse_diffusion(sigma, A, t);
  };

  eval_A(0, A_prev);
  for (std::size_t k = 1; k < K; ++k) {  // t_k < T only
    eval_A(k, A_cur);
    ytil = y.values.col(static_cast<Eigen::Index>(k)) - problem.v;
    acc += ytil.dot((A_cur - A_prev) * ytil) / (2.0 * (T - y.grid.node(k)));
    std::swap(A_prev, A_cur);
  }
  return acc;
}

}  // namespace detail

/// Bounded-drift bridge weight: minus the discretized integral
///   int (2 y~* A b dt + y~*(dA)y~ + covariation) / (2(T-t)),
/// with the drift part at left endpoints and the dA part per detail::dA_term.
inline Case2WeightBreakdown case2_bounded_log_weight(const GeneralModel& model,
                                                     const BridgeProblem& problem,
                                                     const Path& y) {
  detail::require_pinned(problem, y);
  const std::size_t K = y.grid.intervals();
  const double T = problem.T;
  Case2WeightBreakdown out;

  Mat sigma(model.d, model.d), A(model.d, model.d);
  Vec b(model.d), ytil(model.d);
  double drift_acc = 0.0;
  for (std::size_t k = 1; k <= K; ++k) {
    const double tprev = y.grid.node(k - 1);
    const auto yprev = y.values.col(static_cast<Eigen::Index>(k - 1));
    model.sigma(tprev, yprev, sigma);
    if (!sigma.allFinite())
      throw evaluation_error("case2 weight: sigma(t,y) non-finite");
    detail::inverse_diffusion(sigma, A, tprev);
    model.drift(tprev, yprev, b);
    if (!b.allFinite())
      throw evaluation_error("case2 weight: b(t,y) non-finite");
    ytil = yprev - problem.v;
    drift_acc += ytil.dot(A * b) * (y.grid.dt(k - 1) / (T - tprev));
  }
  out.term_drift = drift_acc;
  out.term_dA = detail::dA_term(model, problem, y);
  out.total = -(out.term_drift + out.term_dA);
  return out;
}

/// Unbounded-drift bridge weight: same dA term (no drift term inside it),
/// plus the left-endpoint Ito sum of (b* A) dy and the quadratic penalty
/// -1/2 int |sigma^{-1} b|^2 dt.
inline Case2WeightBreakdown case2_unbounded_log_weight(
    const GeneralModel& model, const BridgeProblem& problem, const Path& y) {
  detail::require_pinned(problem, y);
  const std::size_t K = y.grid.intervals();
  Case2WeightBreakdown out;
  out.term_dA = detail::dA_term(model, problem, y);

  Mat sigma(model.d, model.d), A(model.d, model.d);
  Vec b(model.d), dy(model.d);
  double ito = 0.0, quad = 0.0;
  for (std::size_t k = 1; k <= K; ++k) {
    const double tprev = y.grid.node(k - 1);
    const auto yprev = y.values.col(static_cast<Eigen::Index>(k - 1));
    model.sigma(tprev, yprev, sigma);
    if (!sigma.allFinite())
      throw evaluation_error("case2 weight: sigma(t,y) non-finite");
    detail::inverse_diffusion(sigma, A, tprev);
    model.drift(tprev, yprev, b);
    if (!b.allFinite())
      throw evaluation_error("case2 weight: b(t,y) non-finite");
    dy = y.values.col(static_cast<Eigen::Index>(k)) - yprev;
    ito += b.dot(A * dy);
    // |sigma^{-1} b|^2 = b* A b
    quad += b.dot(A * b) * y.grid.dt(k - 1);
  }
  out.term_ito_b = ito;
  out.term_quad_b = -0.5 * quad;
  out.total = -out.term_dA + out.term_ito_b + out.term_quad_b;
  return out;
}

}  // namespace bridgesim

#endif  // BRIDGESIM_GIRSANOV_HPP
