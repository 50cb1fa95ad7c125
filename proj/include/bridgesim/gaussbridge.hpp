#ifndef BRIDGESIM_GAUSSBRIDGE_HPP
#define BRIDGESIM_GAUSSBRIDGE_HPP

#include <utility>
#include <vector>

#include "bridgesim/core.hpp"
#include "bridgesim/linalg.hpp"
#include "bridgesim/rng.hpp"

/**
 * \file
 * \brief Case 1: exact simulation of the linear-SDE bridge (linear-transform
 *        conditioning, bridge SDE, closed-form 2-D integrated diffusion) and
 *        the importance weight for a drift perturbation h.
 */

namespace bridgesim {

// ---------------------------------------------------------------------------
// GaussianBridgeKit
// ---------------------------------------------------------------------------

/// Precomputed tables shared by all paths of a Case-1 bridge run.
///
/// Exact Gaussian stepping is used for the unconditioned process xi (not
/// Euler): the linear SDE admits exact discrete transitions, so the only
/// discretization left is in the weight sums.
struct GaussianBridgeKit {
  LinearModel model;
  BridgeProblem problem;
  CovarianceTable table;

  std::vector<Vec> mean_xi;  ///< E[xi_{t_i}] = P_i (u + int_0^{t_i} P_s^{-1} b_s ds)
  Mat rtt;                   ///< R(T,T)
  Mat rtt_pinv;              ///< R(T,T)+

  // Exact transition of xi per interval: xi_{i+1} = phi[i] xi_i + step_mean[i] + L[i] Z.
  std::vector<Mat> phi;        ///< K matrices, P_{i+1} P_i^{-1}
  std::vector<Vec> step_mean;  ///< K vectors
  std::vector<Mat> step_sqrt;  ///< K PSD square roots, L L^* = P_{i+1}(G_{i+1}-G_i)P_{i+1}^*

  std::vector<Mat> cond_gain;  ///< K+1 matrices, R(t_i,T) R(T,T)+

  // Per-node coefficient caches for the weight sum.
  std::vector<Mat> node_A;           ///< A(t_i)
  std::vector<Vec> node_b;           ///< b(t_i)
  std::vector<Mat> node_sigma_plus;  ///< sigma+(t_i)

  // Affine bridge-SDE drift at interior nodes: drift(q) = sde_aff[i] + sde_lin[i] q.
  // Only available when the Gramian M(t_i) is invertible (controllable pair).
  std::vector<Mat> sde_lin;
  std::vector<Vec> sde_aff;
  bool sde_ready = false;

  const TimeGrid& grid() const { return table.grid(); }
};

namespace detail {

/// PSD square root by symmetric eigendecomposition with clamping of small
/// negative eigenvalues; rank-deficient step covariances are fine.
inline Mat psd_sqrt(const Mat& C, double tol_scale) {
  Eigen::SelfAdjointEigenSolver<Mat> es(C);
  if (es.info() != Eigen::Success)
    throw numeric_error("psd_sqrt: eigendecomposition failed");
  const Vec& lam = es.eigenvalues();
  const double lam_max = lam.size() ? std::max(0.0, lam.maxCoeff()) : 0.0;
  const double tol = tol_scale * (1.0 + lam_max);
  Vec s(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) {
    if (lam[i] < -tol)
      throw numeric_error("psd_sqrt: step covariance has negative eigenvalue " +
                          std::to_string(lam[i]));
    s[i] = std::sqrt(std::max(0.0, lam[i]));
  }
  return es.eigenvectors() * s.asDiagonal();
}

}  // namespace detail

inline GaussianBridgeKit make_kit(LinearModel model, BridgeProblem problem,
                                  const TimeGrid& grid) {
  if (problem.dim() != model.d)
    throw std::invalid_argument("make_kit: problem dimension != model dimension");
  if (std::abs(grid.T() - problem.T) > 1e-12 * (1.0 + problem.T))
    throw std::invalid_argument("make_kit: grid horizon != problem horizon");

  GaussianBridgeKit kit;
  kit.model = std::move(model);
  kit.problem = std::move(problem);
  kit.table = covariance_table(kit.model, grid);

  const std::size_t K = grid.intervals();
  const int d = kit.model.d;
  const auto& P = kit.table.fsol.P;
  const auto& Pinv = kit.table.fsol.P_inv;
  const auto& G = kit.table.G;

  // E[xi_t]: trapezoidal accumulation of int_0^t P_s^{-1} b_s ds, same rule
  // as the covariance table.
  kit.mean_xi.resize(K + 1);
  {
    Vec b(d);
    auto integrand = [&](std::size_t i) -> Vec {
      kit.model.b(grid.node(i), b);
      if (!b.allFinite())
        throw evaluation_error("make_kit: b(t) non-finite at t=" +
                               std::to_string(grid.node(i)));
      return Pinv[i] * b;
    };
    Vec acc = Vec::Zero(d);
    Vec prev = integrand(0);
    kit.mean_xi[0] = kit.problem.u;
    for (std::size_t i = 0; i < K; ++i) {
      Vec next = integrand(i + 1);
      acc += (0.5 * grid.dt(i)) * (prev + next);
      prev = std::move(next);
      kit.mean_xi[i + 1] = P[i + 1] * (kit.problem.u + acc);
    }
  }

  kit.rtt = P[K] * G[K] * P[K].transpose();
  kit.rtt_pinv = left_pinv(kit.rtt);

  kit.phi.resize(K);
  kit.step_mean.resize(K);
  kit.step_sqrt.resize(K);
  for (std::size_t i = 0; i < K; ++i) {
    kit.phi[i] = P[i + 1] * Pinv[i];
    kit.step_mean[i] = kit.mean_xi[i + 1] - kit.phi[i] * kit.mean_xi[i];
    const Mat C = P[i + 1] * (G[i + 1] - G[i]) * P[i + 1].transpose();
    kit.step_sqrt[i] = detail::psd_sqrt(C, 1e-12);
  }

  kit.cond_gain.resize(K + 1);
  for (std::size_t i = 0; i <= K; ++i)
    kit.cond_gain[i] = P[i] * G[i] * P[K].transpose() * kit.rtt_pinv;

  kit.node_A.resize(K + 1);
  kit.node_b.resize(K + 1);
  kit.node_sigma_plus.resize(K + 1);
  for (std::size_t i = 0; i <= K; ++i) {
    const double t = grid.node(i);
    kit.node_A[i] = kit.model.A_at(t);
    kit.node_b[i] = kit.model.b_at(t);
    kit.node_sigma_plus[i] = kit.model.sigma_plus_at(t);
  }

  // Affine drift of the bridge SDE at interior nodes, when M(t_i) invertible.
  kit.sde_lin.resize(K);
  kit.sde_aff.resize(K);
  kit.sde_ready = true;
  for (std::size_t i = 0; i < K && kit.sde_ready; ++i) {
    const double t = grid.node(i);
    const Mat sig = kit.model.sigma_at(t);
    if (sig.cwiseAbs().maxCoeff() == 0.0) {
      // sigma sigma* = 0 kills the correction term outright.
      kit.sde_lin[i] = kit.node_A[i];
      kit.sde_aff[i] = kit.node_b[i];
      continue;
    }
    const Mat M = G[K] - G[i];
    Eigen::LDLT<Mat> ldlt(M);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        ldlt.vectorD().minCoeff() <= 1e-14 * (1.0 + M.trace())) {
      kit.sde_ready = false;
      break;
    }
    const Mat gain = sig * sig.transpose() * Pinv[i].transpose() *
                     ldlt.solve(Mat::Identity(d, d));
    kit.sde_lin[i] = kit.node_A[i] - gain * Pinv[i];
    kit.sde_aff[i] = kit.node_b[i] +
                     gain * (Pinv[i] * kit.mean_xi[i] -
                             Pinv[K] * (kit.mean_xi[K] - kit.problem.v));
  }
  if (!kit.sde_ready) {
    kit.sde_lin.clear();
    kit.sde_aff.clear();
  }
  return kit;
}

// ---------------------------------------------------------------------------
// Sampling and conditioning
// ---------------------------------------------------------------------------

/// Exact draw of the unconditioned Gaussian process xi on the kit's grid.
inline Path sample_xi(const GaussianBridgeKit& kit, const NoiseStream& noise) {
  const std::size_t K = kit.grid().intervals();
  const int d = kit.model.d;
  Path path(kit.grid(), d);
  path.values.col(0) = kit.problem.u;
  Vec z(d);
  for (std::size_t i = 0; i < K; ++i) {
    noise.gaussians(i, z);
    path.values.col(static_cast<Eigen::Index>(i + 1)) =
        kit.phi[i] * path.values.col(static_cast<Eigen::Index>(i)) +
        kit.step_mean[i] + kit.step_sqrt[i] * z;
  }
  validate_finite(path);
  return path;
}

/// Linear-transform conditioning p_t = xi_t - R(t,T) R(T,T)+ (xi_T - v).
/// When R(T,T) is nonsingular, p_T = v exactly.
inline Path condition_path(const GaussianBridgeKit& kit, const Path& xi) {
  const std::size_t K = kit.grid().intervals();
  Path p = xi;
  const Vec gap = xi.values.col(static_cast<Eigen::Index>(K)) - kit.problem.v;
  for (std::size_t i = 0; i <= K; ++i)
    p.values.col(static_cast<Eigen::Index>(i)) -= kit.cond_gain[i] * gap;
  return p;
}

/// Drift of the linear bridge SDE at interior node i:
///   A_t q + b_t + sigma sigma^* P_t^{-*} M_t^{-1}
///     (P_t^{-1}(E[xi_t] - q) - P_T^{-1}(E[xi_T] - v)).
inline Vec bridge_sde_drift(const GaussianBridgeKit& kit, std::size_t node,
                            Eigen::Ref<const Vec> q) {
  if (node >= kit.grid().intervals())
    throw std::invalid_argument("bridge_sde_drift: node must satisfy t < T");
  if (!kit.sde_ready)
    throw controllability_error(
        "bridge_sde_drift: Gramian M(t) singular; (A, sigma) not controllable");
  return kit.sde_aff[node] + kit.sde_lin[node] * q;
}

inline Vec bridge_sde_drift(const GaussianBridgeKit& kit, double t,
                            Eigen::Ref<const Vec> q) {
  return bridge_sde_drift(kit, kit.grid().index_of(t), q);
}

/// Euler integration of the bridge SDE with the final step replaced by
/// pinning q_T := v (the drift is singular at T; the law is unchanged).
inline Path sample_bridge_sde(const GaussianBridgeKit& kit,
                              const NoiseStream& noise) {
  if (!kit.sde_ready)
    throw controllability_error(
        "sample_bridge_sde: Gramian M(t) singular; (A, sigma) not controllable");
  const TimeGrid& grid = kit.grid();
  const std::size_t K = grid.intervals();
  const int d = kit.model.d;
  const int m = kit.model.m;
  Path path(grid, d);
  path.values.col(0) = kit.problem.u;
  Vec z(m);
  Mat sig(d, m);
  for (std::size_t i = 0; i + 1 < K; ++i) {
    const double dt = grid.dt(i);
    noise.gaussians(i, z);
    kit.model.sigma(grid.node(i), sig);
    const auto q = path.values.col(static_cast<Eigen::Index>(i));
    path.values.col(static_cast<Eigen::Index>(i + 1)) =
        q + (kit.sde_aff[i] + kit.sde_lin[i] * q) * dt +
        sig * (std::sqrt(dt) * z);
  }
  path.values.col(static_cast<Eigen::Index>(K)) = kit.problem.v;
  validate_finite(path);
  return path;
}

// ---------------------------------------------------------------------------
// Case-1 importance weight
// ---------------------------------------------------------------------------

/// Left-endpoint Ito discretization of the Case-1 log weight:
///   sum_i [ h*(t_i,p_i) sigma+(t_i) (p_{i+1} - p_i - (A p_i + b) dt)
///           - 1/2 |h(t_i,p_i)|^2 dt ].
inline double case1_log_weight(const GaussianBridgeKit& kit, const Path& p) {
  if (!kit.model.has_perturbation()) return 0.0;
  const TimeGrid& grid = kit.grid();
  if (p.grid.size() != grid.size())
    throw std::invalid_argument("case1_log_weight: path grid mismatch");
  const std::size_t K = grid.intervals();
  const int d = kit.model.d;
  const int m = kit.model.m;

  double acc = 0.0;
  Vec hval(m), incr(d);
  for (std::size_t i = 0; i < K; ++i) {
    const double dt = grid.dt(i);
    const auto pi = p.values.col(static_cast<Eigen::Index>(i));
    kit.model.h(grid.node(i), pi, hval);
    if (!hval.allFinite())
      throw evaluation_error("case1_log_weight: h(t,x) non-finite");
    incr = p.values.col(static_cast<Eigen::Index>(i + 1)) - pi -
           (kit.node_A[i] * pi + kit.node_b[i]) * dt;
    acc += hval.dot(kit.node_sigma_plus[i] * incr) - 0.5 * hval.squaredNorm() * dt;
  }
  return acc;
}

// ---------------------------------------------------------------------------
// 2-D integrated-diffusion example
// ---------------------------------------------------------------------------

namespace detail {

/// Pinning correction matrix of the closed-form 2-D bridge at time t.
inline Eigen::Matrix2d bridge2d_correction(double t, double T) {
  Eigen::Matrix2d Kt;
  Kt << t * (3.0 * T - 2.0 * t), -t * T * (T - t),
        6.0 * (T - t),           T * (3.0 * t - 2.0 * T);
  return (t / (T * T * T)) * Kt;
}

}  // namespace detail

/// Closed-form bridge for (position, velocity) = (z, zdot) with
/// dz = zdot dt, dzdot = s dw, conditioned on hitting v = (v1, v2) at T.
/// The free pair (z, zdot) is simulated exactly: per interval the joint
/// increment is Gaussian with covariance s^2 [[dt^3/3, dt^2/2],[dt^2/2, dt]].
inline Path bridge2d_closed_form(const Vec& u, const Vec& v, double s,
                                 const TimeGrid& grid, const NoiseStream& noise) {
  if (u.size() != 2 || v.size() != 2)
    throw std::invalid_argument("bridge2d_closed_form: endpoints must be 2-D");
  const std::size_t K = grid.intervals();
  const double T = grid.T();

  // Free motion first.
  Path free(grid, 2);
  free.values.col(0) = u;
  for (std::size_t i = 0; i < K; ++i) {
    const double dt = grid.dt(i);
    const double z1 = noise.gaussian(i, 0);
    const double z2 = noise.gaussian(i, 1);
    // Cholesky factor of s^2 [[dt^3/3, dt^2/2],[dt^2/2, dt]].
    const double sq = std::sqrt(dt);
    const double dz = s * (dt * sq / std::sqrt(3.0)) * z1;
    const double dzdot = s * sq * (std::sqrt(3.0) / 2.0 * z1 + 0.5 * z2);
    const double pos = free.values(0, static_cast<Eigen::Index>(i));
    const double vel = free.values(1, static_cast<Eigen::Index>(i));
    free.values(0, static_cast<Eigen::Index>(i + 1)) = pos + vel * dt + dz;
    free.values(1, static_cast<Eigen::Index>(i + 1)) = vel + dzdot;
  }

  const Eigen::Vector2d gap =
      free.values.col(static_cast<Eigen::Index>(K)) - v;
  Path bridge = free;
  for (std::size_t i = 0; i <= K; ++i)
    bridge.values.col(static_cast<Eigen::Index>(i)) -=
        detail::bridge2d_correction(grid.node(i), T) * gap;
  validate_finite(bridge);
  return bridge;
}

/// Velocity drift of the 2-D bridge SDE:
///   -6 (p - v1)/(T-t)^2 - 2 (2q + v2)/(T-t);  the position drift is q.
inline double bridge2d_sde_drift(double t, double p, double q, const Vec& v,
                                 double T) {
  if (!(t < T))
    throw std::invalid_argument("bridge2d_sde_drift: requires t < T");
  const double tau = T - t;
  return -6.0 * (p - v[0]) / (tau * tau) - 2.0 * (2.0 * q + v[1]) / tau;
}

/// Euler integration of the singular 2-D bridge SDE, final step pinned to v.
inline Path sample_bridge2d_sde(const Vec& u, const Vec& v, double s,
                                const TimeGrid& grid, const NoiseStream& noise) {
  if (u.size() != 2 || v.size() != 2)
    throw std::invalid_argument("sample_bridge2d_sde: endpoints must be 2-D");
  const std::size_t K = grid.intervals();
  const double T = grid.T();
  Path path(grid, 2);
  path.values.col(0) = u;
  for (std::size_t i = 0; i + 1 < K; ++i) {
    const double t = grid.node(i);
    const double dt = grid.dt(i);
    const double p = path.values(0, static_cast<Eigen::Index>(i));
    const double q = path.values(1, static_cast<Eigen::Index>(i));
    path.values(0, static_cast<Eigen::Index>(i + 1)) = p + q * dt;
    path.values(1, static_cast<Eigen::Index>(i + 1)) =
        q + bridge2d_sde_drift(t, p, q, v, T) * dt +
        s * std::sqrt(dt) * noise.gaussian(i, 0);
  }
  path.values.col(static_cast<Eigen::Index>(K)) = v;
  validate_finite(path);
  return path;
}

}  // namespace bridgesim

#endif  // BRIDGESIM_GAUSSBRIDGE_HPP
