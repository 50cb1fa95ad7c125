#ifndef BRIDGESIM_ORACLE_HPP
#define BRIDGESIM_ORACLE_HPP

#include <algorithm>
#include <thread>
#include <vector>

#include "bridgesim/core.hpp"
#include "bridgesim/estimate.hpp"
#include "bridgesim/linalg.hpp"
#include "bridgesim/rng.hpp"

/**
 * \file
 * \brief Independent ground-truth generators: exact Gaussian bridge moments
 *        and a brute-force rejection-conditioning estimator. These never share
 *        a code path with the samplers they are used to check; in particular
 *        the Gaussian oracle touches only the deterministic linalg tables.
 */

namespace bridgesim {

// ---------------------------------------------------------------------------
// Closed-form Brownian bridge moments (per unit diffusion)
// ---------------------------------------------------------------------------

struct BridgeMoments {
  double mean_s = 0.0;  ///< E[y_s]
  double cov_st = 0.0;  ///< Cov(y_s, y_t)
};

/// mean(s) = u + (v-u) s/T, cov(s,t) = s (T-t)/T for 0 <= s <= t <= T.
inline BridgeMoments brownian_bridge_moments(double u, double v, double T,
                                             double s, double t) {
  if (!(0.0 <= s && s <= t && t <= T))
    throw std::invalid_argument("brownian_bridge_moments: need 0 <= s <= t <= T");
  return {u + (v - u) * s / T, s * (T - t) / T};
}

// ---------------------------------------------------------------------------
// Gaussian conditioning oracle (linear models, h = 0)
// ---------------------------------------------------------------------------

/// Conditioned mean path and covariance blocks computed directly from the
/// deterministic tables: mean(s) = E[xi_s] - R(s,T) R(T,T)+ (E[xi_T] - v),
/// C(s,t) = R(s,t) - R(s,T) R(T,T)+ R(T,t).
struct ConditionedGaussianLaw {
  CovarianceTable table;
  std::vector<Vec> mean;  ///< conditioned mean at every grid node
  Mat rtt_pinv;

  const TimeGrid& grid() const { return table.grid(); }

  Mat cov(std::size_t i, std::size_t j) const {
    const auto& P = table.fsol.P;
    const std::size_t K = grid().intervals();
    auto R = [&](std::size_t a, std::size_t b) {
      return P[a] * table.G[std::min(a, b)] * P[b].transpose();
    };
    return R(i, j) - R(i, K) * rtt_pinv * R(K, j);
  }

  Mat cov_at(double s, double t) const {
    return cov(grid().index_of(s), grid().index_of(t));
  }
  Vec mean_at(double s) const { return mean[grid().index_of(s)]; }
};

inline ConditionedGaussianLaw gaussian_conditioning_oracle(
    const LinearModel& model, const BridgeProblem& problem, const TimeGrid& grid) {
  if (model.has_perturbation())
    throw std::invalid_argument("gaussian_conditioning_oracle: requires h = 0");

  ConditionedGaussianLaw law;
  law.table = covariance_table(model, grid);
  const auto& P = law.table.fsol.P;
  const auto& Pinv = law.table.fsol.P_inv;
  const std::size_t K = grid.intervals();
  const int d = model.d;

  // E[xi] by the same trapezoidal rule as the covariance table.
  std::vector<Vec> mean_xi(K + 1);
  {
    Vec b(d);
    auto integrand = [&](std::size_t i) -> Vec {
      model.b(grid.node(i), b);
      return Pinv[i] * b;
    };
    Vec acc = Vec::Zero(d);
    Vec prev = integrand(0);
    mean_xi[0] = problem.u;
    for (std::size_t i = 0; i < K; ++i) {
      Vec next = integrand(i + 1);
      acc += (0.5 * grid.dt(i)) * (prev + next);
      prev = std::move(next);
      mean_xi[i + 1] = P[i + 1] * (problem.u + acc);
    }
  }

  const Mat rtt = P[K] * law.table.G[K] * P[K].transpose();
  law.rtt_pinv = left_pinv(rtt);
  const Vec gap = mean_xi[K] - problem.v;
  law.mean.resize(K + 1);
  for (std::size_t i = 0; i <= K; ++i) {
    const Mat RiT = P[i] * law.table.G[i] * P[K].transpose();
    law.mean[i] = mean_xi[i] - RiT * law.rtt_pinv * gap;
  }
  return law;
}

// ---------------------------------------------------------------------------
// Rejection conditioning
// ---------------------------------------------------------------------------

struct RejectionResult {
  double estimate = 0.0;
  double std_error = 0.0;
  long accepted = 0;
  long n_paths = 0;
  double epsilon = 0.0;
};

/// One result per requested epsilon, from a single batch of unconditioned
/// Euler paths (epsilons are acceptance radii |x_T - v| <= eps).
///
/// Throws oracle_insufficient when fewer than 30 paths are accepted at some
/// epsilon; use rejection_pilot to size N beforehand.
inline std::vector<RejectionResult> rejection_conditional_multi(
    const GeneralModel& model, const BridgeProblem& problem,
    const PathFunctional& f, std::vector<double> epsilons, long n,
    const TimeGrid& grid, std::uint64_t seed, int threads = 1) {
  if (epsilons.empty())
    throw std::invalid_argument("rejection_conditional: no epsilon given");
  for (double e : epsilons)
    if (!(e > 0.0))
      throw std::invalid_argument("rejection_conditional: epsilon must be > 0");
  const double eps_max = *std::max_element(epsilons.begin(), epsilons.end());
  const std::size_t K = grid.intervals();
  const int d = model.d;

  struct Hit {
    double dist;
    double fval;
  };
  const int n_workers = std::max(1, threads);
  std::vector<std::vector<Hit>> hits(n_workers);

  std::vector<double> sqdt(K);
  for (std::size_t i = 0; i < K; ++i) sqdt[i] = std::sqrt(grid.dt(i));

  auto worker = [&](int w, long lo, long hi) {
    Path path(grid, d);
    Vec b(d), z(d), x1(d);
    Mat sig(d, d);
    auto& out = hits[w];
    for (long p = lo; p < hi; ++p) {
      const NoiseStream noise(seed, static_cast<std::uint64_t>(p));
      path.values.col(0) = problem.u;
      bool ok = true;
      if (d == 1) {
        // scalar fast path: avoid per-step dynamic-size Eigen expressions
        double x = problem.u[0];
        for (std::size_t i = 0; i < K; ++i) {
          const double t = grid.node(i);
          x1[0] = x;
          model.drift(t, x1, b);
          model.sigma(t, x1, sig);
          x += b[0] * grid.dt(i) + sig(0, 0) * (sqdt[i] * noise.gaussian(i));
          path.values(0, static_cast<Eigen::Index>(i + 1)) = x;
          if (!(std::abs(x) <= kBlowupThreshold)) {  // catches NaN too
            ok = false;
            break;
          }
        }
      } else {
        for (std::size_t i = 0; i < K; ++i) {
          const double t = grid.node(i);
          const auto x = path.values.col(static_cast<Eigen::Index>(i));
          model.drift(t, x, b);
          model.sigma(t, x, sig);
          noise.gaussians(i, z);
          path.values.col(static_cast<Eigen::Index>(i + 1)) =
              x + b * grid.dt(i) + sig * (sqdt[i] * z);
          const auto next = path.values.col(static_cast<Eigen::Index>(i + 1));
          if (!next.allFinite() || next.cwiseAbs().maxCoeff() > kBlowupThreshold) {
            ok = false;
            break;
          }
        }
      }
      if (!ok) continue;
      const double dist =
          (path.values.col(static_cast<Eigen::Index>(K)) - problem.v).norm();
      if (dist <= eps_max) out.push_back({dist, f(path)});
    }
  };

  if (n_workers == 1) {
    worker(0, 0, n);
  } else {
    std::vector<std::thread> pool;
    const long chunk = (n + n_workers - 1) / n_workers;
    for (int w = 0; w < n_workers; ++w)
      pool.emplace_back(worker, w, w * chunk, std::min<long>(n, (w + 1) * chunk));
    for (auto& th : pool) th.join();
  }

  std::vector<Hit> all;
  for (auto& h : hits) all.insert(all.end(), h.begin(), h.end());

  std::vector<RejectionResult> results;
  results.reserve(epsilons.size());
  for (double eps : epsilons) {
    RejectionResult r;
    r.epsilon = eps;
    r.n_paths = n;
    double s = 0.0, s2 = 0.0;
    for (const Hit& h : all) {
      if (h.dist > eps) continue;
      ++r.accepted;
      s += h.fval;
      s2 += h.fval * h.fval;
    }
    if (r.accepted < 30)
      throw oracle_insufficient("rejection_conditional: only " +
                                std::to_string(r.accepted) +
                                " acceptances at epsilon=" + std::to_string(eps));
    r.estimate = s / r.accepted;
    const double var = std::max(0.0, s2 / r.accepted - r.estimate * r.estimate);
    r.std_error = std::sqrt(var / r.accepted);
    results.push_back(r);
  }
  return results;
}

inline RejectionResult rejection_conditional(const GeneralModel& model,
                                             const BridgeProblem& problem,
                                             const PathFunctional& f,
                                             double epsilon, long n,
                                             const TimeGrid& grid,
                                             std::uint64_t seed, int threads = 1) {
  return rejection_conditional_multi(model, problem, f, {epsilon}, n, grid,
                                     seed, threads)[0];
}

/// Pilot acceptance-rate probe; returns the projected acceptance count for a
/// full run of n paths.
inline double rejection_pilot(const GeneralModel& model,
                              const BridgeProblem& problem, double epsilon,
                              long n, long pilot_n, const TimeGrid& grid,
                              std::uint64_t seed) {
  const std::size_t K = grid.intervals();
  const int d = model.d;
  Path path(grid, d);
  Vec b(d), z(d);
  Mat sig(d, d);
  long accepted = 0;
  for (long p = 0; p < pilot_n; ++p) {
    // offset past the main run's path indices
    const NoiseStream noise(seed, static_cast<std::uint64_t>(n + p));
    path.values.col(0) = problem.u;
    bool ok = true;
    for (std::size_t i = 0; i < K; ++i) {
      const double t = grid.node(i);
      const double dt = grid.dt(i);
      const auto x = path.values.col(static_cast<Eigen::Index>(i));
      model.drift(t, x, b);
      model.sigma(t, x, sig);
      noise.gaussians(i, z);
      path.values.col(static_cast<Eigen::Index>(i + 1)) =
          x + b * dt + sig * (std::sqrt(dt) * z);
      if (!path.values.col(static_cast<Eigen::Index>(i + 1)).allFinite()) {
        ok = false;
        break;
      }
    }
    if (ok &&
        (path.values.col(static_cast<Eigen::Index>(K)) - problem.v).norm() <= epsilon)
      ++accepted;
  }
  return static_cast<double>(accepted) / pilot_n * static_cast<double>(n);
}

/// Default acceptance radius 0.05 sqrt(T) * typical noise scale.
inline double default_rejection_epsilon(double T, double sigma_typical) {
  return 0.05 * std::sqrt(T) * sigma_typical;
}

}  // namespace bridgesim

#endif  // BRIDGESIM_ORACLE_HPP
