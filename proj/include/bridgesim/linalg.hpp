#ifndef BRIDGESIM_LINALG_HPP
#define BRIDGESIM_LINALG_HPP

#include <Eigen/Dense>

#include <limits>
#include <vector>

#include "bridgesim/core.hpp"

/**
 * \file
 * \brief Deterministic matrix machinery for linear SDEs: fundamental matrix
 *        P_t, covariance table G_t, Gramian M_t, and the left pseudo-inverse
 *        with the 1/0 = 0 convention.
 */

namespace bridgesim {

/// Left pseudo-inverse M+ = (M*M)+ M*, with (M*M)+ computed by symmetric
/// eigendecomposition; eigenvalues below tau = n * eps * lambda_max are
/// treated as exact zeros (1/0 = 0).
inline Mat left_pinv(const Mat& M) {
  const Eigen::Index n = M.rows();
  const Eigen::Index m = M.cols();
  const Mat S = M.transpose() * M;  // m x m symmetric PSD
  Eigen::SelfAdjointEigenSolver<Mat> es(S);
  if (es.info() != Eigen::Success)
    throw numeric_error("left_pinv: eigendecomposition failed");
  const Vec& lam = es.eigenvalues();
  const double lam_max = lam.size() > 0 ? lam.cwiseMax(0.0).maxCoeff() : 0.0;
  const double tau =
      static_cast<double>(n) * std::numeric_limits<double>::epsilon() * lam_max;
  Vec inv(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i)
    inv[i] = lam[i] > tau ? 1.0 / lam[i] : 0.0;
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose() *
         M.transpose();
}

// ---------------------------------------------------------------------------
// Fundamental matrix P_t and its inverse
// ---------------------------------------------------------------------------

/// Tabulated solution of dP/dt = A_t P, P_0 = Id, together with P^{-1}
/// obtained by co-integrating dQ/dt = -Q A_t (never by numerical inversion).
struct FundamentalSolution {
  TimeGrid grid;
  std::vector<Mat> P;      ///< K+1 matrices, P[0] = Id
  std::vector<Mat> P_inv;  ///< K+1 matrices, P[i] * P_inv[i] = Id
};

/// Classical 4th-order one-step integration of P and Q = P^{-1} per interval.
inline FundamentalSolution fundamental_matrix(const TimeMatrix& A,
                                              const TimeGrid& grid, int d) {
  FundamentalSolution fs;
  fs.grid = grid;
  const std::size_t K = grid.intervals();
  fs.P.resize(K + 1);
  fs.P_inv.resize(K + 1);
  fs.P[0] = Mat::Identity(d, d);
  fs.P_inv[0] = Mat::Identity(d, d);

  Mat A0(d, d), Am(d, d), A1(d, d);
  auto eval = [&](double t, Mat& out) {
    A(t, out);
    if (!out.allFinite())
      throw evaluation_error("fundamental_matrix: A(t) non-finite at t=" +
                             std::to_string(t));
  };

  for (std::size_t i = 0; i < K; ++i) {
    const double t = grid.node(i);
    const double h = grid.dt(i);
    eval(t, A0);
    eval(t + 0.5 * h, Am);
    eval(t + h, A1);

    // RK4 for dP/dt = A P
    const Mat& P = fs.P[i];
    Mat k1 = A0 * P;
    Mat k2 = Am * (P + 0.5 * h * k1);
    Mat k3 = Am * (P + 0.5 * h * k2);
    Mat k4 = A1 * (P + h * k3);
    fs.P[i + 1] = P + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    // RK4 for dQ/dt = -Q A
    const Mat& Q = fs.P_inv[i];
    Mat l1 = -(Q * A0);
    Mat l2 = -((Q + 0.5 * h * l1) * Am);
    Mat l3 = -((Q + 0.5 * h * l2) * Am);
    Mat l4 = -((Q + h * l3) * A1);
    fs.P_inv[i + 1] = Q + (h / 6.0) * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
  }
  return fs;
}

// ---------------------------------------------------------------------------
// Covariance table G and derived views R, M
// ---------------------------------------------------------------------------

/// G[i] = int_0^{t_i} P_u^{-1} sigma_u sigma_u^* P_u^{-*} du, accumulated by
/// trapezoidal quadrature on the simulation grid. R_st and M_t are derived
/// views of this table.
struct CovarianceTable {
  FundamentalSolution fsol;
  std::vector<Mat> G;  ///< K+1 matrices, G[0] = 0

  const TimeGrid& grid() const { return fsol.grid; }
};

inline CovarianceTable covariance_table(const LinearModel& model,
                                        FundamentalSolution fsol) {
  CovarianceTable tab;
  tab.fsol = std::move(fsol);
  const TimeGrid& grid = tab.fsol.grid;
  const std::size_t K = grid.intervals();
  const int d = model.d;

  tab.G.resize(K + 1);
  tab.G[0] = Mat::Zero(d, d);

  Mat sig(d, model.m);
  auto integrand = [&](std::size_t i) -> Mat {
    model.sigma(grid.node(i), sig);
    if (!sig.allFinite())
      throw evaluation_error("covariance_table: sigma(t) non-finite at t=" +
                             std::to_string(grid.node(i)));
    const Mat v = tab.fsol.P_inv[i] * sig;
    return v * v.transpose();
  };

  Mat prev = integrand(0);
  for (std::size_t i = 0; i < K; ++i) {
    Mat next = integrand(i + 1);
    tab.G[i + 1] = tab.G[i] + (0.5 * grid.dt(i)) * (prev + next);
    prev = std::move(next);
  }
  return tab;
}

inline CovarianceTable covariance_table(const LinearModel& model,
                                        const TimeGrid& grid) {
  return covariance_table(model, fundamental_matrix(model.A, grid, model.d));
}

/// R(s,t) = P_s G(min(s,t)) P_t^*; s and t must be grid nodes.
inline Mat covariance_R(double s, double t, const CovarianceTable& tab) {
  const std::size_t is = tab.grid().index_of(s);
  const std::size_t it = tab.grid().index_of(t);
  const std::size_t imin = std::min(is, it);
  return tab.fsol.P[is] * tab.G[imin] * tab.fsol.P[it].transpose();
}

/// Controllability Gramian M(t) = G(T) - G(t); t must be a grid node.
inline Mat gramian_M(double t, const CovarianceTable& tab) {
  const std::size_t i = tab.grid().index_of(t);
  return tab.G.back() - tab.G[i];
}

// ---------------------------------------------------------------------------
// Controllability check
// ---------------------------------------------------------------------------

struct ControllabilityReport {
  double min_eigenvalue = 0.0;  ///< min over interior nodes of lambda_min(M(t_i))
  double argmin_time = 0.0;
  double tol = 0.0;
  bool pass = false;
};

/// Minimum eigenvalue of M(t_i) over interior grid nodes, against tol.
/// Failure signals that the linear bridge SDE is ill-posed.
/// Default tol is the scale-invariant 1e-10 * trace(M(0)).
inline ControllabilityReport check_controllable(const CovarianceTable& tab,
                                                double tol = -1.0) {
  ControllabilityReport rep;
  const Mat M0 = tab.G.back();
  rep.tol = tol >= 0.0 ? tol : 1e-10 * M0.trace();

  double min_eig = std::numeric_limits<double>::infinity();
  const std::size_t K = tab.grid().intervals();
  Eigen::SelfAdjointEigenSolver<Mat> es;
  for (std::size_t i = 0; i < K; ++i) {  // interior nodes t_i < T
    es.compute(tab.G.back() - tab.G[i], Eigen::EigenvaluesOnly);
    const double lam = es.eigenvalues().minCoeff();
    if (lam < min_eig) {
      min_eig = lam;
      rep.argmin_time = tab.grid().node(i);
    }
  }
  rep.min_eigenvalue = min_eig;
  rep.pass = min_eig > rep.tol;
  return rep;
}

}  // namespace bridgesim

#endif  // BRIDGESIM_LINALG_HPP
