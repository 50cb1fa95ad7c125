#include <doctest.h>

#include <random>

#include "bridgesim/linalg.hpp"

using namespace bridgesim;

namespace {

// Scaling-and-squaring matrix exponential (Taylor core), used as an
// independent oracle for the fundamental matrix with constant A.
Mat expm(const Mat& A) {
  const double nrm = A.cwiseAbs().rowwise().sum().maxCoeff();
  int s = 0;
  while (nrm / std::pow(2.0, s) > 0.25) ++s;
  const Mat B = A / std::pow(2.0, s);
  Mat term = Mat::Identity(A.rows(), A.cols());
  Mat sum = term;
  for (int k = 1; k <= 30; ++k) {
    term = term * B / static_cast<double>(k);
    sum += term;
    if (term.cwiseAbs().maxCoeff() < 1e-18) break;
  }
  for (int i = 0; i < s; ++i) sum = sum * sum;
  return sum;
}

void check_moore_penrose(const Mat& M, double tol = 1e-10) {
  const Mat P = left_pinv(M);
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  const double pscale = std::max(1.0, P.cwiseAbs().maxCoeff());
  CHECK((M * P * M - M).cwiseAbs().maxCoeff() <= tol * scale);
  CHECK((P * M * P - P).cwiseAbs().maxCoeff() <= tol * pscale);
  const Mat PM = P * M;
  CHECK((PM - PM.transpose()).cwiseAbs().maxCoeff() <= tol * std::max(1.0, PM.cwiseAbs().maxCoeff()));
}

LinearModel brownian_model() {
  LinearModel m;
  m.d = m.m = 1;
  m.A = constant_matrix(Mat::Zero(1, 1));
  m.b = constant_vector(Vec::Zero(1));
  m.sigma = constant_matrix(Mat::Identity(1, 1));
  return m;
}

// Integrated-diffusion pair: dx1 = x2 dt, dx2 = s dw.
LinearModel integrated_model(double s) {
  LinearModel m;
  m.d = 2;
  m.m = 1;
  Mat A(2, 2);
  A << 0, 1, 0, 0;
  m.A = constant_matrix(A);
  m.b = constant_vector(Vec::Zero(2));
  Mat sig(2, 1);
  sig << 0, s;
  m.sigma = constant_matrix(sig);
  return m;
}

}  // namespace

TEST_CASE("left_pinv closed-form cases") {
  CHECK((left_pinv(Mat::Identity(3, 3)) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-14);

  Mat D = Mat::Zero(2, 2);
  D(0, 0) = 2.0;
  const Mat Dp = left_pinv(D);
  CHECK(Dp(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(Dp(1, 1) == 0.0);
  CHECK(Dp(0, 1) == 0.0);

  Mat col(2, 1);
  col << 1, 1;
  const Mat colp = left_pinv(col);
  CHECK(colp.rows() == 1);
  CHECK(colp.cols() == 2);
  CHECK(colp(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(colp(0, 1) == doctest::Approx(0.5).epsilon(1e-14));

  // zero matrix: 1/0 = 0 convention, total function
  CHECK(left_pinv(Mat::Zero(3, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("left_pinv Moore-Penrose identities on random matrices") {
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    Mat M(4, 3);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) M(i, j) = gauss(rng);
    if (rep % 3 == 0) M.col(2) = 2.0 * M.col(0) - M.col(1);  // rank-deficient
    if (rep % 7 == 0) M.col(1).setZero();
    check_moore_penrose(M);
  }
}

TEST_CASE("fundamental_matrix: zero generator") {
  const TimeGrid grid = make_uniform_grid(1.0, 10);
  const auto fs = fundamental_matrix(constant_matrix(Mat::Zero(2, 2)), grid, 2);
  for (const Mat& P : fs.P)
    CHECK((P - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("fundamental_matrix: constant A vs matrix exponential") {
  Mat A(2, 2);
  A << 0.3, -1.1, 0.7, 0.2;
  const TimeGrid grid = make_uniform_grid(1.0, 100);
  const auto fs = fundamental_matrix(constant_matrix(A), grid, 2);
  const Mat exact = expm(A);
  CHECK((fs.P.back() - exact).cwiseAbs().maxCoeff() < 1e-8);
  // P_inv co-integration stays the true inverse
  for (std::size_t i = 0; i < fs.P.size(); i += 10)
    CHECK((fs.P[i] * fs.P_inv[i] - Mat::Identity(2, 2)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("fundamental_matrix: scalar A(t) = t") {
  const TimeGrid grid = make_uniform_grid(1.0, 100);
  TimeMatrix A = [](double t, Eigen::Ref<Mat> out) { out(0, 0) = t; };
  const auto fs = fundamental_matrix(A, grid, 1);
  for (std::size_t i = 0; i < fs.P.size(); i += 20) {
    const double t = grid.node(i);
    const double exact = std::exp(0.5 * t * t);
    CHECK(std::abs(fs.P[i](0, 0) - exact) / exact < 1e-8);
  }
}

TEST_CASE("fundamental_matrix: 4th-order convergence under mesh halving") {
  Mat A(2, 2);
  A << 0.5, -2.0, 1.0, -0.3;
  const Mat exact = expm(A);
  auto terminal_error = [&](int K) {
    const auto fs = fundamental_matrix(constant_matrix(A), make_uniform_grid(1.0, K), 2);
    return (fs.P.back() - exact).cwiseAbs().maxCoeff();
  };
  const double e1 = terminal_error(8);
  const double e2 = terminal_error(16);
  CHECK(e1 / e2 >= 12.0);
}

TEST_CASE("covariance_table: Brownian motion") {
  const TimeGrid grid = make_uniform_grid(1.0, 100);
  const auto tab = covariance_table(brownian_model(), grid);
  for (std::size_t i = 0; i < grid.size(); i += 10)
    CHECK(tab.G[i](0, 0) == doctest::Approx(grid.node(i)).epsilon(1e-12));
  CHECK(covariance_R(0.3, 0.7, tab)(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(covariance_R(0.7, 0.3, tab)(0, 0) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(gramian_M(0.4, tab)(0, 0) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK_THROWS_AS(covariance_R(0.315, 0.7, tab), std::invalid_argument);
}

TEST_CASE("covariance_table: 2-D integrated diffusion matches symbolic G") {
  const double s = 1.3;
  const TimeGrid grid = make_uniform_grid(1.0, 200);
  const auto tab = covariance_table(integrated_model(s), grid);
  // P_u^{-1} sigma = (-u s, s)^T, so G(t) = s^2 [[t^3/3, -t^2/2], [-t^2/2, t]].
  for (std::size_t i = 0; i < grid.size(); i += 25) {
    const double t = grid.node(i);
    Mat Gexact(2, 2);
    Gexact << t * t * t / 3.0, -t * t / 2.0, -t * t / 2.0, t;
    Gexact *= s * s;
    // trapezoid on a quadratic integrand: O(mesh^2) error
    CHECK((tab.G[i] - Gexact).cwiseAbs().maxCoeff() < 1e-4 * s * s);
  }
  Mat M0 = gramian_M(0.0, tab);
  Mat M0exact(2, 2);
  M0exact << 1.0 / 3.0, -0.5, -0.5, 1.0;
  M0exact *= s * s;
  CHECK((M0 - M0exact).cwiseAbs().maxCoeff() < 1e-4 * s * s);
}

TEST_CASE("covariance_table: sigma(t) = sqrt(t)") {
  LinearModel m = brownian_model();
  m.sigma = [](double t, Eigen::Ref<Mat> out) { out(0, 0) = std::sqrt(t); };
  const TimeGrid grid = make_uniform_grid(1.0, 1000);
  const auto tab = covariance_table(m, grid);
  CHECK(std::abs(tab.G.back()(0, 0) - 0.5) / 0.5 < 1e-4);
}

TEST_CASE("covariance table invariants: symmetry and monotonicity") {
  const double s = 0.8;
  const TimeGrid grid = make_uniform_grid(1.0, 50);
  const auto tab = covariance_table(integrated_model(s), grid);
  for (double a : {0.2, 0.5, 0.9}) {
    for (double c : {0.1, 0.5, 1.0}) {
      const Mat Rac = covariance_R(a, c, tab);
      const Mat Rca = covariance_R(c, a, tab);
      CHECK((Rac - Rca.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
    const Mat Raa = covariance_R(a, a, tab);
    CHECK((Raa - Raa.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    Eigen::SelfAdjointEigenSolver<Mat> es(Raa);
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Mat> es(Mat(tab.G[i + 1] - tab.G[i]));
    CHECK(es.eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("check_controllable") {
  const TimeGrid grid = make_uniform_grid(1.0, 100);

  const auto tab = covariance_table(brownian_model(), grid);
  const auto rep = check_controllable(tab, 1e-8);
  CHECK(rep.pass);
  CHECK(rep.min_eigenvalue == doctest::Approx(grid.dt(99)).epsilon(1e-10));

  LinearModel degenerate = brownian_model();
  degenerate.sigma = constant_matrix(Mat::Zero(1, 1));
  const auto rep0 = check_controllable(covariance_table(degenerate, grid), 1e-8);
  CHECK(!rep0.pass);
  CHECK(rep0.min_eigenvalue == 0.0);

  const auto rep2 = check_controllable(covariance_table(integrated_model(0.9), grid));
  CHECK(rep2.pass);  // det M(t) = s^4 (T-t)^4 / 12 > 0 for t < T
}
