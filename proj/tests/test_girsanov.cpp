#include <doctest.h>

#include <cmath>

#include "bridgesim/integrate.hpp"

using namespace bridgesim;

namespace {

GeneralModel model_gen(VectorField drift, MatrixField sigma, bool bounded = true) {
  GeneralModel m;
  m.d = 1;
  m.drift = std::move(drift);
  m.sigma = std::move(sigma);
  m.drift_bounded = bounded;
  return m;
}

VectorField zero_drift() {
  return [](double, Eigen::Ref<const Vec>, Eigen::Ref<Vec> out) { out.setZero(); };
}

MatrixField unit_sigma(int d) {
  return constant_field(Mat(Mat::Identity(d, d)));
}

BridgeProblem problem_1d(double u, double v, double T) {
  return BridgeProblem(Vec::Constant(1, u), Vec::Constant(1, v), T);
}

}  // namespace

TEST_CASE("girsanov_log_weight: h = 0 and telescoping constant h") {
  const TimeGrid grid = make_uniform_grid(1.0, 64);
  const auto res = euler(zero_drift(), unit_sigma(1), Vec::Zero(1), grid,
                         NoiseStream(1, 0));
  VectorField h0 = zero_drift();
  CHECK(girsanov_log_weight(h0, res.path, res.dw) == 0.0);

  const double c = 1.3;
  VectorField hc = constant_field(Vec(Vec::Constant(1, c)));
  // sum of dw equals w_T = x_T here (drift 0, sigma 1, x0 = 0)
  const double wT = res.path.values(0, 64);
  CHECK(girsanov_log_weight(hc, res.path, res.dw) ==
        doctest::Approx(c * wT - 0.5 * c * c).epsilon(1e-12));

  std::vector<Vec> wrong(10, Vec::Zero(1));
  CHECK_THROWS_AS(girsanov_log_weight(hc, res.path, wrong), std::invalid_argument);
}

TEST_CASE("girsanov_log_weight: exponential martingale has mean one") {
  // h(t,x) = x, small horizon; E[e^{logW}] = 1.
  const double T = 0.25;
  const int N = 30000, K = 200;
  const TimeGrid grid = make_uniform_grid(T, K);
  VectorField h = [](double, Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out) {
    out = x;
  };
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < N; ++i) {
    const auto res = euler(zero_drift(), unit_sigma(1), Vec::Zero(1), grid,
                           NoiseStream(77, static_cast<std::uint64_t>(i)));
    const double w = std::exp(girsanov_log_weight(h, res.path, res.dw));
    s1 += w;
    s2 += w * w;
  }
  const double mean = s1 / N;
  const double se = std::sqrt(std::max(0.0, s2 / N - mean * mean) / N);
  CHECK(std::abs(mean - 1.0) < 3.0 * se);
}

TEST_CASE("case2_bridge_drift") {
  GeneralModel m = model_gen(
      [](double, Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out) {
        out[0] = std::sin(x[0]);
      },
      unit_sigma(1));
  const auto pb = problem_1d(0.0, 1.0, 1.0);

  // y = v: pull vanishes
  const Vec v = pb.v;
  CHECK(case2_bridge_drift(m, pb, 0.3, v, true)[0] == doctest::Approx(std::sin(1.0)));
  CHECK(case2_bridge_drift(m, pb, 0.3, v, false)[0] == 0.0);

  // arithmetic spot value: T-t = 0.1, y-v = 0.2
  const Vec y = Vec::Constant(1, 1.2);
  CHECK(case2_bridge_drift(model_gen(zero_drift(), unit_sigma(1)), pb, 0.9, y,
                           true)[0] == doctest::Approx(-2.0));
  CHECK_THROWS_AS(case2_bridge_drift(m, pb, 1.0, y, true), std::invalid_argument);
}

TEST_CASE("inverse_diffusion guards against singular sigma") {
  GeneralModel m = model_gen(zero_drift(),
                             constant_field(Mat(Mat::Zero(1, 1))));
  CHECK_THROWS_AS(inverse_diffusion_matrix(m, 0.0, Vec::Zero(1)), numeric_error);

  GeneralModel ok = model_gen(zero_drift(), unit_sigma(1));
  CHECK(inverse_diffusion_matrix(ok, 0.0, Vec::Zero(1))(0, 0) == 1.0);

  // A = sigma^{-*} sigma^{-1} for a non-symmetric 2x2
  GeneralModel m2;
  m2.d = 2;
  m2.drift = [](double, Eigen::Ref<const Vec>, Eigen::Ref<Vec> out) { out.setZero(); };
  Mat S(2, 2);
  S << 2, 1, 0, 1;
  m2.sigma = constant_field(S);
  const Mat A = inverse_diffusion_matrix(m2, 0.0, Vec::Zero(2));
  const Mat Sinv = S.inverse();
  CHECK((A - Sinv.transpose() * Sinv).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("case2 weights: constant sigma, zero drift is bit-exactly zero") {
  Mat S(2, 2);
  S << 1.5, 0.3, -0.2, 0.9;
  GeneralModel m;
  m.d = 2;
  m.drift = [](double, Eigen::Ref<const Vec>, Eigen::Ref<Vec> out) { out.setZero(); };
  m.sigma = constant_field(S);
  const BridgeProblem pb(Vec::Zero(2), Vec::Ones(2), 1.0);

  const TimeGrid grid = make_uniform_grid(1.0, 50);
  Path y(grid, 2);
  NoiseStream ns(9, 4);
  for (std::size_t i = 0; i <= 50; ++i)
    for (int c = 0; c < 2; ++c)
      y.values(c, static_cast<Eigen::Index>(i)) = ns.gaussian(i, c);
  y.values.col(50) = pb.v;  // pin

  const auto wb = case2_bounded_log_weight(m, pb, y);
  CHECK(wb.total == 0.0);
  CHECK(wb.term_drift == 0.0);
  CHECK(wb.term_dA == 0.0);
  const auto wu = case2_unbounded_log_weight(m, pb, y);
  CHECK(wu.total == 0.0);
}

TEST_CASE("case2 weights require a pinned path") {
  GeneralModel m = model_gen(zero_drift(), unit_sigma(1));
  const auto pb = problem_1d(0.0, 1.0, 1.0);
  Path y(make_uniform_grid(1.0, 10), 1);  // ends at 0, not v = 1
  CHECK_THROWS_AS(case2_bounded_log_weight(m, pb, y), std::invalid_argument);
  CHECK_THROWS_AS(case2_unbounded_log_weight(m, pb, y), std::invalid_argument);
}

TEST_CASE("case2_bounded: constant drift on the deterministic ramp path") {
  // y_t = v + (T - t): integrand of the drift term is the constant c, so the
  // discrete sum equals c T at any K; total = -cT.
  const double c = 0.7, T = 1.0;
  GeneralModel m = model_gen(constant_field(Vec(Vec::Constant(1, c))), unit_sigma(1));
  const auto pb = problem_1d(1.0 + T, 1.0, T);
  for (int K : {16, 64, 256}) {
    const TimeGrid grid = make_uniform_grid(T, K);
    Path y(grid, 1);
    for (std::size_t i = 0; i <= static_cast<std::size_t>(K); ++i)
      y.values(0, static_cast<Eigen::Index>(i)) = 1.0 + (T - grid.node(i));
    const auto w = case2_bounded_log_weight(m, pb, y);
    CHECK(w.term_dA == 0.0);
    CHECK(w.total == doctest::Approx(-c * T).epsilon(1e-12));
  }
}

TEST_CASE("case2_unbounded: constant drift telescopes to c(v-u) - c^2 T/2") {
  const double c = -1.1, T = 1.0, u = 0.2, v = 1.0;
  GeneralModel m = model_gen(constant_field(Vec(Vec::Constant(1, c))), unit_sigma(1));
  m.drift_bounded = false;
  const auto pb = problem_1d(u, v, T);
  const TimeGrid grid = make_uniform_grid(T, 300);
  const auto sample = sample_case2_bridge(m, pb, grid, NoiseStream(13, 2), false);
  CHECK(sample.log_weight ==
        doctest::Approx(c * (v - u) - 0.5 * c * c * T).epsilon(1e-12));
  const auto wu = case2_unbounded_log_weight(m, pb, sample.path);
  CHECK(wu.total == sample.log_weight);
  CHECK(wu.term_dA == 0.0);
  CHECK(wu.total == doctest::Approx(wu.term_ito_b + wu.term_quad_b));
}

TEST_CASE("breakdown totals are the exact sum of their parts") {
  GeneralModel m = model_gen(
      [](double, Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out) {
        out[0] = std::sin(x[0]);
      },
      [](double, Eigen::Ref<const Vec> x, Eigen::Ref<Mat> out) {
        out(0, 0) = 1.0 + 0.5 * std::tanh(x[0]);
      });
  const auto pb = problem_1d(0.0, 1.0, 1.0);
  const TimeGrid grid = make_uniform_grid(1.0, 200);
  const auto yb = sample_case2_bridge(m, pb, grid, NoiseStream(14, 5), true);
  const auto wb = case2_bounded_log_weight(m, pb, yb.path);
  CHECK(wb.total == -(wb.term_drift + wb.term_dA));
  const auto yu = sample_case2_bridge(m, pb, grid, NoiseStream(14, 6), false);
  const auto wu = case2_unbounded_log_weight(m, pb, yu.path);
  CHECK(wu.total == -wu.term_dA + wu.term_ito_b + wu.term_quad_b);
}

TEST_CASE("drift invariance: constant drifts leave the conditioned law unchanged") {
  // sigma = 1: estimates of E[y_{T/2} | y_T = v] coincide for c in {-2, 0, 2}
  // and match the Brownian-bridge mean (u + v)/2.
  const double u = 0.0, v = 1.0, T = 1.0;
  const int N = 4000, K = 200;
  const auto pb = problem_1d(u, v, T);
  const TimeGrid grid = make_uniform_grid(T, K);
  std::vector<double> means, ses;
  for (double c : {-2.0, 0.0, 2.0}) {
    GeneralModel m = model_gen(constant_field(Vec(Vec::Constant(1, c))), unit_sigma(1));
    m.drift_bounded = false;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < N; ++i) {
      const auto ws = sample_case2_bridge(m, pb, grid,
                                          NoiseStream(15, static_cast<std::uint64_t>(i)),
                                          false);
      // weight is path-independent -> plain mean of the functional
      const double x = ws.path.values(0, K / 2);
      s1 += x;
      s2 += x * x;
    }
    const double mean = s1 / N;
    means.push_back(mean);
    ses.push_back(std::sqrt(std::max(0.0, s2 / N - mean * mean) / N));
  }
  for (std::size_t a = 0; a < means.size(); ++a) {
    CHECK(std::abs(means[a] - 0.5) < 3.0 * ses[a] + 2.0 / K);  // Euler bias margin
    for (std::size_t b = a + 1; b < means.size(); ++b)
      CHECK(std::abs(means[a] - means[b]) < 3.0 * std::hypot(ses[a], ses[b]));
  }
}
