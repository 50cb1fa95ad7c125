#include <doctest.h>

#include <random>

#include "bridgesim/core.hpp"

using namespace bridgesim;

TEST_CASE("uniform grid nodes") {
  const TimeGrid g = make_uniform_grid(1.0, 2);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.5);
  CHECK(g[2] == 1.0);

  const TimeGrid g2 = make_uniform_grid(2.0, 4);
  CHECK(g2[0] == 0.0);
  CHECK(g2[1] == 0.5);
  CHECK(g2[2] == 1.0);
  CHECK(g2[3] == 1.5);
  CHECK(g2[4] == 2.0);

  const TimeGrid g3 = make_uniform_grid(1.0, 1000);
  CHECK(g3.mesh() == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("uniform grid rejects bad arguments") {
  CHECK_THROWS_AS(make_uniform_grid(0.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(make_uniform_grid(-1.0, 10), std::invalid_argument);
  CHECK_THROWS_AS(make_uniform_grid(1.0, 1), std::invalid_argument);
}

TEST_CASE("refined grid nodes") {
  const TimeGrid g1 = make_refined_grid(1.0, 2, 1.0);
  CHECK(g1[0] == 0.0);
  CHECK(g1[1] == doctest::Approx(0.5));
  CHECK(g1[2] == 1.0);

  const TimeGrid g2 = make_refined_grid(1.0, 2, 2.0);
  CHECK(g2[1] == doctest::Approx(0.75));
  CHECK(g2[2] == 1.0);

  const TimeGrid g3 = make_refined_grid(1.0, 100, 2.0);
  // last interval: 1 - t_{K-1} = (1/100)^2
  CHECK(g3.dt(99) == doctest::Approx(1e-4).epsilon(1e-10));

  CHECK_THROWS_AS(make_refined_grid(1.0, 100, 0.5), std::invalid_argument);
}

TEST_CASE("grid constructors: strict monotonicity and exact endpoints") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> uT(0.1, 10.0);
  std::uniform_int_distribution<int> uK(2, 500);
  std::uniform_real_distribution<double> ug(1.0, 4.0);
  for (int rep = 0; rep < 50; ++rep) {
    const double T = uT(rng);
    const int K = uK(rng);
    for (const TimeGrid& g :
         {make_uniform_grid(T, K), make_refined_grid(T, K, ug(rng))}) {
      CHECK(g[0] == 0.0);
      CHECK(g.T() == T);
      for (std::size_t i = 0; i < g.intervals(); ++i) CHECK(g[i] < g[i + 1]);
    }
  }
}

TEST_CASE("TimeGrid index_of and validation") {
  const TimeGrid g = make_uniform_grid(1.0, 4);
  CHECK(g.index_of(0.5) == 2);
  CHECK(g.index_of(1.0) == 4);
  CHECK_THROWS_AS(g.index_of(0.33), std::invalid_argument);

  CHECK_THROWS_AS(TimeGrid({0.0, 1.0}), std::invalid_argument);     // K < 2
  CHECK_THROWS_AS(TimeGrid({0.1, 0.5, 1.0}), std::invalid_argument);  // t0 != 0
  CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5, 1.0}), std::invalid_argument);
}

TEST_CASE("Path validation") {
  Path p(make_uniform_grid(1.0, 4), 2);
  CHECK(p.dim() == 2);
  CHECK(p.all_finite());
  CHECK_NOTHROW(validate_finite(p));
  p.values(1, 3) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(validate_finite(p), numeric_error);
}

TEST_CASE("BridgeProblem validation") {
  Vec u = Vec::Zero(2), v = Vec::Ones(2);
  CHECK_NOTHROW(BridgeProblem(u, v, 1.0));
  CHECK_THROWS_AS(BridgeProblem(u, v, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(BridgeProblem(u, Vec::Ones(3), 1.0), std::invalid_argument);
}

TEST_CASE("WeightedSample degenerate flag") {
  WeightedSample s;
  CHECK(!s.degenerate());
  s.log_weight = -std::numeric_limits<double>::infinity();
  CHECK(s.degenerate());
}

TEST_CASE("LinearModel sigma_plus validation") {
  LinearModel m;
  m.d = 1;
  m.m = 1;
  m.A = constant_matrix(Mat::Zero(1, 1));
  m.b = constant_vector(Vec::Zero(1));
  m.sigma = constant_matrix(Mat::Constant(1, 1, 2.0));
  // default: pseudo-inverse
  CHECK(m.sigma_plus_at(0.0)(0, 0) == doctest::Approx(0.5));
  CHECK_NOTHROW(m.validate_sigma_plus(0.0));
  // wrong explicit left inverse is caught
  m.sigma_plus = constant_matrix(Mat::Constant(1, 1, 1.0));
  CHECK_THROWS_AS(m.validate_sigma_plus(0.0), numeric_error);
}
