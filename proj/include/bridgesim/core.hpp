#ifndef BRIDGESIM_CORE_HPP
#define BRIDGESIM_CORE_HPP

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

/**
 * \file
 * \brief Shared domain types: time grids, sample paths, bridge problems and
 *        coefficient-function abstractions.
 */

namespace bridgesim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Error taxonomy
// ---------------------------------------------------------------------------

/// Numerical failure (singular matrix, failed factorization, ...).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Coefficient or expression evaluation produced an invalid value.
struct evaluation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The controllability Gramian is singular; the bridge SDE is ill-posed.
struct controllability_error : numeric_error {
  using numeric_error::numeric_error;
};

/// An integrated path left the admissible region.
struct blowup_error : numeric_error {
  blowup_error(const std::string& what, double t)
      : numeric_error(what), time(t) {}
  double time;  ///< first grid time at which the state was non-finite or huge
};

/// No usable samples were available for estimation.
struct estimation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A brute-force oracle did not accumulate enough accepted paths.
struct oracle_insufficient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// TimeGrid
// ---------------------------------------------------------------------------

/// Strictly increasing partition 0 = t_0 < t_1 < ... < t_K = T.
class TimeGrid {
 public:
  TimeGrid() = default;

  explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    if (nodes_.size() < 3)
      throw std::invalid_argument("TimeGrid: need at least 3 nodes (K >= 2)");
    if (nodes_.front() != 0.0)
      throw std::invalid_argument("TimeGrid: first node must be 0");
    for (std::size_t i = 0; i + 1 < nodes_.size(); ++i) {
      if (!(nodes_[i] < nodes_[i + 1]))
        throw std::invalid_argument("TimeGrid: nodes must be strictly increasing");
    }
  }

  /// Number of nodes, K + 1.
  std::size_t size() const { return nodes_.size(); }
  /// Number of intervals, K.
  std::size_t intervals() const { return nodes_.size() - 1; }

  double node(std::size_t i) const { return nodes_[i]; }
  double operator[](std::size_t i) const { return nodes_[i]; }
  /// Interval length t_{i+1} - t_i.
  double dt(std::size_t i) const { return nodes_[i + 1] - nodes_[i]; }

  double T() const { return nodes_.back(); }

  double mesh() const {
    double m = 0.0;
    for (std::size_t i = 0; i + 1 < nodes_.size(); ++i)
      m = std::max(m, nodes_[i + 1] - nodes_[i]);
    return m;
  }

  /// Index of a node equal to t (within a tight tolerance); throws otherwise.
  std::size_t index_of(double t, double tol = 1e-12) const {
    const double scale = 1.0 + std::abs(T());
    for (std::size_t i = 0; i < nodes_.size(); ++i)
      if (std::abs(nodes_[i] - t) <= tol * scale) return i;
    throw std::invalid_argument("TimeGrid: time " + std::to_string(t) +
                                " is not a grid node");
  }

  const std::vector<double>& nodes() const { return nodes_; }

 private:
  std::vector<double> nodes_;
};

/// Uniform grid t_i = i T / K.
inline TimeGrid make_uniform_grid(double T, int K) {
  if (!(T > 0.0)) throw std::invalid_argument("make_uniform_grid: T must be > 0");
  if (K < 2) throw std::invalid_argument("make_uniform_grid: K must be >= 2");
  std::vector<double> nodes(static_cast<std::size_t>(K) + 1);
  for (int i = 0; i <= K; ++i) nodes[i] = T * static_cast<double>(i) / K;
  nodes[0] = 0.0;
  nodes[K] = T;
  return TimeGrid(std::move(nodes));
}

/// Grid clustered near T: t_i = T (1 - (1 - i/K)^gamma), gamma >= 1.
inline TimeGrid make_refined_grid(double T, int K, double gamma = 2.0) {
  if (!(T > 0.0)) throw std::invalid_argument("make_refined_grid: T must be > 0");
  if (K < 2) throw std::invalid_argument("make_refined_grid: K must be >= 2");
  if (!(gamma >= 1.0))
    throw std::invalid_argument("make_refined_grid: gamma must be >= 1");
  std::vector<double> nodes(static_cast<std::size_t>(K) + 1);
  for (int i = 0; i <= K; ++i) {
    const double r = 1.0 - static_cast<double>(i) / K;
    nodes[i] = T * (1.0 - std::pow(r, gamma));
  }
  nodes[0] = 0.0;
  nodes[K] = T;
  return TimeGrid(std::move(nodes));
}

// ---------------------------------------------------------------------------
// Path
// ---------------------------------------------------------------------------

/// d-dimensional sample path tabulated on a TimeGrid (one column per node).
struct Path {
  TimeGrid grid;
  Mat values;  ///< d x (K+1)

  Path() = default;
  Path(TimeGrid g, int d)
      : grid(std::move(g)),
        values(Mat::Zero(d, static_cast<Eigen::Index>(grid.size()))) {}

  int dim() const { return static_cast<int>(values.rows()); }

  bool all_finite() const { return values.allFinite(); }

  /// Column view of the state at node i.
  Eigen::Ref<const Vec> at(std::size_t i) const { return values.col(static_cast<Eigen::Index>(i)); }

  /// State at grid time t (t must be a node).
  Vec at_time(double t) const { return values.col(static_cast<Eigen::Index>(grid.index_of(t))); }
};

/// Post-hoc validator: every tabulated value finite.
inline void validate_finite(const Path& p) {
  if (!p.all_finite())
    throw numeric_error("Path contains non-finite entries");
}

// ---------------------------------------------------------------------------
// BridgeProblem, WeightedSample
// ---------------------------------------------------------------------------

/// Endpoint data of a conditioning problem: start u, target v, horizon T.
struct BridgeProblem {
  Vec u;
  Vec v;
  double T = 0.0;

  BridgeProblem() = default;
  BridgeProblem(Vec u_, Vec v_, double T_) : u(std::move(u_)), v(std::move(v_)), T(T_) {
    if (!(T > 0.0)) throw std::invalid_argument("BridgeProblem: T must be > 0");
    if (u.size() != v.size())
      throw std::invalid_argument("BridgeProblem: dim(u) != dim(v)");
  }

  int dim() const { return static_cast<int>(u.size()); }
};

/// A bridge path together with its log importance weight.
/// log_weight = -inf marks a degenerate (rejected) path; +inf is forbidden.
struct WeightedSample {
  Path path;
  double log_weight = 0.0;

  bool degenerate() const { return std::isinf(log_weight) && log_weight < 0; }
};

// ---------------------------------------------------------------------------
// Coefficient functions
// ---------------------------------------------------------------------------
//
// All callbacks write into a caller-provided output so that hot loops run
// allocation-free. Output shape is fixed over the whole domain.

using ScalarField = std::function<double(double t, Eigen::Ref<const Vec> x)>;
using VectorField =
    std::function<void(double t, Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out)>;
using MatrixField =
    std::function<void(double t, Eigen::Ref<const Vec> x, Eigen::Ref<Mat> out)>;

/// Deterministic time-only coefficients (Case-1 models).
using TimeVector = std::function<void(double t, Eigen::Ref<Vec> out)>;
using TimeMatrix = std::function<void(double t, Eigen::Ref<Mat> out)>;

inline TimeMatrix constant_matrix(const Mat& M) {
  return [M](double, Eigen::Ref<Mat> out) { out = M; };
}
inline TimeVector constant_vector(const Vec& v) {
  return [v](double, Eigen::Ref<Vec> out) { out = v; };
}
inline VectorField constant_field(const Vec& v) {
  return [v](double, Eigen::Ref<const Vec>, Eigen::Ref<Vec> out) { out = v; };
}
inline MatrixField constant_field(const Mat& M) {
  return [M](double, Eigen::Ref<const Vec>, Eigen::Ref<Mat> out) { out = M; };
}

// Forward declaration (definition in linalg.hpp).
Mat left_pinv(const Mat& M);

/// Case-1 model: dx = (sigma_t h(t,x) + A_t x + b_t) dt + sigma_t dw,
/// with A, b, sigma deterministic in t and h an R^m-valued perturbation.
struct LinearModel {
  int d = 0;  ///< state dimension
  int m = 0;  ///< driving noise dimension
  TimeMatrix A;           ///< d x d
  TimeVector b;           ///< d
  TimeMatrix sigma;       ///< d x m
  VectorField h;          ///< R^m; empty means h == 0
  TimeMatrix sigma_plus;  ///< m x d left inverse of sigma; empty means pinv(sigma)

  Mat A_at(double t) const {
    Mat out(d, d);
    A(t, out);
    return out;
  }
  Vec b_at(double t) const {
    Vec out(d);
    b(t, out);
    return out;
  }
  Mat sigma_at(double t) const {
    Mat out(d, m);
    sigma(t, out);
    return out;
  }
  Mat sigma_plus_at(double t) const {
    if (sigma_plus) {
      Mat out(m, d);
      sigma_plus(t, out);
      return out;
    }
    return left_pinv(sigma_at(t));
  }
  bool has_perturbation() const { return static_cast<bool>(h); }

  /// On-demand check of sigma_plus(t) * sigma(t) = Id_m.
  void validate_sigma_plus(double t, double tol = 1e-10) const {
    const Mat prod = sigma_plus_at(t) * sigma_at(t);
    const double err = (prod - Mat::Identity(m, m)).cwiseAbs().maxCoeff();
    if (err > tol)
      throw numeric_error("LinearModel: sigma_plus is not a left inverse of sigma at t=" +
                          std::to_string(t) + " (error " + std::to_string(err) + ")");
  }
};

/// Case-2 model: dx = b(t,x) dt + sigma(t,x) dw with invertible square sigma.
struct GeneralModel {
  int d = 0;
  VectorField drift;   ///< b(t,x) in R^d
  MatrixField sigma;   ///< d x d, invertible
  bool drift_bounded = true;  ///< whether the bounded-drift weight formula applies

  Vec drift_at(double t, Eigen::Ref<const Vec> x) const {
    Vec out(d);
    drift(t, x, out);
    return out;
  }
  Mat sigma_at(double t, Eigen::Ref<const Vec> x) const {
    Mat out(d, d);
    sigma(t, x, out);
    return out;
  }
};

}  // namespace bridgesim

#endif  // BRIDGESIM_CORE_HPP
