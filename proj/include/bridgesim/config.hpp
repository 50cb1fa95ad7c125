#ifndef BRIDGESIM_CONFIG_HPP
#define BRIDGESIM_CONFIG_HPP

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

#include "bridgesim/core.hpp"
#include "bridgesim/estimate.hpp"
#include "bridgesim/expr.hpp"

/**
 * \file
 * \brief Run configuration: JSON schema, coefficient expressions, and model
 *        construction. Matrices are nested arrays whose entries are numbers
 *        or expression strings.
 */

namespace bridgesim {

using json = nlohmann::json;

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ModelKind { Linear, General };
enum class GridKind { Uniform, Refined };

inline Method parse_method(const std::string& s) {
  if (s == "case1-transform") return Method::Case1Transform;
  if (s == "case1-sde") return Method::Case1Sde;
  if (s == "case2-bounded") return Method::Case2Bounded;
  if (s == "case2-unbounded") return Method::Case2Unbounded;
  if (s == "bridge2d-closed") return Method::Bridge2dClosed;
  if (s == "bridge2d-sde") return Method::Bridge2dSde;
  throw config_error("unknown method '" + s + "'");
}

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Case1Transform: return "case1-transform";
    case Method::Case1Sde: return "case1-sde";
    case Method::Case2Bounded: return "case2-bounded";
    case Method::Case2Unbounded: return "case2-unbounded";
    case Method::Bridge2dClosed: return "bridge2d-closed";
    case Method::Bridge2dSde: return "bridge2d-sde";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Expression matrices
// ---------------------------------------------------------------------------

using ExprMatrix = std::vector<std::vector<expr::NodePtr>>;
using ExprVector = std::vector<expr::NodePtr>;

namespace detail {

inline expr::NodePtr parse_entry(const json& j, const std::string& where) {
  try {
    if (j.is_number()) return expr::make_number(j.get<double>());
    if (j.is_string()) return expr::parse(j.get<std::string>());
  } catch (const expr::parse_error& e) {
    throw config_error(where + ": " + e.what());
  }
  throw config_error(where + ": entry must be a number or an expression string");
}

inline ExprMatrix parse_matrix(const json& j, int rows, int cols,
                               const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != rows)
    throw config_error(where + ": expected " + std::to_string(rows) + " rows");
  ExprMatrix out(rows);
  for (int r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<int>(j[r].size()) != cols)
      throw config_error(where + ": row " + std::to_string(r) + " must have " +
                         std::to_string(cols) + " entries");
    out[r].resize(cols);
    for (int c = 0; c < cols; ++c) out[r][c] = parse_entry(j[r][c], where);
  }
  return out;
}

inline ExprVector parse_vector_expr(const json& j, int n, const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != n)
    throw config_error(where + ": expected " + std::to_string(n) + " entries");
  ExprVector out(n);
  for (int i = 0; i < n; ++i) out[i] = parse_entry(j[i], where);
  return out;
}

inline Vec parse_numeric_vector(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty())
    throw config_error(where + ": expected a non-empty numeric array");
  Vec out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw config_error(where + ": entries must be numbers");
    out[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return out;
}

inline void require_time_only(const ExprMatrix& m, const std::string& where) {
  for (const auto& row : m)
    for (const auto& e : row)
      if (expr::uses_state(*e))
        throw config_error(where + ": deterministic coefficient may depend on t only");
}

inline void require_time_only(const ExprVector& v, const std::string& where) {
  for (const auto& e : v)
    if (expr::uses_state(*e))
      throw config_error(where + ": deterministic coefficient may depend on t only");
}

inline void require_state_dim(const ExprMatrix& m, int d, const std::string& where) {
  for (const auto& row : m)
    for (const auto& e : row)
      if (expr::max_var_index(*e) > d)
        throw config_error(where + ": expression references x beyond dimension " +
                           std::to_string(d));
}

inline void require_state_dim(const ExprVector& v, int d, const std::string& where) {
  for (const auto& e : v)
    if (expr::max_var_index(*e) > d)
      throw config_error(where + ": expression references x beyond dimension " +
                         std::to_string(d));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RunConfig
// ---------------------------------------------------------------------------

struct FunctionalSpec {
  enum class Kind { Terminal, AtTime, Integral } kind = Kind::Terminal;
  int coordinate = 1;          ///< 1-based state coordinate
  double time = 0.0;           ///< for AtTime
  expr::NodePtr integrand;     ///< for Integral: int_0^T g(t, x_t) dt
};

struct OracleSpec {
  enum class Kind { Rejection, Gaussian } kind = Kind::Rejection;
  double epsilon = 0.0;  ///< 0 = use the default radius rule
  long paths = 1000000;
  int grid_factor = 4;  ///< oracle grid refinement relative to the run grid
};

struct RunConfig {
  ModelKind kind = ModelKind::General;
  int dimension = 1;
  int noise_dim = 1;  ///< m (linear models)

  // linear coefficients (entries as expressions in t)
  ExprMatrix A, sigma_lin, sigma_plus_lin;  // sigma_plus optional (empty)
  ExprVector b_lin, h_lin;                  // h optional (empty)

  // general coefficients (expressions in t and x)
  ExprVector b_gen;
  ExprMatrix sigma_gen;
  bool drift_bounded = true;

  // bridge
  Vec u, v;
  double T = 1.0;

  // run
  long paths = 10000;
  int steps = 1000;
  GridKind grid_kind = GridKind::Uniform;
  double gamma = 2.0;
  std::uint64_t seed = 0;
  Method method = Method::Case2Unbounded;

  FunctionalSpec functional;
  std::optional<OracleSpec> oracle;

  // output
  std::string out_dir = ".";
  std::vector<std::string> formats = {"csv", "json"};

  std::uint64_t hash = 0;  ///< FNV-1a of the canonical JSON dump

  TimeGrid make_grid(int steps_override = -1) const {
    const int K = steps_override > 0 ? steps_override : steps;
    return grid_kind == GridKind::Uniform ? make_uniform_grid(T, K)
                                          : make_refined_grid(T, K, gamma);
  }

  BridgeProblem problem() const { return BridgeProblem(u, v, T); }

  LinearModel linear_model() const;
  GeneralModel general_model() const;
};

// ---------------------------------------------------------------------------
// Model construction from expression tables
// ---------------------------------------------------------------------------

namespace detail {

inline TimeMatrix expr_time_matrix(const ExprMatrix& m) {
  return [m, empty = Vec()](double t, Eigen::Ref<Mat> out) {
    for (std::size_t r = 0; r < m.size(); ++r)
      for (std::size_t c = 0; c < m[r].size(); ++c)
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            expr::eval(*m[r][c], t, empty);
  };
}

inline TimeVector expr_time_vector(const ExprVector& v) {
  return [v, empty = Vec()](double t, Eigen::Ref<Vec> out) {
    for (std::size_t i = 0; i < v.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = expr::eval(*v[i], t, empty);
  };
}

inline VectorField expr_vector_field(const ExprVector& v) {
  return [v](double t, Eigen::Ref<const Vec> x, Eigen::Ref<Vec> out) {
    for (std::size_t i = 0; i < v.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = expr::eval(*v[i], t, x);
  };
}

inline MatrixField expr_matrix_field(const ExprMatrix& m) {
  return [m](double t, Eigen::Ref<const Vec> x, Eigen::Ref<Mat> out) {
    for (std::size_t r = 0; r < m.size(); ++r)
      for (std::size_t c = 0; c < m[r].size(); ++c)
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
            expr::eval(*m[r][c], t, x);
  };
}

}  // namespace detail

inline LinearModel RunConfig::linear_model() const {
  if (kind != ModelKind::Linear)
    throw config_error("model kind is not 'linear'");
  LinearModel lm;
  lm.d = dimension;
  lm.m = noise_dim;
  lm.A = detail::expr_time_matrix(A);
  lm.b = detail::expr_time_vector(b_lin);
  lm.sigma = detail::expr_time_matrix(sigma_lin);
  if (!h_lin.empty()) lm.h = detail::expr_vector_field(h_lin);
  if (!sigma_plus_lin.empty())
    lm.sigma_plus = detail::expr_time_matrix(sigma_plus_lin);
  return lm;
}

inline GeneralModel RunConfig::general_model() const {
  if (kind != ModelKind::General)
    throw config_error("model kind is not 'general'");
  GeneralModel gm;
  gm.d = dimension;
  gm.drift = detail::expr_vector_field(b_gen);
  gm.sigma = detail::expr_matrix_field(sigma_gen);
  gm.drift_bounded = drift_bounded;
  return gm;
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline RunConfig parse_config(const json& j) {
  RunConfig cfg;
  cfg.hash = fnv1a64(j.dump());

  if (!j.contains("model") || !j.contains("bridge") || !j.contains("run"))
    throw config_error("config needs 'model', 'bridge' and 'run' sections");

  const json& jm = j.at("model");
  const std::string kind = jm.value("kind", "");
  if (kind == "linear")
    cfg.kind = ModelKind::Linear;
  else if (kind == "general")
    cfg.kind = ModelKind::General;
  else
    throw config_error("model.kind must be 'linear' or 'general'");
  cfg.dimension = jm.value("dimension", 0);
  if (cfg.dimension < 1) throw config_error("model.dimension must be >= 1");
  const int d = cfg.dimension;

  if (cfg.kind == ModelKind::Linear) {
    cfg.noise_dim = jm.value("noise_dimension", d);
    if (cfg.noise_dim < 1) throw config_error("model.noise_dimension must be >= 1");
    const int m = cfg.noise_dim;
    cfg.A = detail::parse_matrix(jm.at("A"), d, d, "model.A");
    cfg.b_lin = detail::parse_vector_expr(jm.at("b"), d, "model.b");
    cfg.sigma_lin = detail::parse_matrix(jm.at("sigma"), d, m, "model.sigma");
    detail::require_time_only(cfg.A, "model.A");
    detail::require_time_only(cfg.b_lin, "model.b");
    detail::require_time_only(cfg.sigma_lin, "model.sigma");
    if (jm.contains("h")) {
      cfg.h_lin = detail::parse_vector_expr(jm.at("h"), m, "model.h");
      detail::require_state_dim(cfg.h_lin, d, "model.h");
    }
    if (jm.contains("sigma_plus")) {
      cfg.sigma_plus_lin =
          detail::parse_matrix(jm.at("sigma_plus"), m, d, "model.sigma_plus");
      detail::require_time_only(cfg.sigma_plus_lin, "model.sigma_plus");
    }
  } else {
    cfg.noise_dim = d;
    cfg.b_gen = detail::parse_vector_expr(jm.at("b"), d, "model.b");
    cfg.sigma_gen = detail::parse_matrix(jm.at("sigma"), d, d, "model.sigma");
    detail::require_state_dim(cfg.b_gen, d, "model.b");
    detail::require_state_dim(cfg.sigma_gen, d, "model.sigma");
    cfg.drift_bounded = jm.value("drift_bounded", true);
  }

  const json& jb = j.at("bridge");
  cfg.u = detail::parse_numeric_vector(jb.at("u"), "bridge.u");
  cfg.v = detail::parse_numeric_vector(jb.at("v"), "bridge.v");
  cfg.T = jb.value("T", 0.0);
  if (!(cfg.T > 0.0)) throw config_error("bridge.T must be > 0");
  if (cfg.u.size() != d || cfg.v.size() != d)
    throw config_error("bridge.u / bridge.v must have the model dimension");

  const json& jr = j.at("run");
  cfg.paths = jr.value("paths", 10000L);
  cfg.steps = jr.value("steps", 1000);
  if (cfg.paths < 1) throw config_error("run.paths must be >= 1");
  if (cfg.steps < 2) throw config_error("run.steps must be >= 2");
  const std::string grid = jr.value("grid", "uniform");
  if (grid == "uniform")
    cfg.grid_kind = GridKind::Uniform;
  else if (grid == "refined")
    cfg.grid_kind = GridKind::Refined;
  else
    throw config_error("run.grid must be 'uniform' or 'refined'");
  cfg.gamma = jr.value("gamma", 2.0);
  cfg.seed = jr.value("seed", 0ULL);
  cfg.method = parse_method(jr.value("method", ""));

  // method / model compatibility
  const bool is_case1 = cfg.method == Method::Case1Transform ||
                        cfg.method == Method::Case1Sde ||
                        cfg.method == Method::Bridge2dClosed ||
                        cfg.method == Method::Bridge2dSde;
  if (is_case1 && cfg.kind != ModelKind::Linear)
    throw config_error("method " + method_name(cfg.method) +
                       " requires a linear model");
  if (!is_case1 && cfg.kind != ModelKind::General)
    throw config_error("method " + method_name(cfg.method) +
                       " requires a general model");
  if ((cfg.method == Method::Bridge2dClosed || cfg.method == Method::Bridge2dSde) &&
      d != 2)
    throw config_error("bridge2d methods require dimension 2");

  if (j.contains("functional")) {
    const json& jf = j.at("functional");
    const std::string fk = jf.value("kind", "terminal");
    if (fk == "terminal")
      cfg.functional.kind = FunctionalSpec::Kind::Terminal;
    else if (fk == "at-time")
      cfg.functional.kind = FunctionalSpec::Kind::AtTime;
    else if (fk == "integral")
      cfg.functional.kind = FunctionalSpec::Kind::Integral;
    else
      throw config_error("functional.kind must be terminal, at-time or integral");
    cfg.functional.coordinate = jf.value("coordinate", 1);
    if (cfg.functional.coordinate < 1 || cfg.functional.coordinate > d)
      throw config_error("functional.coordinate out of range");
    cfg.functional.time = jf.value("time", cfg.T);
    if (cfg.functional.kind == FunctionalSpec::Kind::Integral) {
      cfg.functional.integrand =
          detail::parse_entry(jf.at("expr"), "functional.expr");
      detail::require_state_dim({cfg.functional.integrand}, d, "functional.expr");
    }
  }

  if (j.contains("oracle")) {
    const json& jo = j.at("oracle");
    OracleSpec spec;
    const std::string ok = jo.value("kind", "rejection");
    if (ok == "rejection")
      spec.kind = OracleSpec::Kind::Rejection;
    else if (ok == "gaussian")
      spec.kind = OracleSpec::Kind::Gaussian;
    else
      throw config_error("oracle.kind must be 'rejection' or 'gaussian'");
    spec.epsilon = jo.value("epsilon", 0.0);
    spec.paths = jo.value("paths", 1000000L);
    spec.grid_factor = jo.value("grid_factor", 4);
    cfg.oracle = spec;
  }

  if (j.contains("output")) {
    const json& jo = j.at("output");
    cfg.out_dir = jo.value("directory", ".");
    if (jo.contains("formats"))
      cfg.formats = jo.at("formats").get<std::vector<std::string>>();
  }
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw config_error(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(j);
}

/// Path functional selected by the config (built-ins only).
inline PathFunctional make_functional(const FunctionalSpec& spec) {
  switch (spec.kind) {
    case FunctionalSpec::Kind::Terminal:
      return [c = spec.coordinate](const Path& p) {
        return p.values(c - 1, static_cast<Eigen::Index>(p.grid.size()) - 1);
      };
    case FunctionalSpec::Kind::AtTime:
      return [c = spec.coordinate, t = spec.time](const Path& p) {
        return p.values(c - 1, static_cast<Eigen::Index>(p.grid.index_of(t)));
      };
    case FunctionalSpec::Kind::Integral:
      return [g = spec.integrand](const Path& p) {
        // trapezoid of g(t, x_t) along the path
        double acc = 0.0;
        double prev = expr::eval(*g, p.grid.node(0), p.at(0));
        for (std::size_t i = 0; i + 1 < p.grid.size(); ++i) {
          const double next = expr::eval(*g, p.grid.node(i + 1), p.at(i + 1));
          acc += 0.5 * p.grid.dt(i) * (prev + next);
          prev = next;
        }
        return acc;
      };
  }
  throw config_error("corrupt functional spec");
}

}  // namespace bridgesim

#endif  // BRIDGESIM_CONFIG_HPP
