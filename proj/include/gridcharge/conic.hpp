#pragma once

#include <cstddef>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace gridcharge::conic {

using Index = std::size_t;
inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct LinearTerm {
  Index var = 0;
  double coef = 0.0;
};

/// Sparse affine expression `constant + sum(coef * x[var])`.
struct LinearExpr {
  std::vector<LinearTerm> terms;
  double constant = 0.0;

  LinearExpr& add(Index var, double coef);
  LinearExpr& add(const LinearExpr& other, double scale = 1.0);
  /// Merges repeated variables and drops exact zeros; terms end up sorted.
  void compress();
  double evaluate(const Eigen::VectorXd& x) const;
};

/// `weight * log(x[var])` added to the objective.
struct LogTerm {
  Index var = 0;
  double weight = 0.0;
};

/// Rotated second-order cone: x[u] >= 0, x[v] >= 0, x[u] * x[v] >= x[z]^2.
struct RotatedCone {
  Index u = 0;
  Index v = 0;
  Index z = 0;
};

struct EqualityRow {
  std::vector<LinearTerm> terms;
  double rhs = 0.0;
};

/// maximize  c'x + sum_k w_k log x_k
/// s.t.      A x = b,  lower <= x <= upper,  (u, v, z) in rotated cones.
struct ConicProblem {
  std::vector<double> objective;
  std::vector<double> lower;
  std::vector<double> upper;
  std::vector<std::string> names;
  std::vector<LogTerm> log_terms;
  std::vector<EqualityRow> equalities;
  std::vector<RotatedCone> cones;

  Index num_vars() const { return objective.size(); }

  Index add_variable(double lo = -kInfinity, double hi = kInfinity,
                     std::string name = {});
  void add_objective(Index var, double coef) { objective.at(var) += coef; }
  void add_log_term(Index var, double weight) { log_terms.push_back({var, weight}); }
  /// Adds `expr == rhs`; the constant part of `expr` moves to the right.
  void add_equality(LinearExpr expr, double rhs = 0.0);
  void add_cone(Index u, Index v, Index z) { cones.push_back({u, v, z}); }

  /// c'x + sum w log x; -inf outside the log domain.
  double evaluate_objective(const Eigen::VectorXd& x) const;

  /// Throws std::invalid_argument on malformed indices, weights or bounds.
  void validate() const;
};

enum class Status { optimal, infeasible, numerical_failure };

const char* to_string(Status status);

struct Solution {
  Status status = Status::numerical_failure;
  Eigen::VectorXd x;
  double objective = 0.0;
  /// Scaled KKT residuals: primal infeasibility relative to the constraint
  /// data, stationarity relative to the objective gradient, and the
  /// complementarity gap s'z relative to max(1, |objective|).
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  double complementarity = 0.0;
  int iterations = 0;
  std::string message;

  bool optimal() const { return status == Status::optimal; }
};

struct SolverConfig {
  double tolerance = 1e-8;
  int max_iterations = 200;
  /// Floor on the centering parameter: each step targets a complementarity
  /// of at least barrier_reduction times the current one.
  double barrier_reduction = 1e-4;
  bool presolve = true;
  /// Overrides the default interior start; must be strictly interior.
  std::optional<Eigen::VectorXd> initial_point;

  void validate() const;
};

/// Backend interface, so a reference solver can be swapped in for
/// cross-checking. The default backend is InteriorPointSolver.
class SolverBackend {
 public:
  virtual ~SolverBackend() = default;
  virtual Solution solve(const ConicProblem& problem,
                         const SolverConfig& config) const = 0;
};

/// Infeasible-start primal-dual interior-point method with Nesterov-Todd
/// scaling and Mehrotra predictor-corrector steps. Bounds form a
/// nonnegative orthant, each rotated cone maps to a 3-D second-order cone,
/// and log terms enter the Newton system through their exact Hessian.
class InteriorPointSolver final : public SolverBackend {
 public:
  Solution solve(const ConicProblem& problem,
                 const SolverConfig& config) const override;
};

Solution solve(const ConicProblem& problem, const SolverConfig& config = {});

struct FeasibilityReport {
  double equality = 0.0;  // max |a_i x - b_i|
  double bound = 0.0;     // max distance outside [lower, upper]
  double cone = 0.0;      // max of z^2 - u v, -u, -v over cones
  double tolerance = 0.0;

  double worst() const;
  bool pass() const { return worst() <= tolerance; }
};

FeasibilityReport check_feasible(const ConicProblem& problem,
                                 const Eigen::VectorXd& x, double tol);

/// Plain-text dump for debugging and external cross-checks. The format is
/// line oriented:
///
///     conic-problem 1
///     vars <n>
///     var <index> <lower> <upper> <objective> [name]
///     log <var> <weight>
///     eq <rhs> <nnz> <var>:<coef> ...
///     cone <u> <v> <z>
///     end
void write_problem(std::ostream& out, const ConicProblem& problem);
ConicProblem read_problem(std::istream& in);

}  // namespace gridcharge::conic
