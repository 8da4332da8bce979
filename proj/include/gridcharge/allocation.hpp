#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gridcharge/conic.hpp"
#include "gridcharge/network.hpp"

namespace gridcharge::alloc {

enum class Algorithm { max_flow, proportional_fairness };

/// "mf" / "pf" (also the long names); nullopt on anything else.
std::optional<Algorithm> parse_algorithm(const std::string& text);
const char* to_string(Algorithm algo);  // "mf" or "pf"

/// Vehicle count per node, addressed by tree index. The root never holds
/// vehicles.
class Occupancy {
 public:
  explicit Occupancy(std::size_t nodes = 0) : count_(nodes, 0) {}

  std::size_t size() const { return count_.size(); }
  int operator[](std::size_t node) const { return count_[node]; }
  void set(std::size_t node, int count);
  void add(std::size_t node, int delta = 1);
  int total() const { return total_; }
  bool empty() const { return total_ == 0; }
  const std::vector<int>& counts() const { return count_; }

  bool operator==(const Occupancy&) const = default;

 private:
  std::vector<int> count_;
  int total_ = 0;
};

struct ModelOptions {
  double alpha = 0.1;
  /// Defaults to the tree's nominal voltage.
  std::optional<double> nominal_voltage;
  /// Fix the feeder at nominal voltage instead of leaving it in the box.
  bool pin_root = false;
  /// Leave vehicle-free subtrees out of the conic problem; they are
  /// reconstructed at their parent's voltage with zero flow.
  bool prune_idle = true;
};

/// Where each physical quantity lives in the conic variable vector. The
/// problem is posed per-unit: W and P variables are in units of
/// base = V_nominal^2, so every nominal voltage yields the same conic problem.
struct Layout {
  static constexpr conic::Index kNone = static_cast<conic::Index>(-1);

  std::vector<conic::Index> w_node;  // W_ii per tree index
  std::vector<conic::Index> w_edge;  // W_ij for the edge into child j
  std::vector<conic::Index> power;   // P_i for occupied nodes
  std::vector<bool> modelled;        // node is part of the conic problem
  double nominal_voltage = 1.0;
  double alpha = 0.1;
  double base = 1.0;
  /// Physical objective = scale * per-unit objective + offset.
  double objective_scale = 1.0;
  double objective_offset = 0.0;
};

struct BuiltProblem {
  conic::ConicProblem problem;
  Layout layout;
};

/// Maximize the aggregate node power sum_i P_i.
BuiltProblem build_maxflow(const net::RootedTree& tree, const net::SubtreeIndex& idx,
                           const Occupancy& occ, const ModelOptions& options = {});

/// Maximize sum_i w_i log P_i over occupied nodes. The per-vehicle form
/// differs by the constant -sum_i w_i log w_i, which is dropped.
BuiltProblem build_propfair(const net::RootedTree& tree, const net::SubtreeIndex& idx,
                            const Occupancy& occ, const ModelOptions& options = {});

/// Same feasible set with objective sum_i weight[i] * P_i (weights per tree
/// index, only occupied nodes matter). Used to sample feasible allocations.
BuiltProblem build_weighted_flow(const net::RootedTree& tree, const net::SubtreeIndex& idx,
                                 const Occupancy& occ, const std::vector<double>& weight,
                                 const ModelOptions& options = {});

/// Real and reactive power drawn by the subtree below the edge into `child`:
/// loads plus line losses of every edge inside that subtree.
std::pair<conic::LinearExpr, conic::LinearExpr> subtree_expressions(
    const net::RootedTree& tree, const net::SubtreeIndex& idx, const Layout& layout,
    std::size_t child);

struct AllocationResult {
  std::vector<int> vehicles;        // w_i
  std::vector<double> node_power;   // P_i
  std::vector<double> voltage;      // V_i
  std::vector<double> w_node;       // W_ii
  std::vector<double> w_edge;       // W_ij into child j (0 for the root)
  std::vector<double> p_sub;        // P_T(j)
  std::vector<double> q_sub;        // Q_T(j)
  std::vector<double> p_loss;       // loss on the edge into j
  std::vector<double> q_loss;
  double objective = 0.0;
  /// Largest |V_i V_j - V_j^2 - R P_T(j) - X Q_T(j)| over edges.
  double voltage_drop_residual = 0.0;
  /// Largest |V_i V_j - W_ij| over edges.
  double consistency = 0.0;

  /// P_i / w_i, zero for empty nodes.
  double vehicle_power(std::size_t node) const;
  double aggregate_power() const;
  /// Power entering the network at the feeder.
  double root_power() const;
};

/// Reads powers and voltages from an optimal solution. Throws
/// std::invalid_argument if the solution is not optimal.
AllocationResult recover(const BuiltProblem& built, const conic::Solution& solution,
                         const net::RootedTree& tree, const net::SubtreeIndex& idx,
                         const Occupancy& occ);

/// Zero-power state with every node at the feeder voltage.
AllocationResult idle_allocation(const net::RootedTree& tree, double nominal_voltage);

struct ExactnessCertificate {
  std::vector<double> gap;  // W_ii W_jj - W_ij^2 per edge (child index)
  double max_relative_gap = 0.0;
  double tolerance = 1e-6;
  std::size_t edges_solved = 0;
  std::size_t edges_reconstructed = 0;
  bool pass = true;
};

/// Rank-1 check per edge; relative gap |W_ii W_jj - W_ij^2| / (W_ii W_jj).
ExactnessCertificate certify_exactness(const net::RootedTree& tree, const AllocationResult& r,
                                       double tolerance = 1e-6);

/// sum over vehicles of (P_alt - P_pf) / P_pf. Throws std::domain_error if
/// an occupied node has zero power under `pf`.
double proportional_change(const AllocationResult& pf, const AllocationResult& alt);
bool certify_proportional_fairness(const AllocationResult& pf, const AllocationResult& alt,
                                   double tol);

class AllocationError : public std::runtime_error {
 public:
  AllocationError(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  /// Conic problem in the text dump format.
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

struct AllocatorOptions {
  ModelOptions model;
  conic::SolverConfig solver;
  double exactness_tolerance = 1e-6;
  /// Tolerance for the single retry after a failed certificate.
  double retry_tolerance = 1e-10;
  /// Fallback when the solver stalls short of its tolerance (numerical
  /// failure): its best iterate is accepted if it meets this tolerance,
  /// otherwise the problem is solved again at it. The certificate is still
  /// enforced.
  double relaxed_tolerance = 1e-6;
};

struct Allocation {
  AllocationResult result;
  ExactnessCertificate certificate;
  int solves = 0;  // conic solves performed (0 for an empty network)
  bool retried = false;
  bool relaxed = false;  // accepted at relaxed_tolerance
};

/// One solve with the stall fallback described under relaxed_tolerance.
/// `solves` is incremented per conic solve; `relaxed` is set when the
/// fallback was used.
conic::Solution solve_with_fallback(const conic::ConicProblem& problem,
                                    const conic::SolverConfig& config, double relaxed_tolerance,
                                    int& solves, bool& relaxed);

/// Build, solve, recover and certify. Empty occupancy yields the idle state
/// without a solve. A stalled solve falls back to relaxed_tolerance. Throws
/// AllocationError (with a problem dump) when the solver fails or the
/// certificate still fails after the retry.
Allocation allocate(const net::RootedTree& tree, const net::SubtreeIndex& idx,
                    const Occupancy& occ, Algorithm algo, const AllocatorOptions& options = {});

}  // namespace gridcharge::alloc
