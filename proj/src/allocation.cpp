#include "gridcharge/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace gridcharge::alloc {

using conic::Index;
using conic::LinearExpr;
using net::RootedTree;
using net::SubtreeIndex;

std::optional<Algorithm> parse_algorithm(const std::string& text) {
  if (text == "mf" || text == "max-flow" || text == "maxflow") return Algorithm::max_flow;
  if (text == "pf" || text == "proportional-fairness" || text == "propfair")
    return Algorithm::proportional_fairness;
  return std::nullopt;
}

const char* to_string(Algorithm algo) {
  return algo == Algorithm::max_flow ? "mf" : "pf";
}

void Occupancy::set(std::size_t node, int count) {
  if (count < 0) throw std::invalid_argument("vehicle count must be non-negative");
  total_ += count - count_.at(node);
  count_[node] = count;
}

void Occupancy::add(std::size_t node, int delta) { set(node, count_.at(node) + delta); }

namespace {

enum class Objective { aggregate, log_utility, weighted };

BuiltProblem build(const RootedTree& tree, const SubtreeIndex& idx, const Occupancy& occ,
                   const ModelOptions& options, Objective kind,
                   const std::vector<double>* weight) {
  if (!(options.alpha > 0.0 && options.alpha < 1.0))
    throw std::invalid_argument("alpha must lie in (0, 1)");
  if (occ.size() != tree.size())
    throw std::invalid_argument("occupancy does not match the network size");
  if (occ[tree.root()] != 0) throw std::invalid_argument("the feeder cannot hold vehicles");
  if (occ.empty()) throw std::invalid_argument("empty occupancy: nothing to allocate");
  const double vnom = options.nominal_voltage.value_or(tree.nominal_voltage());
  if (!(vnom > 0.0) || !std::isfinite(vnom))
    throw std::invalid_argument("nominal voltage must be positive");
  if (weight && weight->size() != tree.size())
    throw std::invalid_argument("weight vector does not match the network size");

  const std::size_t n = tree.size();
  BuiltProblem out;
  Layout& L = out.layout;
  L.nominal_voltage = vnom;
  L.alpha = options.alpha;
  L.base = vnom * vnom;
  L.w_node.assign(n, Layout::kNone);
  L.w_edge.assign(n, Layout::kNone);
  L.power.assign(n, Layout::kNone);
  L.modelled.assign(n, !options.prune_idle);
  if (options.prune_idle) {
    L.modelled[tree.root()] = true;
    for (std::size_t j = 0; j < n; ++j)
      if (occ[j] > 0)
        for (std::size_t k = j; !L.modelled[k]; k = tree.parent(k)) L.modelled[k] = true;
  }

  auto& P = out.problem;
  const double lo = std::pow(1 - options.alpha, 2);
  const double hi = std::pow(1 + options.alpha, 2);
  for (std::size_t j = 0; j < n; ++j) {
    if (!L.modelled[j]) continue;
    const std::string id = std::to_string(tree.id(j));
    if (j == tree.root() && options.pin_root)
      L.w_node[j] = P.add_variable(1.0, 1.0, "W_" + id);
    else
      L.w_node[j] = P.add_variable(lo, hi, "W_" + id);
    if (j != tree.root())
      L.w_edge[j] = P.add_variable(-conic::kInfinity, conic::kInfinity,
                                   "W_" + std::to_string(tree.id(tree.parent(j))) + "_" + id);
    if (occ[j] > 0) L.power[j] = P.add_variable(0.0, conic::kInfinity, "P_" + id);
  }

  for (std::size_t j = 0; j < n; ++j) {
    if (L.power[j] == Layout::kNone) continue;
    switch (kind) {
      case Objective::aggregate: P.add_objective(L.power[j], 1.0); break;
      case Objective::log_utility:
        P.add_log_term(L.power[j], occ[j]);
        L.objective_offset += occ[j] * std::log(L.base);
        break;
      case Objective::weighted: P.add_objective(L.power[j], (*weight)[j]); break;
    }
  }
  if (kind != Objective::log_utility) L.objective_scale = L.base;

  for (std::size_t j = 1; j < n; ++j) {
    if (!L.modelled[j]) continue;
    const auto& e = tree.edge_into(j);
    auto [psub, qsub] = subtree_expressions(tree, idx, L, j);
    LinearExpr eq;
    eq.add(L.w_edge[j], 1.0).add(L.w_node[j], -1.0);
    eq.add(psub, -e.resistance).add(qsub, -e.reactance);
    P.add_equality(std::move(eq));
    P.add_cone(L.w_node[e.parent], L.w_node[j], L.w_edge[j]);
  }
  return out;
}

}  // namespace

BuiltProblem build_maxflow(const RootedTree& tree, const SubtreeIndex& idx, const Occupancy& occ,
                           const ModelOptions& options) {
  return build(tree, idx, occ, options, Objective::aggregate, nullptr);
}

BuiltProblem build_propfair(const RootedTree& tree, const SubtreeIndex& idx, const Occupancy& occ,
                            const ModelOptions& options) {
  return build(tree, idx, occ, options, Objective::log_utility, nullptr);
}

BuiltProblem build_weighted_flow(const RootedTree& tree, const SubtreeIndex& idx,
                                 const Occupancy& occ, const std::vector<double>& weight,
                                 const ModelOptions& options) {
  return build(tree, idx, occ, options, Objective::weighted, &weight);
}

std::pair<LinearExpr, LinearExpr> subtree_expressions(const RootedTree& tree,
                                                      const SubtreeIndex& idx,
                                                      const Layout& layout, std::size_t child) {
  LinearExpr p, q;
  for (auto i : idx.nodes.at(child))
    if (layout.power[i] != Layout::kNone) p.add(layout.power[i], 1.0);
  for (auto c : idx.edges.at(child)) {
    if (!layout.modelled[c]) continue;
    const auto& e = tree.edge_into(c);
    const double z2 = e.resistance * e.resistance + e.reactance * e.reactance;
    // |V_u - V_v|^2 / |Z|^2 in W variables, times R (real) or X (reactive).
    LinearExpr drop;
    drop.add(layout.w_node[e.parent], 1.0).add(layout.w_edge[c], -2.0).add(layout.w_node[c], 1.0);
    if (e.resistance != 0.0) p.add(drop, e.resistance / z2);
    if (e.reactance != 0.0) q.add(drop, e.reactance / z2);
  }
  p.compress();
  q.compress();
  return {std::move(p), std::move(q)};
}

double AllocationResult::vehicle_power(std::size_t node) const {
  return vehicles[node] > 0 ? node_power[node] / vehicles[node] : 0.0;
}

double AllocationResult::aggregate_power() const {
  double s = 0.0;
  for (double p : node_power) s += p;
  return s;
}

double AllocationResult::root_power() const {
  // Index 0 is the root; its subtree total counts every load and loss.
  return p_sub.empty() ? 0.0 : p_sub[0];
}

namespace {

AllocationResult finish(const RootedTree& tree, AllocationResult r) {
  const std::size_t n = tree.size();
  r.voltage.resize(n);
  r.p_loss.assign(n, 0.0);
  r.q_loss.assign(n, 0.0);
  r.p_sub = r.node_power;
  r.q_sub.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) r.voltage[j] = std::sqrt(std::max(0.0, r.w_node[j]));
  for (std::size_t j = 1; j < n; ++j) {
    const auto& e = tree.edge_into(j);
    const double z2 = e.resistance * e.resistance + e.reactance * e.reactance;
    const double d = r.w_node[e.parent] - 2 * r.w_edge[j] + r.w_node[j];
    r.p_loss[j] = d * e.resistance / z2;
    r.q_loss[j] = d * e.reactance / z2;
  }
  for (std::size_t j = n; j-- > 1;) {
    const auto p = tree.parent(j);
    r.p_sub[p] += r.p_sub[j] + r.p_loss[j];
    r.q_sub[p] += r.q_sub[j] + r.q_loss[j];
  }
  r.voltage_drop_residual = 0.0;
  r.consistency = 0.0;
  for (std::size_t j = 1; j < n; ++j) {
    const auto& e = tree.edge_into(j);
    const double vi = r.voltage[e.parent], vj = r.voltage[j];
    r.voltage_drop_residual =
        std::max(r.voltage_drop_residual,
                 std::abs(vi * vj - vj * vj - e.resistance * r.p_sub[j] - e.reactance * r.q_sub[j]));
    r.consistency = std::max(r.consistency, std::abs(vi * vj - r.w_edge[j]));
  }
  return r;
}

}  // namespace

AllocationResult recover(const BuiltProblem& built, const conic::Solution& solution,
                         const RootedTree& tree, const SubtreeIndex&, const Occupancy& occ) {
  if (!solution.optimal())
    throw std::invalid_argument("cannot recover an allocation from a non-optimal solution");
  const Layout& L = built.layout;
  const std::size_t n = tree.size();
  if (L.w_node.size() != n || occ.size() != n)
    throw std::invalid_argument("layout does not match the network");
  const auto& x = solution.x;
  AllocationResult r;
  r.vehicles = occ.counts();
  r.node_power.assign(n, 0.0);
  r.w_node.assign(n, 0.0);
  r.w_edge.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (L.modelled[j]) {
      r.w_node[j] = L.base * x[static_cast<Eigen::Index>(L.w_node[j])];
      if (j != tree.root()) r.w_edge[j] = L.base * x[static_cast<Eigen::Index>(L.w_edge[j])];
    } else {
      // Idle branch: same voltage as the parent, no current.
      r.w_node[j] = r.w_node[tree.parent(j)];
      r.w_edge[j] = r.w_node[j];
    }
    if (L.power[j] != Layout::kNone)
      r.node_power[j] = std::max(0.0, L.base * x[static_cast<Eigen::Index>(L.power[j])]);
  }
  r.objective = L.objective_scale * solution.objective + L.objective_offset;
  return finish(tree, std::move(r));
}

AllocationResult idle_allocation(const RootedTree& tree, double nominal_voltage) {
  const std::size_t n = tree.size();
  AllocationResult r;
  r.vehicles.assign(n, 0);
  r.node_power.assign(n, 0.0);
  r.w_node.assign(n, nominal_voltage * nominal_voltage);
  r.w_edge.assign(n, nominal_voltage * nominal_voltage);
  r.w_edge[tree.root()] = 0.0;
  return finish(tree, std::move(r));
}

ExactnessCertificate certify_exactness(const RootedTree& tree, const AllocationResult& r,
                                       double tolerance) {
  ExactnessCertificate c;
  c.tolerance = tolerance;
  c.gap.assign(tree.size(), 0.0);
  for (std::size_t j = 1; j < tree.size(); ++j) {
    const double wi = r.w_node[tree.parent(j)], wj = r.w_node[j], wij = r.w_edge[j];
    c.gap[j] = wi * wj - wij * wij;
    const double denom = wi * wj;
    const double rel = denom > 0 ? std::abs(c.gap[j]) / denom : conic::kInfinity;
    c.max_relative_gap = std::max(c.max_relative_gap, rel);
  }
  c.pass = c.max_relative_gap <= tolerance;
  return c;
}

double proportional_change(const AllocationResult& pf, const AllocationResult& alt) {
  if (pf.vehicles != alt.vehicles)
    throw std::invalid_argument("allocations are over different occupancies");
  double sum = 0.0;
  for (std::size_t i = 0; i < pf.vehicles.size(); ++i) {
    if (pf.vehicles[i] == 0) continue;
    if (!(pf.node_power[i] > 0))
      throw std::domain_error("reference allocation gives zero power to an occupied node");
    // w_i vehicles, each changing by (alt - pf) / pf.
    sum += pf.vehicles[i] * (alt.node_power[i] - pf.node_power[i]) / pf.node_power[i];
  }
  return sum;
}

bool certify_proportional_fairness(const AllocationResult& pf, const AllocationResult& alt,
                                   double tol) {
  return proportional_change(pf, alt) <= tol;
}

namespace {

std::string dump(const conic::ConicProblem& p) {
  std::ostringstream out;
  conic::write_problem(out, p);
  return out.str();
}

}  // namespace

conic::Solution solve_with_fallback(const conic::ConicProblem& problem,
                                    const conic::SolverConfig& config, double relaxed_tolerance,
                                    int& solves, bool& relaxed) {
  auto sol = conic::solve(problem, config);
  ++solves;
  if (sol.status != conic::Status::numerical_failure || !(relaxed_tolerance > config.tolerance))
    return sol;
  // Degenerate states can stall just short of the requested accuracy. The
  // stalled run reports its most accurate iterate, which is usually far
  // closer than a fresh solve stopped at the looser tolerance.
  relaxed = true;
  if (std::max({sol.primal_residual, sol.dual_residual, sol.complementarity}) <=
      relaxed_tolerance) {
    sol.status = conic::Status::optimal;
    return sol;
  }
  conic::SolverConfig loose = config;
  loose.tolerance = relaxed_tolerance;
  ++solves;
  return conic::solve(problem, loose);
}

Allocation allocate(const RootedTree& tree, const SubtreeIndex& idx, const Occupancy& occ,
                    Algorithm algo, const AllocatorOptions& options) {
  Allocation a;
  if (occ.empty()) {
    const double v = options.model.nominal_voltage.value_or(tree.nominal_voltage());
    a.result = idle_allocation(tree, v);
    a.certificate = certify_exactness(tree, a.result, options.exactness_tolerance);
    return a;
  }
  const BuiltProblem built = algo == Algorithm::max_flow
                                 ? build_maxflow(tree, idx, occ, options.model)
                                 : build_propfair(tree, idx, occ, options.model);

  AllocatorOptions current = options;
  for (int attempt = 0; attempt < 2; ++attempt) {
    bool relaxed = false;
    const auto sol = solve_with_fallback(built.problem, current.solver,
                                         current.relaxed_tolerance, a.solves, relaxed);
    a.relaxed = a.relaxed || relaxed;
    if (!sol.optimal())
      throw AllocationError(std::string("allocation solve failed: ") + conic::to_string(sol.status) +
                                (sol.message.empty() ? "" : " (" + sol.message + ")"),
                            dump(built.problem));
    a.result = recover(built, sol, tree, idx, occ);
    a.certificate = certify_exactness(tree, a.result, options.exactness_tolerance);
    std::size_t solved = 0;
    for (std::size_t j = 1; j < tree.size(); ++j) solved += built.layout.modelled[j];
    a.certificate.edges_solved = solved;
    a.certificate.edges_reconstructed = tree.size() - 1 - solved;
    if (a.certificate.pass) return a;
    a.retried = true;
    current.solver.tolerance = options.retry_tolerance;
    current.solver.max_iterations = std::max(current.solver.max_iterations, 400);
  }
  std::ostringstream msg;
  msg << "relaxation not exact: max relative rank-1 gap " << a.certificate.max_relative_gap;
  throw AllocationError(msg.str(), dump(built.problem));
}

}  // namespace gridcharge::alloc
