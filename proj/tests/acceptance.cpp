// Acceptance run: one line per criterion, exit status 0 only if all pass.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "gridcharge/allocation.hpp"
#include "gridcharge/format.hpp"
#include "gridcharge/simulate.hpp"
#include "gridcharge/stats.hpp"
#include "oracles.hpp"

using namespace gridcharge;
using alloc::Algorithm;

namespace {

// Pinned tolerances and protocol.
constexpr double kSingleEdgeRel = 1e-6;
constexpr double kSingleEdgeSeconds = 1.0;
constexpr double kExactnessGap = 1e-6;
constexpr std::size_t kSmallQuota = 4000;  // per algorithm, trees with <= 12 nodes
constexpr std::size_t kLargeQuota = 1000;  // per algorithm, 47-bus stand-in
constexpr std::size_t kMinStates = 10000;
constexpr int kRandomAllocations = 100;
constexpr double kFairnessTol = 1e-6;
constexpr double kDominanceTol = 1e-6;
constexpr double kScalingRel = 1e-6;
constexpr std::size_t kScalingStates = 500;
constexpr double kGridStart = 0.05, kGridStop = 1.0, kGridStep = 0.05;
constexpr int kRuns = 5;
constexpr double kHorizon = 5000.0;
constexpr double kTrim = 1000.0;
constexpr double kWindow = 100.0;
constexpr std::uint64_t kBaseSeed = 1;
constexpr double kSubcriticalLambda = 0.2;
constexpr double kStepEtaTol = 0.05;
constexpr double kCongestionFactor = 1.5;  // Gini compared at 1.5 lambda_c
constexpr std::uint64_t kSampleSeed = 2024;

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;
void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d %s  %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !pass;
}

void progress(const std::string& what) { std::cerr << "[acceptance] " << what << std::endl; }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

std::string repo_path(const std::string& rel) {
  // ctest runs from the repository root; allow running from build/ too.
  for (const char* prefix : {"", "../", "../../"})
    if (std::filesystem::exists(prefix + rel)) return prefix + rel;
  return rel;
}

struct State {
  std::shared_ptr<const sim::Grid> grid;
  alloc::Occupancy occ;
  Algorithm algo;
};

/// Uniform sample of a stream of unknown length.
class Reservoir {
 public:
  Reservoir(std::size_t quota, std::uint64_t seed) : quota_(quota), rng_(seed) {}
  void offer(const State& s) {
    if (items_.size() < quota_) {
      items_.push_back(s);
    } else {
      const auto j = rng_.below(seen_ + 1);
      if (j < quota_) items_[j] = s;
    }
    ++seen_;
  }
  const std::vector<State>& items() const { return items_; }
  std::uint64_t seen() const { return seen_; }

 private:
  std::size_t quota_;
  sim::Rng rng_;
  std::vector<State> items_;
  std::uint64_t seen_ = 0;
};

struct CellResult {
  stats::Series series;
  std::vector<sim::VehicleRecord> completed;
};

struct SweepTally {
  std::int64_t solves = 0, allocations = 0, retries = 0, relaxed = 0, failed_runs = 0;
  double max_gap = 0.0;
  std::vector<std::string> errors;
};

sim::SimulationConfig make_config(std::shared_ptr<const sim::Grid> grid, double lambda,
                                  Algorithm algo, double horizon, std::uint64_t seed,
                                  double step = 1.0) {
  sim::SimulationConfig c;
  c.grid = std::move(grid);
  c.arrival_rate = lambda;
  c.algorithm = algo;
  c.horizon = horizon;
  c.seed = seed;
  c.step = step;
  return c;
}

/// Runs one cell, feeding every solved state to the matching reservoir.
std::optional<CellResult> run_cell(const sim::SimulationConfig& c, Reservoir* pool,
                                   SweepTally& tally) {
  try {
    auto out = sim::run(c, [&](const sim::SystemState& st, const alloc::Allocation&) {
      if (pool) pool->offer({c.grid, st.occupancy, c.algorithm});
    });
    tally.solves += out.stats.solves;
    tally.allocations += out.stats.allocations;
    tally.retries += out.stats.certificate_retries;
    tally.relaxed += out.stats.relaxed;
    tally.max_gap = std::max(tally.max_gap, out.stats.max_gap);
    return CellResult{stats::Series::from_samples(out.series), std::move(out.completed)};
  } catch (const sim::SimulationError& e) {
    ++tally.failed_runs;
    tally.errors.push_back(e.what());
    return std::nullopt;
  }
}

std::vector<double> grid_points() {
  std::vector<double> g;
  for (int k = 0;; ++k) {
    const double v = std::round((kGridStart + k * kGridStep) * 1e12) / 1e12;
    if (v > kGridStop + 1e-9) break;
    g.push_back(v);
  }
  return g;
}

// ------------------------------------------------------------ criterion 1

void criterion1() {
  const auto t0 = Clock::now();
  const auto grid = sim::Grid::load(repo_path("data/single_edge.csv"));
  const auto& tree = grid->tree;
  const double alpha = 0.1, r = tree.edge_into(1).resistance;
  const double analytic = 2 * alpha * (1 - alpha) / r;
  const auto oracle_best = oracle::maximize_2d(
      [&](double vr, double va) { return va * (vr - va) / r; }, 1 - alpha, 1 + alpha, 1 - alpha,
      1 + alpha);
  alloc::Occupancy occ(tree.size());
  occ.set(1, 1);
  double worst = std::abs(oracle_best.value - analytic) / analytic;
  for (auto algo : {Algorithm::max_flow, Algorithm::proportional_fairness}) {
    const auto a = alloc::allocate(tree, grid->index, occ, algo);
    worst = std::max(worst, std::abs(a.result.node_power[1] - analytic) / analytic);
    worst = std::max(worst, std::abs(a.result.node_power[1] - oracle_best.value) / oracle_best.value);
  }
  const double secs = seconds_since(t0);
  report(1, worst <= kSingleEdgeRel && secs < kSingleEdgeSeconds,
         "P = 18 per-unit for mf and pf, worst relative error " + fmt(worst) + " vs grid oracle " +
             format_double(oracle_best.value) + ", " + fmt(secs) + " s");
}

// ------------------------------------------------- solves on sampled states

struct Solved {
  State state;
  alloc::Allocation same;   // re-solve with the state's own algorithm
  std::optional<alloc::Allocation> other;
};

std::vector<double> random_weights(sim::Rng& rng, const alloc::Occupancy& occ) {
  std::vector<double> w(occ.size(), 0.0);
  for (std::size_t j = 0; j < occ.size(); ++j)
    if (occ[j] > 0) w[j] = 0.01 + 0.99 * rng.uniform();
  return w;
}

/// Maximizes a positive linear objective over the same feasible set.
std::optional<alloc::AllocationResult> weighted_allocation(const State& s,
                                                           const std::vector<double>& w) {
  const auto built = alloc::build_weighted_flow(s.grid->tree, s.grid->index, s.occ, w);
  const alloc::AllocatorOptions opt;
  int solves = 0;
  bool relaxed = false;
  const auto sol =
      alloc::solve_with_fallback(built.problem, opt.solver, opt.relaxed_tolerance, solves, relaxed);
  if (!sol.optimal()) return std::nullopt;
  return alloc::recover(built, sol, s.grid->tree, s.grid->index, s.occ);
}

}  // namespace

int main() {
  const auto t_start = Clock::now();
  criterion1();

  // ------------------------------------------------------------ sweeps
  const auto net12 = sim::Grid::load(repo_path("data/synthetic_12.csv"));
  const auto net47 = sim::Grid::load(repo_path("data/synthetic_47.csv"));
  const auto path3 = sim::Grid::load(repo_path("data/synthetic_path3.csv"));
  const auto star = sim::Grid::load(repo_path("data/two_leaf_star.csv"));

  std::map<Algorithm, Reservoir> small_pool{
      {Algorithm::max_flow, Reservoir(kSmallQuota, kSampleSeed)},
      {Algorithm::proportional_fairness, Reservoir(kSmallQuota, kSampleSeed + 1)}};
  std::map<Algorithm, Reservoir> large_pool{
      {Algorithm::max_flow, Reservoir(kLargeQuota, kSampleSeed + 2)},
      {Algorithm::proportional_fairness, Reservoir(kLargeQuota, kSampleSeed + 3)}};
  const std::vector<Algorithm> algos{Algorithm::max_flow, Algorithm::proportional_fairness};

  SweepTally tally;
  const auto lambdas = grid_points();
  // cells[algo][lambda index][run]
  std::map<Algorithm, std::vector<std::vector<CellResult>>> cells;
  auto t0 = Clock::now();
  for (auto algo : algos) {
    cells[algo].resize(lambdas.size());
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      for (int k = 0; k < kRuns; ++k) {
        auto c = make_config(net12, lambdas[i], algo, kHorizon, kBaseSeed + k);
        if (auto r = run_cell(c, &small_pool.at(algo), tally)) cells[algo][i].push_back(std::move(*r));
      }
    progress(std::string("12-bus sweep ") + alloc::to_string(algo) + " done after " +
             fmt(seconds_since(t0)) + " s");
  }
  for (auto algo : algos)
    for (const auto& g : {path3, star})
      for (double lambda : {0.3, 0.6, 0.9})
        run_cell(make_config(g, lambda, algo, 1000, kBaseSeed), &small_pool.at(algo), tally);
  for (auto algo : algos)
    for (double lambda : {0.2, 0.4, 0.6, 0.8})
      run_cell(make_config(net47, lambda, algo, 1000, kBaseSeed), &large_pool.at(algo), tally);
  progress("all sweeps done after " + fmt(seconds_since(t0)) + " s, " +
           std::to_string(tally.allocations) + " allocations");

  // --------------------------------------------------- criterion 2
  t0 = Clock::now();
  std::vector<Solved> sample;
  for (auto* pools : {&small_pool, &large_pool})
    for (auto algo : algos)
      for (const auto& s : pools->at(algo).items()) sample.push_back({s, {}, std::nullopt});
  std::size_t cert_fail = 0, solve_fail = 0, retried = 0, relaxed = 0;
  double worst_gap = 0.0;
  std::vector<bool> usable(sample.size(), false);
  for (std::size_t i = 0; i < sample.size(); ++i) {
    auto& x = sample[i];
    alloc::AllocatorOptions opt;
    opt.exactness_tolerance = kExactnessGap;
    try {
      x.same = alloc::allocate(x.state.grid->tree, x.state.grid->index, x.state.occ, x.state.algo, opt);
    } catch (const alloc::AllocationError& e) {
      ++solve_fail;
      continue;
    }
    usable[i] = true;
    const auto cert = alloc::certify_exactness(x.state.grid->tree, x.same.result, kExactnessGap);
    worst_gap = std::max(worst_gap, cert.max_relative_gap);
    cert_fail += !cert.pass;
    retried += x.same.retried;
    relaxed += x.same.relaxed;
  }
  {
    std::ostringstream d;
    d << sample.size() << " sampled states (" << small_pool.at(Algorithm::max_flow).seen() +
                                                       small_pool.at(Algorithm::proportional_fairness).seen() +
                                                       large_pool.at(Algorithm::max_flow).seen() +
                                                       large_pool.at(Algorithm::proportional_fairness).seen()
      << " solved in sweeps, all certified in-run, max in-run gap " << fmt(tally.max_gap)
      << "); re-solve: " << cert_fail << " certificate failures, " << solve_fail
      << " solver failures, max gap " << fmt(worst_gap) << ", " << retried << " retried, "
      << relaxed << " at relaxed tolerance; " << tally.failed_runs << " aborted runs; "
      << fmt(seconds_since(t0)) << " s";
    report(2,
           sample.size() >= kMinStates && cert_fail == 0 && solve_fail == 0 &&
               tally.failed_runs == 0 && seconds_since(t_start) < 1800,
           d.str());
  }
  for (const auto& e : tally.errors) progress("run aborted: " + e);

  // --------------------------------------------------- criterion 3
  t0 = Clock::now();
  {
    sim::Rng rng(kSampleSeed, 99);
    std::size_t states = 0, violations = 0, skipped = 0;
    double worst = -conic::kInfinity;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      const auto& x = sample[i];
      if (!usable[i] || x.state.algo != Algorithm::proportional_fairness) continue;
      ++states;
      for (int k = 0; k < kRandomAllocations; ++k) {
        const auto alt = weighted_allocation(x.state, random_weights(rng, x.state.occ));
        if (!alt) {
          ++skipped;
          continue;
        }
        const double change = alloc::proportional_change(x.same.result, *alt);
        worst = std::max(worst, change);
        violations += change > kFairnessTol;
      }
      if (states % 1000 == 0) progress("fairness: " + std::to_string(states) + " states");
    }
    std::ostringstream d;
    d << states << " PF states x " << kRandomAllocations
      << " random-objective allocations: max sum of proportional changes " << fmt(worst) << ", "
      << violations << " above " << fmt(kFairnessTol) << ", " << skipped
      << " alternatives unsolved; " << fmt(seconds_since(t0)) << " s";
    report(3, states > 0 && violations == 0, d.str());
  }

  // --------------------------------------------------- criterion 4
  t0 = Clock::now();
  {
    std::size_t pairs = 0, dominance = 0, zero_power = 0, fail = 0;
    double worst_ratio = 0.0;
    for (std::size_t i = 0; i < sample.size(); ++i) {
      if (!usable[i]) continue;
      auto& x = sample[i];
      const auto other = x.state.algo == Algorithm::max_flow ? Algorithm::proportional_fairness
                                                             : Algorithm::max_flow;
      try {
        x.other = alloc::allocate(x.state.grid->tree, x.state.grid->index, x.state.occ, other);
      } catch (const alloc::AllocationError&) {
        ++fail;
        continue;
      }
      ++pairs;
      const auto& mf = x.state.algo == Algorithm::max_flow ? x.same.result : x.other->result;
      const auto& pf = x.state.algo == Algorithm::max_flow ? x.other->result : x.same.result;
      const double amf = mf.aggregate_power(), apf = pf.aggregate_power();
      worst_ratio = std::max(worst_ratio, (apf - amf) / amf);
      dominance += amf < apf - kDominanceTol * std::max(1.0, amf);
      for (std::size_t j = 0; j < pf.vehicles.size(); ++j)
        if (pf.vehicles[j] > 0 && !(pf.node_power[j] > 0)) ++zero_power;
    }
    const auto occ_path = [&] {
      alloc::Occupancy o(path3->tree.size());
      o.set(path3->tree.index_of(2), 1);
      o.set(path3->tree.index_of(3), 1);
      return o;
    }();
    const auto mf_path = alloc::allocate(path3->tree, path3->index, occ_path, Algorithm::max_flow);
    const auto pf_path =
        alloc::allocate(path3->tree, path3->index, occ_path, Algorithm::proportional_fairness);
    const auto deep = path3->tree.index_of(3);
    const double starve = mf_path.result.node_power[deep] / mf_path.result.aggregate_power();
    const bool path_ok = starve <= 1e-6 && pf_path.result.node_power[deep] > 0;
    std::ostringstream d;
    d << pairs << " states solved both ways: " << dominance << " dominance violations (worst "
      << "(PF - MF)/MF " << fmt(worst_ratio) << "), " << zero_power
      << " PF zero-power nodes, " << fail << " solver failures; path instance deep vehicle gets "
      << fmt(starve) << " of the max-flow aggregate and "
      << fmt(pf_path.result.node_power[deep]) << " under PF; " << fmt(seconds_since(t0)) << " s";
    report(4, pairs > 0 && dominance == 0 && zero_power == 0 && fail == 0 && path_ok, d.str());
  }

  // --------------------------------------------------- criterion 5
  t0 = Clock::now();
  {
    std::size_t states = 0, bad = 0, fail = 0;
    double worst = 0.0;
    // Every k-th usable state, so both pools and algorithms are covered.
    const std::size_t stride = std::max<std::size_t>(1, sample.size() / kScalingStates);
    for (std::size_t i = 0; i < sample.size(); i += stride) {
      if (!usable[i]) continue;
      const auto& x = sample[i];
      ++states;
      const auto& base = x.same.result;
      double pmax = 0.0;
      for (double p : base.node_power) pmax = std::max(pmax, std::abs(p));
      for (double beta : {0.5, 2.0, 10.0}) {
        alloc::AllocatorOptions opt;
        opt.model.nominal_voltage = beta * x.state.grid->tree.nominal_voltage();
        alloc::Allocation s;
        try {
          s = alloc::allocate(x.state.grid->tree, x.state.grid->index, x.state.occ, x.state.algo, opt);
        } catch (const alloc::AllocationError&) {
          ++fail;
          continue;
        }
        double err = 0.0;
        for (std::size_t j = 0; j < base.node_power.size(); ++j) {
          err = std::max(err, std::abs(s.result.node_power[j] - beta * beta * base.node_power[j]) /
                                  (beta * beta * pmax));
          err = std::max(err, std::abs(s.result.voltage[j] - beta * base.voltage[j]) /
                                  (beta * base.voltage[j]));
        }
        worst = std::max(worst, err);
        bad += err > kScalingRel;
      }
    }
    std::ostringstream d;
    d << states << " states x beta {0.5, 2, 10}: worst relative deviation " << fmt(worst) << ", "
      << bad << " above " << fmt(kScalingRel) << ", " << fail << " solver failures; "
      << fmt(seconds_since(t0)) << " s";
    report(5, states > 0 && bad == 0 && fail == 0, d.str());
  }

  // ------------------------------------------------- sweep statistics
  auto summary = [&](Algorithm algo, double window) {
    std::vector<stats::StatRecord> rows;
    for (std::size_t i = 0; i < lambdas.size(); ++i) {
      std::vector<stats::RunObservables> obs;
      for (const auto& c : cells[algo][i])
        obs.push_back(stats::observe(c.series, c.completed, lambdas[i], {window, kTrim}));
      rows.push_back(obs.empty() ? stats::StatRecord{}
                                 : stats::ensemble(lambdas[i], alloc::to_string(algo), obs, window));
    }
    return rows;
  };
  std::map<Algorithm, std::vector<stats::StatRecord>> rows;
  for (auto algo : algos) rows[algo] = summary(algo, kWindow);
  {
    std::ofstream f("acceptance_summary.csv");
    std::vector<stats::StatRecord> all;
    for (auto algo : algos) all.insert(all.end(), rows[algo].begin(), rows[algo].end());
    stats::write_summary(f, all);
  }

  // --------------------------------------------------- criterion 6
  {
    bool ok = tally.failed_runs == 0;
    std::ostringstream d;
    for (auto algo : algos) {
      const auto& r = rows[algo];
      const std::size_t n = r.size();
      bool low = true, high = true, monotone = true;
      for (std::size_t i = 0; i < 3; ++i) low &= r[i].eta.contains(0.0);
      for (std::size_t i = n - 3; i < n; ++i) high &= r[i].eta.lo > 0.0;
      std::string breaks;
      for (std::size_t i = 0; i + 1 < n; ++i)
        if (r[i + 1].eta.mean < r[i].eta.mean && !r[i + 1].eta.overlaps(r[i].eta)) {
          monotone = false;
          breaks += " " + format_double(lambdas[i]) + "->" + format_double(lambdas[i + 1]);
        }
      ok &= low && high && monotone;
      d << alloc::to_string(algo) << ": lowest three CI contain 0 " << (low ? "yes" : "no")
        << ", highest three CI above 0 " << (high ? "yes" : "no") << ", eta at 1.0 = "
        << fmt(r[n - 1].eta.mean) << ", non-decreasing up to CI overlap "
        << (monotone ? "yes" : "no (" + breaks.substr(1) + ")") << "; ";
    }
    d << kRuns << " runs, horizon " << kHorizon << ", 12-bus synthetic";
    report(6, ok, d.str());
  }

  // --------------------------------------------------- criterion 7
  // lambda_c: smallest grid point from which every eta CI lies above 0.
  auto critical = [&](Algorithm algo) {
    const auto& r = rows[algo];
    std::size_t k = r.size();
    while (k > 0 && r[k - 1].eta.lo > 0.0) --k;
    return k < r.size() ? lambdas[k] : conic::kInfinity;
  };
  const double lc_mf = critical(Algorithm::max_flow), lc_pf = critical(Algorithm::proportional_fairness);
  report(7, std::isfinite(lc_mf) && lc_pf >= lc_mf,
         "synthetic analogue: lambda_c(mf) = " + format_double(lc_mf) + ", lambda_c(pf) = " +
             format_double(lc_pf));

  // --------------------------------------------------- criterion 8
  {
    const double target = kCongestionFactor * std::max(lc_mf, lc_pf);
    std::size_t gi = 0;
    for (std::size_t i = 0; i < lambdas.size(); ++i)
      if (std::abs(lambdas[i] - target) < std::abs(lambdas[gi] - target)) gi = i;
    const auto& gmf = rows[Algorithm::max_flow][gi].gini;
    const auto& gpf = rows[Algorithm::proportional_fairness][gi].gini;
    const bool ordered = gmf && gpf && gmf->n >= 5 && gpf->n >= 5 && gmf->lo > gpf->hi;

    sim::Rng rng(kSampleSeed, 8);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      std::vector<double> x(1 + rng.below(1000));
      for (auto& v : x) v = rng.uniform() < 0.1 ? 0.0 : rng.exponential();
      x[0] += 1.0;
      worst = std::max(worst, std::abs(stats::gini(x).value - stats::gini_pairwise(x)));
    }
    bool single = true;
    for (std::size_t n : {1u, 4u, 17u, 1000u}) {
      std::vector<double> x(n, 0.0);
      x[n - 1] = 2.5;
      single &= std::abs(stats::gini(x).value - (double(n) - 1) / double(n)) <= 1e-12;
    }
    std::ostringstream d;
    d << "at lambda " << format_double(lambdas[gi]) << ": Gini mf ";
    if (gmf) d << fmt(gmf->mean) << " [" << fmt(gmf->lo) << ", " << fmt(gmf->hi) << "]";
    d << " vs pf ";
    if (gpf) d << fmt(gpf->mean) << " [" << fmt(gpf->lo) << ", " << fmt(gpf->hi) << "]";
    d << "; sorted vs pairwise max difference " << fmt(worst) << ", single non-zero case "
      << (single ? "exact" : "wrong");
    report(8, ordered && worst <= 1e-12 && single, d.str());
  }

  // --------------------------------------------------- criterion 9
  t0 = Clock::now();
  {
    namespace fs = std::filesystem;
    const fs::path tmp = fs::temp_directory_path() / "gridcharge_acceptance";
    fs::remove_all(tmp);
    auto sweep = [&](const std::string& out, const std::string& jobs) {
      std::ostringstream o, e;
      return cli::run_cli({"sweep", "--network", repo_path("data/synthetic_12.csv"), "--grid",
                           "0.2:0.6:0.2", "--algo", "mf,pf", "--runs", "2", "--horizon", "1500",
                           "--trim", "300", "--seed", "11", "--jobs", jobs, "--out", out},
                          o, e);
    };
    auto slurp = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    const int c1 = sweep((tmp / "a").string(), "1"), c2 = sweep((tmp / "b").string(), "1"),
              c3 = sweep((tmp / "c").string(), "2");
    const auto sa = slurp(tmp / "a" / "summary.csv");
    const bool identical = c1 == 0 && c2 == 0 && c3 == 0 && !sa.empty() &&
                           sa == slurp(tmp / "b" / "summary.csv") &&
                           sa == slurp(tmp / "c" / "summary.csv");
    fs::remove_all(tmp);

    // Step sensitivity at a subcritical rate.
    std::map<double, double> eta;
    SweepTally step_tally;
    for (double step : {0.5, 1.0}) {
      std::vector<double> v;
      for (int k = 0; k < kRuns; ++k) {
        auto c = make_config(net12, kSubcriticalLambda, Algorithm::max_flow, kHorizon,
                             kBaseSeed + k, step);
        if (auto r = run_cell(c, nullptr, step_tally))
          v.push_back(stats::order_parameter(r->series, kSubcriticalLambda, {kWindow, kTrim}));
      }
      eta[step] = v.size() == std::size_t(kRuns) ? stats::mean_interval(v).mean : conic::kInfinity;
    }
    const double deta = std::abs(eta[0.5] - eta[1.0]);

    // Interior peak of the ensemble-mean susceptibility for each window
    // length; the plain argmax is reported alongside.
    std::ostringstream peaks;
    std::ofstream chi_table("acceptance_chi.csv");
    chi_table << "lambda,algorithm,window,chi_mean\n";
    bool stable = true;
    for (auto algo : algos) {
      std::vector<std::optional<std::size_t>> at;
      std::vector<std::size_t> argmax;
      for (double w : {50.0, 100.0, 200.0}) {
        const auto r = summary(algo, w);
        std::vector<double> chi;
        for (std::size_t i = 0; i < r.size(); ++i) {
          chi.push_back(r[i].chi.mean);
          chi_table << format_double(lambdas[i]) << ',' << alloc::to_string(algo) << ','
                    << format_double(w) << ',' << format_double(chi.back()) << '\n';
        }
        at.push_back(stats::susceptibility_peak(chi));
        argmax.push_back(std::size_t(std::max_element(chi.begin(), chi.end()) - chi.begin()));
      }
      const bool found = at[0] && at[1] && at[2];
      stable &= found && std::max({*at[0], *at[1], *at[2]}) - std::min({*at[0], *at[1], *at[2]}) <= 1;
      auto name = [&](const std::optional<std::size_t>& i) {
        return i ? format_double(lambdas[*i]) : std::string("none");
      };
      peaks << alloc::to_string(algo) << " interior peak at lambda " << name(at[0]) << "/"
            << name(at[1]) << "/" << name(at[2]) << " for windows 50/100/200 (argmax "
            << format_double(lambdas[argmax[0]]) << "/" << format_double(lambdas[argmax[1]]) << "/"
            << format_double(lambdas[argmax[2]]) << "); ";
    }
    std::ostringstream d;
    d << "summaries byte-identical (serial twice, 2 jobs) " << (identical ? "yes" : "no")
      << "; eta at lambda " << format_double(kSubcriticalLambda) << " step 0.5 vs 1.0: "
      << fmt(eta[0.5]) << " vs " << fmt(eta[1.0]) << " (|diff| " << fmt(deta) << " < "
      << fmt(kStepEtaTol) << "); " << peaks.str() << fmt(seconds_since(t0)) << " s";
    report(9, identical && deta < kStepEtaTol && stable, d.str());
  }

  std::printf("acceptance: %d of 9 criteria failed, %.0f s total\n", failures,
              seconds_since(t_start));
  return failures == 0 ? 0 : 1;
}
