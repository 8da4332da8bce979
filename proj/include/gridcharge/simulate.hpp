#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <istream>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridcharge/allocation.hpp"
#include "gridcharge/network.hpp"

namespace gridcharge::sim {

/// Portable random stream: mt19937_64 (fully specified by the standard)
/// seeded through splitmix64, with hand-written transforms because the
/// standard distributions differ between library vendors.
///
/// Stream splitting: run k of an ensemble uses seed base + k. Within a run,
/// arrival times and arrival nodes draw from two sub-streams derived from
/// that seed, so the node sequence does not depend on the arrival rate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Unit-mean exponential.
  double exponential();
  /// Uniform integer in [0, n), unbiased. n must be positive.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t& state);

struct Arrival {
  double time = 0.0;
  std::size_t node = 0;  // tree index, never the root

  bool operator==(const Arrival&) const = default;
};

/// Poisson arrivals at rate lambda. Gaps come from a unit-rate stream scaled
/// by 1/lambda, so raising lambda with the same seed only moves every
/// arrival earlier.
class ArrivalStream {
 public:
  ArrivalStream(std::uint64_t seed, double lambda, std::size_t nodes);

  /// All arrivals with time in [from, to), in time order. Intervals must be
  /// requested in increasing, non-overlapping order.
  std::vector<Arrival> sample(double from, double to);

  double lambda() const { return lambda_; }

 private:
  void advance();

  Rng time_rng_;
  Rng node_rng_;
  double lambda_;
  std::size_t nodes_;
  double unit_clock_ = 0.0;
  std::optional<Arrival> pending_;
};

/// Validated tree plus its subtree index, shared read-only between runs.
struct Grid {
  net::RootedTree tree;
  net::SubtreeIndex index;

  explicit Grid(const net::NetworkSpec& spec);
  /// Reads a network file and drops the nodes in its `prune` header entry
  /// unless `apply_prune` is false.
  static std::shared_ptr<const Grid> load(const std::string& path, bool apply_prune = true);
};

struct SimulationConfig {
  std::shared_ptr<const Grid> grid;
  double arrival_rate = 0.0;
  double horizon = 1000.0;
  double step = 1.0;
  double battery_capacity = 1.0;
  double alpha = 0.1;
  /// Defaults to the network file's nominal voltage.
  std::optional<double> nominal_voltage;
  alloc::Algorithm algorithm = alloc::Algorithm::max_flow;
  std::uint64_t seed = 0;
  conic::SolverConfig solver;

  /// Throws std::invalid_argument on a violated invariant.
  void validate() const;
  alloc::AllocatorOptions allocator_options() const;
};

struct VehicleRecord {
  std::int64_t id = 0;
  std::size_t node = 0;  // tree index
  double arrival_time = 0.0;
  double charge = 0.0;
  std::optional<double> departure_time;

  double charging_time() const { return departure_time.value_or(arrival_time) - arrival_time; }
};

/// One row per step: the state charging during [time, time + step).
struct Sample {
  double time = 0.0;
  int vehicles = 0;
  double aggregate_power = 0.0;
  double objective = 0.0;
};

struct SolverStats {
  std::int64_t allocations = 0;  // steps with a fresh allocation
  std::int64_t solves = 0;       // conic solves, retries included
  std::int64_t certificate_retries = 0;
  std::int64_t relaxed = 0;
  double max_gap = 0.0;  // largest relative rank-1 gap seen
};

struct SystemState {
  std::int64_t step_index = 0;
  double clock = 0.0;
  std::vector<VehicleRecord> active;
  alloc::Occupancy occupancy;
  std::optional<alloc::Allocation> last_allocation;
  bool changed = false;  // active set differs from the one last solved
  std::int64_t next_id = 0;
};

/// Raised when an allocation fails mid-run. Carries the failing step and the
/// conic problem dump.
class SimulationError : public std::runtime_error {
 public:
  SimulationError(const std::string& what, double time, std::string dump)
      : std::runtime_error(what), time_(time), dump_(std::move(dump)) {}
  double time() const { return time_; }
  const std::string& dump() const { return dump_; }

 private:
  double time_;
  std::string dump_;
};

/// Called after every fresh allocation with the occupancy it was solved for.
using SolveObserver =
    std::function<void(const SystemState&, const alloc::Allocation&)>;

/// Sequential state machine for one run.
class Simulation {
 public:
  explicit Simulation(SimulationConfig config);

  /// Admit, allocate if needed, charge, depart, advance. Returns the sample
  /// for the step just taken.
  Sample step();
  bool finished() const;

  const SystemState& state() const { return state_; }
  const SimulationConfig& config() const { return config_; }
  const std::vector<VehicleRecord>& completed() const { return completed_; }
  const SolverStats& stats() const { return stats_; }

  void set_observer(SolveObserver observer) { observer_ = std::move(observer); }

 private:
  SimulationConfig config_;
  alloc::AllocatorOptions allocator_;
  ArrivalStream arrivals_;
  SystemState state_;
  std::vector<VehicleRecord> completed_;
  SolverStats stats_;
  SolveObserver observer_;
};

struct RunOutput {
  std::vector<Sample> series;
  std::vector<VehicleRecord> completed;  // in departure order
  std::vector<VehicleRecord> unfinished;  // still charging at the horizon
  SolverStats stats;
};

/// Steps from an empty network until the clock reaches the horizon.
RunOutput run(const SimulationConfig& config, const SolveObserver& observer = {});

/// `time,N,aggregate_power,objective`
void write_timeseries(std::ostream& out, const RunOutput& run);
/// `id,node,arrival,departure,charging_time`; node is the network node id.
/// Unfinished vehicles follow with empty departure and charging_time.
void write_vehicles(std::ostream& out, const RunOutput& run, const net::RootedTree& tree);

std::vector<Sample> read_timeseries(std::istream& in);
/// Inverse of write_vehicles; node ids are mapped back to tree indices.
std::vector<VehicleRecord> read_vehicles(std::istream& in, const net::RootedTree& tree);

}  // namespace gridcharge::sim
