#include "gridcharge/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "gridcharge/format.hpp"

namespace gridcharge::sim {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

std::mt19937_64 seeded_engine(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t state = seed ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  std::seed_seq::result_type words[8];
  for (int i = 0; i < 8; i += 2) {
    const std::uint64_t v = splitmix64(state);
    words[i] = static_cast<std::uint32_t>(v);
    words[i + 1] = static_cast<std::uint32_t>(v >> 32);
  }
  std::seed_seq seq(std::begin(words), std::end(words));
  return std::mt19937_64(seq);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : engine_(seeded_engine(seed, stream)) {}

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::exponential() { return -std::log1p(-uniform()); }

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("below(0)");
  // Rejection on the top partial block keeps the result unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t v;
  do v = engine_();
  while (v >= limit);
  return v % n;
}

ArrivalStream::ArrivalStream(std::uint64_t seed, double lambda, std::size_t nodes)
    : time_rng_(seed, 0), node_rng_(seed, 1), lambda_(lambda), nodes_(nodes) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("arrival rate must be finite and non-negative");
  if (nodes < 2) throw std::invalid_argument("arrivals need at least one non-root node");
}

void ArrivalStream::advance() {
  unit_clock_ += time_rng_.exponential();
  const std::size_t node = 1 + static_cast<std::size_t>(node_rng_.below(nodes_ - 1));
  pending_ = Arrival{unit_clock_ / lambda_, node};
}

std::vector<Arrival> ArrivalStream::sample(double from, double to) {
  std::vector<Arrival> out;
  if (lambda_ == 0.0 || !(to > from)) return out;
  if (!pending_) advance();
  while (pending_->time < to) {
    if (pending_->time >= from) out.push_back(*pending_);
    advance();
  }
  return out;
}

Grid::Grid(const net::NetworkSpec& spec)
    : tree(net::validate_tree(spec)), index(net::subtree_index(tree)) {}

std::shared_ptr<const Grid> Grid::load(const std::string& path, bool apply_prune) {
  auto spec = net::parse_network_file(path);
  if (apply_prune) spec = net::prune_nodes(spec, net::prune_list(spec));
  return std::make_shared<const Grid>(spec);
}

void SimulationConfig::validate() const {
  if (!grid) throw std::invalid_argument("simulation needs a network");
  if (grid->tree.size() < 2) throw std::invalid_argument("network has no charging nodes");
  if (!(arrival_rate >= 0.0) || !std::isfinite(arrival_rate))
    throw std::invalid_argument("arrival rate must be finite and non-negative");
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw std::invalid_argument("horizon must be positive");
  if (!(step > 0.0) || !std::isfinite(step)) throw std::invalid_argument("step must be positive");
  if (!(battery_capacity > 0.0) || !std::isfinite(battery_capacity))
    throw std::invalid_argument("battery capacity must be positive");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("alpha must lie in (0, 1)");
  if (nominal_voltage && !(*nominal_voltage > 0.0 && std::isfinite(*nominal_voltage)))
    throw std::invalid_argument("nominal voltage must be positive");
  solver.validate();
}

alloc::AllocatorOptions SimulationConfig::allocator_options() const {
  alloc::AllocatorOptions o;
  o.model.alpha = alpha;
  o.model.nominal_voltage = nominal_voltage;
  o.solver = solver;
  return o;
}

Simulation::Simulation(SimulationConfig config)
    : config_((config.validate(), std::move(config))),
      allocator_(config_.allocator_options()),
      arrivals_(config_.seed, config_.arrival_rate, config_.grid->tree.size()) {
  state_.occupancy = alloc::Occupancy(config_.grid->tree.size());
}

bool Simulation::finished() const { return state_.clock >= config_.horizon; }

Sample Simulation::step() {
  const auto& tree = config_.grid->tree;
  const double t = state_.clock;
  const double t_end = static_cast<double>(state_.step_index + 1) * config_.step;

  for (const Arrival& a : arrivals_.sample(t, t_end)) {
    state_.active.push_back({state_.next_id++, a.node, a.time, 0.0, std::nullopt});
    state_.occupancy.add(a.node);
    state_.changed = true;
  }

  if (state_.changed) {
    state_.changed = false;
    if (state_.occupancy.empty()) {
      state_.last_allocation.reset();
    } else {
      try {
        state_.last_allocation = alloc::allocate(tree, config_.grid->index, state_.occupancy,
                                                 config_.algorithm, allocator_);
      } catch (const alloc::AllocationError& e) {
        std::ostringstream msg;
        msg << "allocation failed at t=" << format_double(t) << " with "
            << state_.occupancy.total() << " vehicles: " << e.what();
        throw SimulationError(msg.str(), t, e.dump());
      }
      const auto& a = *state_.last_allocation;
      ++stats_.allocations;
      stats_.solves += a.solves;
      stats_.certificate_retries += a.retried;
      stats_.relaxed += a.relaxed;
      stats_.max_gap = std::max(stats_.max_gap, a.certificate.max_relative_gap);
      if (observer_) observer_(state_, a);
    }
  }

  Sample sample{t, state_.occupancy.total(), 0.0, 0.0};
  if (state_.last_allocation) {
    const auto& r = state_.last_allocation->result;
    sample.aggregate_power = r.aggregate_power();
    sample.objective = r.objective;

    const double cap = config_.battery_capacity;
    // Guards against a full battery landing one rounding error short.
    const double full = cap * (1.0 - 1e-12);
    std::vector<VehicleRecord> still;
    still.reserve(state_.active.size());
    for (auto& v : state_.active) {
      v.charge = std::min(cap, v.charge + r.vehicle_power(v.node) * config_.step);
      if (v.charge >= full) {
        v.charge = cap;
        v.departure_time = t_end;
        state_.occupancy.add(v.node, -1);
        state_.changed = true;
        completed_.push_back(v);
      } else {
        still.push_back(v);
      }
    }
    state_.active.swap(still);
  }

  ++state_.step_index;
  state_.clock = t_end;
  return sample;
}

RunOutput run(const SimulationConfig& config, const SolveObserver& observer) {
  Simulation sim(config);
  if (observer) sim.set_observer(observer);
  RunOutput out;
  out.series.reserve(static_cast<std::size_t>(std::ceil(config.horizon / config.step)));
  while (!sim.finished()) out.series.push_back(sim.step());
  out.completed = sim.completed();
  out.unfinished = sim.state().active;
  out.stats = sim.stats();
  return out;
}

void write_timeseries(std::ostream& out, const RunOutput& run) {
  out << "time,N,aggregate_power,objective\n";
  for (const auto& s : run.series)
    out << format_double(s.time) << ',' << s.vehicles << ',' << format_double(s.aggregate_power)
        << ',' << format_double(s.objective) << '\n';
}

void write_vehicles(std::ostream& out, const RunOutput& run, const net::RootedTree& tree) {
  out << "id,node,arrival,departure,charging_time\n";
  for (const auto& v : run.completed)
    out << v.id << ',' << tree.id(v.node) << ',' << format_double(v.arrival_time) << ','
        << format_double(*v.departure_time) << ',' << format_double(v.charging_time()) << '\n';
  for (const auto& v : run.unfinished)
    out << v.id << ',' << tree.id(v.node) << ',' << format_double(v.arrival_time) << ",,\n";
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double to_double(const std::string& s, std::size_t line) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size())
    throw std::runtime_error("line " + std::to_string(line) + ": bad number '" + s + "'");
  return v;
}

template <class Fn>
void read_csv(std::istream& in, const std::string& header, std::size_t columns, Fn&& fn) {
  std::string line;
  if (!std::getline(in, line) || line != header)
    throw std::runtime_error("expected header '" + header + "'");
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_row(line);
    if (cells.size() != columns)
      throw std::runtime_error("line " + std::to_string(n) + ": expected " +
                               std::to_string(columns) + " fields");
    fn(cells, n);
  }
}

}  // namespace

std::vector<Sample> read_timeseries(std::istream& in) {
  std::vector<Sample> out;
  read_csv(in, "time,N,aggregate_power,objective", 4, [&](const auto& c, std::size_t n) {
    out.push_back({to_double(c[0], n), static_cast<int>(to_double(c[1], n)), to_double(c[2], n),
                   to_double(c[3], n)});
  });
  return out;
}

std::vector<VehicleRecord> read_vehicles(std::istream& in, const net::RootedTree& tree) {
  std::vector<VehicleRecord> out;
  read_csv(in, "id,node,arrival,departure,charging_time", 5, [&](const auto& c, std::size_t n) {
    VehicleRecord v;
    v.id = static_cast<std::int64_t>(to_double(c[0], n));
    const auto id = static_cast<net::NodeId>(to_double(c[1], n));
    if (!tree.contains(id))
      throw std::runtime_error("line " + std::to_string(n) + ": unknown node " + c[1]);
    v.node = tree.index_of(id);
    v.arrival_time = to_double(c[2], n);
    if (!c[3].empty()) v.departure_time = to_double(c[3], n);
    out.push_back(v);
  });
  return out;
}

}  // namespace gridcharge::sim
