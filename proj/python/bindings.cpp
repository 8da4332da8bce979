#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>

#include "gridcharge/allocation.hpp"
#include "gridcharge/simulate.hpp"
#include "gridcharge/stats.hpp"

namespace py = pybind11;
using namespace gridcharge;

namespace {

alloc::Algorithm algorithm(const std::string& name) {
  auto a = alloc::parse_algorithm(name);
  if (!a) throw py::value_error("algorithm must be 'mf' or 'pf', got '" + name + "'");
  return *a;
}

using GridPtr = std::shared_ptr<sim::Grid>;

py::dict allocate(const GridPtr& grid, const std::map<int, int>& vehicles,
                  const std::string& algo, double alpha, std::optional<double> voltage,
                  double tolerance) {
  const auto& tree = grid->tree;
  alloc::Occupancy occ(tree.size());
  for (auto [id, count] : vehicles) {
    if (!tree.contains(id)) throw py::key_error("unknown node " + std::to_string(id));
    occ.set(tree.index_of(id), count);
  }
  alloc::AllocatorOptions opt;
  opt.model.alpha = alpha;
  opt.model.nominal_voltage = voltage;
  opt.solver.tolerance = tolerance;
  alloc::Allocation a;
  try {
    a = alloc::allocate(tree, grid->index, occ, algorithm(algo), opt);
  } catch (const alloc::AllocationError& e) {
    throw std::runtime_error(e.what());
  }
  std::map<int, double> power, voltage_out;
  for (std::size_t j = 0; j < tree.size(); ++j) {
    voltage_out[tree.id(j)] = a.result.voltage[j];
    if (a.result.vehicles[j] > 0) power[tree.id(j)] = a.result.node_power[j];
  }
  py::dict d;
  d["node_power"] = power;
  d["voltage"] = voltage_out;
  d["objective"] = a.result.objective;
  d["aggregate_power"] = a.result.aggregate_power();
  d["root_power"] = a.result.root_power();
  d["max_relative_gap"] = a.certificate.max_relative_gap;
  d["exact"] = a.certificate.pass;
  return d;
}

py::dict simulate(const GridPtr& grid, double lam, double horizon, const std::string& algo,
                  std::uint64_t seed, double step, double alpha, double battery) {
  sim::SimulationConfig c;
  c.grid = grid;
  c.arrival_rate = lam;
  c.horizon = horizon;
  c.algorithm = algorithm(algo);
  c.seed = seed;
  c.step = step;
  c.alpha = alpha;
  c.battery_capacity = battery;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw py::value_error(e.what());
  }
  sim::RunOutput out;
  {
    py::gil_scoped_release release;
    out = sim::run(c);
  }
  std::vector<double> time, power, objective;
  std::vector<int> n;
  for (const auto& s : out.series) {
    time.push_back(s.time);
    n.push_back(s.vehicles);
    power.push_back(s.aggregate_power);
    objective.push_back(s.objective);
  }
  py::list vehicles;
  for (const auto& v : out.completed)
    vehicles.append(py::make_tuple(v.id, grid->tree.id(v.node), v.arrival_time,
                                   *v.departure_time, v.charging_time()));
  py::dict d;
  d["time"] = time;
  d["N"] = n;
  d["aggregate_power"] = power;
  d["objective"] = objective;
  d["vehicles"] = vehicles;
  d["unfinished"] = out.unfinished.size();
  d["solves"] = out.stats.solves;
  return d;
}

stats::Series series(const std::vector<double>& n, double step) {
  stats::Series s;
  s.step = step;
  s.values = n;
  return s;
}

template <typename F>
auto translate_stats(F&& f) {
  try {
    return f();
  } catch (const stats::StatsError& e) {
    throw py::value_error(e.what());
  }
}

}  // namespace

PYBIND11_MODULE(_gridcharge, m) {
  m.doc() = "EV charging simulation core";

  py::class_<sim::Grid, GridPtr>(m, "Network")
      .def(py::init([](const std::string& path, bool prune) {
             try {
               return std::make_shared<sim::Grid>(*sim::Grid::load(path, prune));
             } catch (const net::NetworkError& e) {
               throw py::value_error(e.what());
             }
           }),
           py::arg("path"), py::arg("prune") = true,
           "Load an edge-list network file, dropping nodes listed under prune= by default.")
      .def_property_readonly("nodes", [](const sim::Grid& g) { return g.tree.ids(); })
      .def_property_readonly("root", [](const sim::Grid& g) { return g.tree.id(0); })
      .def_property_readonly("nominal_voltage",
                             [](const sim::Grid& g) { return g.tree.nominal_voltage(); })
      .def_property_readonly("edges",
                             [](const sim::Grid& g) {
                               std::vector<std::tuple<int, int, double, double>> e;
                               for (const auto& x : g.tree.edges())
                                 e.emplace_back(g.tree.id(x.parent), g.tree.id(x.child),
                                                x.resistance, x.reactance);
                               return e;
                             })
      .def("__len__", [](const sim::Grid& g) { return g.tree.size(); });

  m.def("allocate", &allocate, py::arg("network"), py::arg("vehicles"), py::arg("algo") = "mf",
        py::arg("alpha") = 0.1, py::arg("voltage") = py::none(), py::arg("tolerance") = 1e-8,
        "Solve one allocation for {node_id: vehicle_count}.");
  m.def("simulate", &simulate, py::arg("network"), py::arg("lam"), py::arg("horizon"),
        py::arg("algo") = "mf", py::arg("seed") = 0, py::arg("step") = 1.0,
        py::arg("alpha") = 0.1, py::arg("battery") = 1.0,
        "Run one simulation from an empty network.");
  m.def(
      "gini",
      [](std::vector<double> x) { return translate_stats([&] { return stats::gini(std::move(x)).value; }); },
      py::arg("samples"));
  m.def(
      "order_parameter",
      [](const std::vector<double>& n, double lam, double step, double window, double trim) {
        return translate_stats(
            [&] { return stats::order_parameter(series(n, step), lam, {window, trim}); });
      },
      py::arg("N"), py::arg("lam"), py::arg("step") = 1.0, py::arg("window") = 100.0,
      py::arg("trim") = 1000.0);
  m.def(
      "susceptibility",
      [](const std::vector<double>& n, double lam, double step, double window, double trim) {
        return translate_stats(
            [&] { return stats::susceptibility(series(n, step), lam, {window, trim}); });
      },
      py::arg("N"), py::arg("lam"), py::arg("step") = 1.0, py::arg("window") = 100.0,
      py::arg("trim") = 1000.0);
}
