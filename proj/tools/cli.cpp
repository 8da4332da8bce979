#include "cli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "gridcharge/format.hpp"
#include "gridcharge/simulate.hpp"
#include "gridcharge/stats.hpp"
#include "json.hpp"

namespace gridcharge::cli {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr const char* kToleranceEnv = "GRIDCHARGE_SOLVER_TOL";

struct Settings {
  std::string network;
  bool prune = true;
  std::vector<alloc::Algorithm> algorithms{alloc::Algorithm::max_flow};
  std::vector<double> lambdas;
  int runs = 1;
  double horizon = 1000.0;
  double step = 1.0;
  double alpha = 0.1;
  double battery = 1.0;
  std::optional<double> voltage;
  std::uint64_t seed = 0;
  std::string out = ".";
  int jobs = 0;
  double window = 100.0;
  double trim = 1000.0;
  double tolerance = 1e-8;
  stats::CiMethod ci = stats::CiMethod::student;
  bool verbose = false;
};

// ---------------------------------------------------------------- parsing

double parse_number(const std::string& text, const std::string& what) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v))
    throw UsageError(what + ": '" + text + "' is not a number");
  return v;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(text);
  while (std::getline(in, cell, sep))
    if (!cell.empty()) out.push_back(cell);
  return out;
}

// Grid points are rounded to 12 decimals so 0.1:0.3:0.1 prints as 0.3.
double tidy(double v) { return std::round(v * 1e12) / 1e12; }

std::vector<double> parse_grid(const std::string& text) {
  const auto parts = split(text, ':');
  if (parts.size() != 3) throw UsageError("--grid expects start:stop:step, got '" + text + "'");
  const double a = parse_number(parts[0], "--grid start");
  const double b = parse_number(parts[1], "--grid stop");
  const double s = parse_number(parts[2], "--grid step");
  if (a < 0 || b < a || !(s > 0)) throw UsageError("--grid needs 0 <= start <= stop and step > 0");
  std::vector<double> out;
  for (long k = 0;; ++k) {
    const double v = tidy(a + static_cast<double>(k) * s);
    if (v > b + 1e-9 * s) break;
    out.push_back(v);
  }
  return out;
}

std::vector<double> parse_lambdas(const std::string& text) {
  std::vector<double> out;
  for (const auto& p : split(text, ',')) {
    const double v = parse_number(p, "--lambda");
    if (v < 0) throw UsageError("--lambda must be non-negative, got " + p);
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--lambda is empty");
  return out;
}

std::vector<alloc::Algorithm> parse_algorithms(const std::string& text) {
  if (text == "both") return {alloc::Algorithm::max_flow, alloc::Algorithm::proportional_fairness};
  std::vector<alloc::Algorithm> out;
  for (const auto& p : split(text, ',')) {
    auto a = alloc::parse_algorithm(p);
    if (!a) throw UsageError("unknown algorithm '" + p + "' (expected mf or pf)");
    if (std::find(out.begin(), out.end(), *a) == out.end()) out.push_back(*a);
  }
  if (out.empty()) throw UsageError("--algo is empty");
  return out;
}

stats::CiMethod parse_ci(const std::string& text) {
  if (text == "student") return stats::CiMethod::student;
  if (text == "normal") return stats::CiMethod::normal;
  if (text == "bootstrap") return stats::CiMethod::bootstrap;
  throw UsageError("--ci must be student, normal or bootstrap");
}

void merge_lambdas(std::vector<double>& into, const std::vector<double>& more) {
  into.insert(into.end(), more.begin(), more.end());
  std::sort(into.begin(), into.end());
  into.erase(std::unique(into.begin(), into.end()), into.end());
}

/// Config file keys mirror the long flag names.
void apply_config(Settings& s, const json& j) {
  static const std::set<std::string> known{
      "network", "prune", "algo",  "lambda", "grid", "runs",      "horizon", "step",
      "alpha",   "battery", "voltage", "seed", "out",  "jobs",      "window",  "trim",
      "tolerance", "ci"};
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw UsageError("unknown config key '" + it.key() + "'");
  auto text_or_list = [&](const char* key) {
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number()) return format_double(v.get<double>());
    std::string joined;
    for (const auto& e : v) joined += (e.is_string() ? e.get<std::string>() : format_double(e.get<double>())) + ",";
    return joined;
  };
  try {
    if (j.contains("network")) s.network = j["network"].get<std::string>();
    if (j.contains("prune")) s.prune = j["prune"].get<bool>();
    if (j.contains("algo")) s.algorithms = parse_algorithms(text_or_list("algo"));
    if (j.contains("lambda")) merge_lambdas(s.lambdas, parse_lambdas(text_or_list("lambda")));
    if (j.contains("grid")) {
      const auto& g = j["grid"];
      for (const auto& spec : g.is_array() ? g : json::array({g}))
        merge_lambdas(s.lambdas, parse_grid(spec.get<std::string>()));
    }
    if (j.contains("runs")) s.runs = j["runs"].get<int>();
    if (j.contains("horizon")) s.horizon = j["horizon"].get<double>();
    if (j.contains("step")) s.step = j["step"].get<double>();
    if (j.contains("alpha")) s.alpha = j["alpha"].get<double>();
    if (j.contains("battery")) s.battery = j["battery"].get<double>();
    if (j.contains("voltage") && !j["voltage"].is_null()) s.voltage = j["voltage"].get<double>();
    if (j.contains("seed")) s.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("out")) s.out = j["out"].get<std::string>();
    if (j.contains("jobs")) s.jobs = j["jobs"].get<int>();
    if (j.contains("window")) s.window = j["window"].get<double>();
    if (j.contains("trim")) s.trim = j["trim"].get<double>();
    if (j.contains("tolerance")) s.tolerance = j["tolerance"].get<double>();
    if (j.contains("ci")) s.ci = parse_ci(j["ci"].get<std::string>());
  } catch (const json::exception& e) {
    throw UsageError(std::string("config file: ") + e.what());
  }
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

/// Raw flag values; only flags actually given override the settings.
struct Flags {
  std::string config, network, algo, lambda, out, ci;
  std::vector<std::string> grid;
  double horizon = 0, step = 0, alpha = 0, window = 0, trim = 0, battery = 0, voltage = 0;
  int runs = 0, jobs = 0;
  std::uint64_t seed = 0;
  bool no_prune = false, verbose = false;
  std::map<std::string, CLI::Option*> opt;

  bool given(const std::string& name) const {
    auto it = opt.find(name);
    return it != opt.end() && it->second->count() > 0;
  }
};

void add_model_flags(CLI::App* app, Flags& f) {
  f.opt["config"] = app->add_option("--config", f.config, "JSON config file (flags take precedence)");
  f.opt["network"] = app->add_option("--network", f.network, "network edge-list file");
  f.opt["no-prune"] = app->add_flag("--no-prune", f.no_prune, "keep nodes listed under prune=");
  f.opt["algo"] = app->add_option("--algo", f.algo, "mf, pf, or a comma list");
  f.opt["lambda"] = app->add_option("--lambda", f.lambda, "arrival rate (comma list for sweeps)");
  f.opt["horizon"] = app->add_option("--horizon", f.horizon, "simulated time units");
  f.opt["step"] = app->add_option("--step", f.step, "time step");
  f.opt["alpha"] = app->add_option("--alpha", f.alpha, "voltage band half-width (fraction)");
  f.opt["battery"] = app->add_option("--battery", f.battery, "battery capacity");
  f.opt["voltage"] = app->add_option("--voltage", f.voltage, "nominal voltage override");
  f.opt["seed"] = app->add_option("--seed", f.seed, "base seed");
  f.opt["out"] = app->add_option("--out", f.out, "output directory");
  f.opt["verbose"] = app->add_flag("-v,--verbose", f.verbose, "progress on stderr");
}

void add_stats_flags(CLI::App* app, Flags& f) {
  f.opt["window"] = app->add_option("--window", f.window, "window length for eta and chi");
  f.opt["trim"] = app->add_option("--trim", f.trim, "transient discarded before statistics");
  f.opt["ci"] = app->add_option("--ci", f.ci, "student (default), normal or bootstrap");
}

double tolerance_from_env(double fallback) {
  const char* env = std::getenv(kToleranceEnv);
  if (!env || !*env) return fallback;
  const double v = parse_number(env, kToleranceEnv);
  if (!(v > 0)) throw UsageError(std::string(kToleranceEnv) + " must be positive");
  return v;
}

Settings resolve(const Flags& f) {
  Settings s;
  if (f.given("config")) apply_config(s, read_json(f.config));
  if (f.given("network")) s.network = f.network;
  if (f.given("no-prune")) s.prune = !f.no_prune;
  if (f.given("algo")) s.algorithms = parse_algorithms(f.algo);
  // Rates on the command line replace any from the config file.
  if (f.given("lambda") || f.given("grid")) {
    s.lambdas.clear();
    if (f.given("lambda")) merge_lambdas(s.lambdas, parse_lambdas(f.lambda));
    for (const auto& g : f.grid) merge_lambdas(s.lambdas, parse_grid(g));
  }
  if (f.given("runs")) s.runs = f.runs;
  if (f.given("horizon")) s.horizon = f.horizon;
  if (f.given("step")) s.step = f.step;
  if (f.given("alpha")) s.alpha = f.alpha;
  if (f.given("battery")) s.battery = f.battery;
  if (f.given("voltage")) s.voltage = f.voltage;
  if (f.given("seed")) s.seed = f.seed;
  if (f.given("out")) s.out = f.out;
  if (f.given("jobs")) s.jobs = f.jobs;
  if (f.given("window")) s.window = f.window;
  if (f.given("trim")) s.trim = f.trim;
  if (f.given("ci")) s.ci = parse_ci(f.ci);
  s.verbose = f.verbose;
  s.tolerance = tolerance_from_env(s.tolerance);
  return s;
}

std::shared_ptr<const sim::Grid> load_grid(const std::string& path, bool prune) {
  if (path.empty()) throw UsageError("--network is required");
  if (!fs::is_regular_file(path)) throw UsageError("network file not found: " + path);
  try {
    return sim::Grid::load(path, prune);
  } catch (const net::NetworkError& e) {
    throw UsageError(path + ": " + e.what());
  }
}

sim::SimulationConfig make_config(const Settings& s, std::shared_ptr<const sim::Grid> grid,
                                  double lambda, alloc::Algorithm algo, std::uint64_t seed) {
  sim::SimulationConfig c;
  c.grid = std::move(grid);
  c.arrival_rate = lambda;
  c.horizon = s.horizon;
  c.step = s.step;
  c.battery_capacity = s.battery;
  c.alpha = s.alpha;
  c.nominal_voltage = s.voltage;
  c.algorithm = algo;
  c.seed = seed;
  c.solver.tolerance = s.tolerance;
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

void check_windows(const Settings& s) {
  if (!(s.window > 0) || s.trim < 0) throw UsageError("--window must be positive, --trim >= 0");
  const double span = s.horizon - s.step - s.trim;
  if (span < 10 * s.window)
    throw UsageError("horizon leaves fewer than 10 windows after the trim; lower --window or --trim");
}

// ------------------------------------------------------------ run output

json run_record(const Settings& s, const sim::SimulationConfig& c, const sim::RunOutput* out) {
  json j{{"network", fs::absolute(s.network).lexically_normal().string()},
         {"prune", s.prune},
         {"lambda", c.arrival_rate},
         {"algo", alloc::to_string(c.algorithm)},
         {"horizon", c.horizon},
         {"step", c.step},
         {"alpha", c.alpha},
         {"battery", c.battery_capacity},
         {"voltage", c.nominal_voltage ? json(*c.nominal_voltage) : json(nullptr)},
         {"seed", c.seed},
         {"tolerance", c.solver.tolerance}};
  if (out) {
    j["allocations"] = out->stats.allocations;
    j["solves"] = out->stats.solves;
    j["relaxed"] = out->stats.relaxed;
    j["certificate_retries"] = out->stats.certificate_retries;
    j["max_gap"] = out->stats.max_gap;
    j["completed"] = out->completed.size();
  }
  return j;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  f << text;
  if (!f) throw std::runtime_error("write failed for '" + path.string() + "'");
}

/// Writes the run files into `dir` through a temporary sibling so a killed
/// process never leaves a half-written cell behind.
void write_run(const fs::path& dir, const json& record, const sim::RunOutput& out,
               const net::RootedTree& tree) {
  fs::path tmp = dir;
  tmp += ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  std::ostringstream ts, vs;
  sim::write_timeseries(ts, out);
  sim::write_vehicles(vs, out, tree);
  write_text(tmp / "timeseries.csv", ts.str());
  write_text(tmp / "vehicles.csv", vs.str());
  write_text(tmp / "config.json", record.dump(2) + "\n");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

void write_failure(const fs::path& dir, const json& record, const sim::SimulationError& e) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  json r = record;
  r["error"] = e.what();
  write_text(dir / "config.json", r.dump(2) + "\n");
  write_text(dir / "failure_dump.txt", e.dump());
}

// ------------------------------------------------------------------- run

int cmd_run(const Settings& s, std::ostream& out, std::ostream& err) {
  auto grid = load_grid(s.network, s.prune);
  if (s.lambdas.size() != 1) throw UsageError("run needs exactly one --lambda");
  if (s.algorithms.size() != 1) throw UsageError("run needs exactly one --algo");
  auto config = make_config(s, grid, s.lambdas.front(), s.algorithms.front(), s.seed);
  const fs::path dir = s.out;
  fs::create_directories(dir);
  const json record = run_record(s, config, nullptr);
  sim::RunOutput result;
  try {
    result = sim::run(config);
  } catch (const sim::SimulationError& e) {
    write_text(dir / "failure_dump.txt", e.dump());
    err << "error: " << e.what() << "\nproblem dump written to " << (dir / "failure_dump.txt").string()
        << "\n";
    return kRuntimeFailure;
  }
  std::ostringstream ts, vs;
  sim::write_timeseries(ts, result);
  sim::write_vehicles(vs, result, grid->tree);
  write_text(dir / "timeseries.csv", ts.str());
  write_text(dir / "vehicles.csv", vs.str());
  write_text(dir / "config.json", run_record(s, config, &result).dump(2) + "\n");
  out << "wrote " << (dir / "timeseries.csv").string() << " and " << (dir / "vehicles.csv").string()
      << ": " << result.completed.size() << " vehicles completed, " << result.unfinished.size()
      << " charging at the horizon, " << result.stats.solves << " solves\n";
  return kSuccess;
}

// ----------------------------------------------------------------- sweep

struct Cell {
  double lambda = 0.0;
  alloc::Algorithm algo = alloc::Algorithm::max_flow;
  int run = 0;

  std::string key() const {
    return "lambda_" + format_double(lambda) + "/" + alloc::to_string(algo) + "/run_" +
           std::to_string(run);
  }
};

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Everything that changes the contents of a run, apart from rate, algorithm
/// and seed which are recorded per cell.
std::string config_hash(const Settings& s) {
  json j{{"network", slurp(s.network)}, {"prune", s.prune},     {"horizon", s.horizon},
         {"step", s.step},              {"alpha", s.alpha},     {"battery", s.battery},
         {"voltage", s.voltage ? json(*s.voltage) : json(nullptr)},
         {"tolerance", s.tolerance}};
  std::ostringstream hex;
  hex << std::hex << fnv1a(j.dump());
  return hex.str();
}

class Manifest {
 public:
  Manifest(fs::path path, std::string hash) : path_(std::move(path)), hash_(std::move(hash)) {
    if (fs::exists(path_)) {
      try {
        auto j = json::parse(slurp(path_));
        if (j.value("config_hash", "") == hash_) cells_ = j.value("cells", json::object());
      } catch (const json::exception&) {
        // Unreadable manifest: recompute everything.
      }
    }
  }

  bool complete(const Cell& c, std::uint64_t seed, const fs::path& dir) const {
    auto it = cells_.find(c.key());
    if (it == cells_.end()) return false;
    return it->value("status", "") == "complete" && it->value("seed", std::uint64_t{0}) == seed &&
           fs::exists(dir / "timeseries.csv") && fs::exists(dir / "vehicles.csv");
  }

  void record(const Cell& c, std::uint64_t seed, const std::string& status,
              const std::string& message = {}) {
    std::lock_guard<std::mutex> lock(mutex_);
    json e{{"lambda", c.lambda}, {"algo", alloc::to_string(c.algo)}, {"run", c.run},
           {"seed", seed},       {"status", status}};
    if (!message.empty()) e["message"] = message;
    cells_[c.key()] = e;
    flush();
  }

  void flush() {
    json j{{"config_hash", hash_}, {"cells", cells_}};
    fs::path tmp = path_;
    tmp += ".tmp";
    write_text(tmp, j.dump(2) + "\n");
    fs::rename(tmp, path_);
  }

  json cells() const { return cells_; }

 private:
  fs::path path_;
  std::string hash_;
  json cells_ = json::object();
  std::mutex mutex_;
};

json settings_json(const Settings& s) {
  json algos = json::array();
  for (auto a : s.algorithms) algos.push_back(alloc::to_string(a));
  return json{{"network", fs::absolute(s.network).lexically_normal().string()},
              {"prune", s.prune},
              {"algo", algos},
              {"lambda", s.lambdas},
              {"runs", s.runs},
              {"horizon", s.horizon},
              {"step", s.step},
              {"alpha", s.alpha},
              {"battery", s.battery},
              {"voltage", s.voltage ? json(*s.voltage) : json(nullptr)},
              {"seed", s.seed},
              {"window", s.window},
              {"trim", s.trim},
              {"tolerance", s.tolerance}};
}

stats::RunObservables observe_dir(const fs::path& dir, const net::RootedTree& tree, double lambda,
                                  const stats::WindowOptions& w) {
  std::ifstream ts(dir / "timeseries.csv"), vs(dir / "vehicles.csv");
  if (!ts || !vs) throw std::runtime_error("missing run files in " + dir.string());
  const auto series = stats::Series::from_samples(sim::read_timeseries(ts));
  const auto vehicles = sim::read_vehicles(vs, tree);
  if (lambda == 0.0) {
    // No arrivals: nothing accumulates, and eta's 1/lambda is undefined.
    return {0.0, 0.0, std::nullopt};
  }
  return stats::observe(series, vehicles, lambda, w);
}

/// Summary rows from the cells on disk, in grid order.
std::vector<stats::StatRecord> summarize(const Settings& s, const fs::path& root,
                                         const net::RootedTree& tree, const json& cells) {
  std::vector<stats::StatRecord> rows;
  const stats::WindowOptions w{s.window, s.trim};
  for (double lambda : s.lambdas)
    for (auto algo : s.algorithms) {
      std::vector<stats::RunObservables> obs;
      for (int k = 0; k < s.runs; ++k) {
        const Cell c{lambda, algo, k};
        auto it = cells.find(c.key());
        if (it == cells.end() || it->value("status", "") != "complete") continue;
        obs.push_back(observe_dir(root / "runs" / c.key(), tree, lambda, w));
      }
      if (obs.empty()) continue;
      rows.push_back(stats::ensemble(lambda, alloc::to_string(algo), obs, s.window, s.ci));
    }
  return rows;
}

int cmd_sweep(const Settings& s, std::ostream& out, std::ostream& err) {
  auto grid = load_grid(s.network, s.prune);
  if (s.lambdas.empty()) throw UsageError("sweep needs --grid or --lambda");
  if (s.runs < 1) throw UsageError("--runs must be at least 1");
  if (s.jobs < 0) throw UsageError("--jobs must be non-negative");
  check_windows(s);
  // Validate once up front so workers only see runtime failures.
  make_config(s, grid, s.lambdas.front(), s.algorithms.front(), s.seed);

  const fs::path root = s.out;
  fs::create_directories(root / "runs");
  write_text(root / "plan.json", settings_json(s).dump(2) + "\n");
  Manifest manifest(root / "manifest.json", config_hash(s));

  std::vector<Cell> todo;
  std::size_t total = 0;
  for (double lambda : s.lambdas)
    for (auto algo : s.algorithms)
      for (int k = 0; k < s.runs; ++k) {
        const Cell c{lambda, algo, k};
        ++total;
        if (!manifest.complete(c, s.seed + static_cast<std::uint64_t>(k), root / "runs" / c.key()))
          todo.push_back(c);
      }
  if (todo.size() < total)
    err << "resuming: " << (total - todo.size()) << " of " << total << " cells already complete\n";

  unsigned jobs = s.jobs > 0 ? static_cast<unsigned>(s.jobs) : std::thread::hardware_concurrency();
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(1, todo.size()))));

  std::atomic<std::size_t> next{0}, done{0};
  std::mutex log_mutex;
  std::vector<std::string> failures;
  auto worker = [&] {
    for (std::size_t i = next++; i < todo.size(); i = next++) {
      const Cell& c = todo[i];
      const std::uint64_t seed = s.seed + static_cast<std::uint64_t>(c.run);
      const fs::path dir = root / "runs" / c.key();
      const auto config = make_config(s, grid, c.lambda, c.algo, seed);
      std::string failure;
      try {
        const auto result = sim::run(config);
        write_run(dir, run_record(s, config, &result), result, grid->tree);
        manifest.record(c, seed, "complete");
      } catch (const sim::SimulationError& e) {
        failure = e.what();
        write_failure(dir, run_record(s, config, nullptr), e);
      } catch (const std::exception& e) {
        failure = e.what();
      }
      std::lock_guard<std::mutex> lock(log_mutex);
      if (!failure.empty()) {
        manifest.record(c, seed, "failed", failure);
        failures.push_back(c.key() + ": " + failure);
      }
      ++done;
      if (s.verbose)
        err << "[" << done << "/" << todo.size() << "] " << c.key()
            << (failure.empty() ? " done" : " FAILED") << "\n";
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  const auto rows = summarize(s, root, grid->tree, manifest.cells());
  std::ostringstream csv;
  stats::write_summary(csv, rows);
  write_text(root / "summary.csv", csv.str());
  out << "ran " << todo.size() << " of " << total << " cells; summary written to "
      << (root / "summary.csv").string() << "\n";
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    err << failures.size() << " cell(s) failed:\n";
    for (const auto& f : failures) err << "  " << f << "\n";
    return kRuntimeFailure;
  }
  return kSuccess;
}

// ----------------------------------------------------------------- stats

Settings settings_from_plan(const json& j) {
  Settings s;
  s.network = j.at("network").get<std::string>();
  s.prune = j.at("prune").get<bool>();
  s.algorithms.clear();
  for (const auto& a : j.at("algo")) s.algorithms.push_back(*alloc::parse_algorithm(a.get<std::string>()));
  s.lambdas = j.at("lambda").get<std::vector<double>>();
  s.runs = j.at("runs").get<int>();
  s.horizon = j.at("horizon").get<double>();
  s.step = j.at("step").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.window = j.at("window").get<double>();
  s.trim = j.at("trim").get<double>();
  return s;
}

int cmd_stats(const std::string& target, const Flags& f, std::ostream& out) {
  const fs::path dir = target;
  auto override_stats = [&](Settings& s) {
    if (f.given("window")) s.window = f.window;
    if (f.given("trim")) s.trim = f.trim;
    if (f.given("ci")) s.ci = parse_ci(f.ci);
  };
  if (fs::exists(dir / "plan.json")) {
    Settings s = settings_from_plan(read_json(dir / "plan.json"));
    override_stats(s);
    check_windows(s);
    auto grid = load_grid(s.network, s.prune);
    json cells = fs::exists(dir / "manifest.json") ? read_json(dir / "manifest.json").value("cells", json::object())
                                                   : json::object();
    stats::write_summary(out, summarize(s, dir, grid->tree, cells));
    return kSuccess;
  }
  if (fs::exists(dir / "config.json") && fs::exists(dir / "timeseries.csv")) {
    const json rec = read_json(dir / "config.json");
    Settings s;
    s.network = rec.at("network").get<std::string>();
    s.prune = rec.at("prune").get<bool>();
    s.horizon = rec.at("horizon").get<double>();
    s.step = rec.at("step").get<double>();
    override_stats(s);
    check_windows(s);
    auto grid = load_grid(s.network, s.prune);
    const double lambda = rec.at("lambda").get<double>();
    const auto o = observe_dir(dir, grid->tree, lambda, {s.window, s.trim});
    out << "lambda,algorithm,eta,chi,gini,window\n"
        << format_double(lambda) << ',' << rec.at("algo").get<std::string>() << ','
        << format_double(o.eta) << ',' << format_double(o.chi) << ','
        << (o.gini ? format_double(*o.gini) : "") << ',' << format_double(s.window) << "\n";
    return kSuccess;
  }
  throw UsageError("'" + target + "' is neither a sweep directory nor a run directory");
}

// ----------------------------------------------------------------- audit

struct AuditOptions {
  int samples = 20;
  std::uint64_t seed = 0;
  double corrupt = 0.0;
  double tolerance = 1e-6;
};

std::vector<fs::path> find_runs(const fs::path& root) {
  std::vector<fs::path> runs;
  auto is_run = [](const fs::path& d) {
    return fs::exists(d / "config.json") && fs::exists(d / "vehicles.csv");
  };
  if (is_run(root)) runs.push_back(root);
  if (fs::is_directory(root))
    for (const auto& e : fs::recursive_directory_iterator(root))
      if (e.is_directory() && is_run(e.path())) runs.push_back(e.path());
  std::sort(runs.begin(), runs.end());
  return runs;
}

int cmd_audit(const std::string& target, const AuditOptions& o, std::ostream& out,
              std::ostream& err) {
  if (!fs::exists(target)) throw UsageError("no such file or directory: " + target);
  if (o.samples < 1) throw UsageError("--samples must be positive");
  const auto runs = find_runs(target);
  std::size_t states = 0, failed = 0;
  double worst = 0.0;
  for (const auto& dir : runs) {
    const json rec = read_json(dir / "config.json");
    auto grid = load_grid(rec.at("network").get<std::string>(), rec.at("prune").get<bool>());
    std::ifstream vs(dir / "vehicles.csv");
    const auto vehicles = sim::read_vehicles(vs, grid->tree);
    const double step = rec.at("step").get<double>();
    const double horizon = rec.at("horizon").get<double>();
    const auto algo = *alloc::parse_algorithm(rec.at("algo").get<std::string>());

    alloc::AllocatorOptions opt;
    opt.model.alpha = rec.at("alpha").get<double>();
    if (!rec.at("voltage").is_null()) opt.model.nominal_voltage = rec.at("voltage").get<double>();
    opt.solver.tolerance = tolerance_from_env(rec.at("tolerance").get<double>());
    opt.exactness_tolerance = o.tolerance;

    // Occupancy charging during [t, t + step).
    auto occupancy_at = [&](double t) {
      alloc::Occupancy occ(grid->tree.size());
      for (const auto& v : vehicles)
        if (v.arrival_time < t + step && (!v.departure_time || *v.departure_time > t))
          occ.add(v.node);
      return occ;
    };
    const auto steps = static_cast<std::uint64_t>(std::ceil(horizon / step - 1e-9));
    if (vehicles.empty() || steps == 0) continue;
    sim::Rng rng(o.seed, fnv1a(dir.string()));
    for (int k = 0, tries = 0; k < o.samples && tries < 20 * o.samples; ++tries) {
      const double t = static_cast<double>(rng.below(steps)) * step;
      const auto occ = occupancy_at(t);
      if (occ.empty()) continue;
      ++k;
      ++states;
      alloc::Allocation a;
      try {
        a = alloc::allocate(grid->tree, grid->index, occ, algo, opt);
      } catch (const alloc::AllocationError& e) {
        ++failed;
        worst = conic::kInfinity;
        err << dir.string() << " t=" << format_double(t) << ": " << e.what() << "\n";
        continue;
      }
      auto result = a.result;
      if (o.corrupt > 0)
        for (std::size_t j = 1; j < result.w_edge.size(); ++j) result.w_edge[j] *= 1.0 + o.corrupt;
      const auto cert = alloc::certify_exactness(grid->tree, result, o.tolerance);
      worst = std::max(worst, cert.max_relative_gap);
      if (!cert.pass) {
        ++failed;
        err << dir.string() << " t=" << format_double(t) << ": rank-1 gap "
            << format_double(cert.max_relative_gap) << "\n";
      }
    }
  }
  if (states == 0) {
    err << "warning: nothing to audit under '" << target << "'\n";
    out << "audited 0 states\n";
    return kSuccess;
  }
  const double rate = 100.0 * static_cast<double>(states - failed) / static_cast<double>(states);
  out << "audited " << states << " states from " << runs.size() << " runs: pass rate "
      << format_double(rate) << "%, max relative gap " << format_double(worst) << "\n";
  return failed == 0 ? kSuccess : kRuntimeFailure;
}

// -------------------------------------------------------------- validate

int cmd_validate(const std::string& path, bool prune, std::ostream& out, std::ostream& err) {
  if (!fs::is_regular_file(path)) throw UsageError("network file not found: " + path);
  try {
    auto spec = net::parse_network_file(path);
    const auto pruned = prune ? net::prune_list(spec) : std::set<net::NodeId>{};
    const auto tree = net::validate_tree(prune ? net::prune_nodes(spec, pruned) : spec);
    std::size_t depth = 0, leaves = 0;
    for (std::size_t j = 0; j < tree.size(); ++j) {
      depth = std::max(depth, tree.depth(j));
      leaves += tree.children(j).empty();
    }
    out << path << ": ok, " << tree.size() << " nodes, " << tree.edges().size() << " edges, root "
        << tree.id(tree.root()) << ", depth " << depth << ", " << leaves << " leaves, voltage "
        << format_double(tree.nominal_voltage());
    if (!pruned.empty()) out << ", " << pruned.size() << " nodes pruned";
    out << "\n";
    return kSuccess;
  } catch (const net::ParseError& e) {
    err << path << ":" << e.line() << ": " << e.what() << "\n";
  } catch (const net::NetworkError& e) {
    err << path << ": " << e.what() << "\n";
  }
  return kRuntimeFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Discrete-event EV charging on radial distribution networks", "gridcharge"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Flags run_flags, sweep_flags, stats_flags;
  auto* run = app.add_subcommand("run", "simulate one realisation");
  add_model_flags(run, run_flags);

  auto* sweep = app.add_subcommand("sweep", "ensemble runs over a grid of arrival rates");
  add_model_flags(sweep, sweep_flags);
  add_stats_flags(sweep, sweep_flags);
  sweep_flags.opt["grid"] = sweep->add_option("--grid", sweep_flags.grid, "start:stop:step (repeatable)");
  sweep_flags.opt["runs"] = sweep->add_option("--runs", sweep_flags.runs, "runs per grid point");
  sweep_flags.opt["jobs"] = sweep->add_option("--jobs", sweep_flags.jobs, "parallel workers (0 = all cores)");

  std::string stats_target;
  auto* stats_cmd = app.add_subcommand("stats", "observables of a sweep or run directory");
  stats_cmd->add_option("dir", stats_target, "sweep or run directory")->required();
  add_stats_flags(stats_cmd, stats_flags);

  std::string audit_target;
  AuditOptions audit_opt;
  auto* audit = app.add_subcommand("audit", "re-solve recorded states and check exactness");
  audit->add_option("dir", audit_target, "sweep or run directory")->required();
  audit->add_option("--samples", audit_opt.samples, "states per run");
  audit->add_option("--seed", audit_opt.seed, "sampling seed");
  audit->add_option("--tolerance", audit_opt.tolerance, "relative rank-1 gap tolerance");
  audit->add_option("--corrupt", audit_opt.corrupt,
                    "inflate every W_ij by this fraction before checking (self-test)");

  std::string validate_target;
  bool validate_no_prune = false;
  auto* validate = app.add_subcommand("validate", "check a network file");
  validate->add_option("file", validate_target, "network file")->required();
  validate->add_flag("--no-prune", validate_no_prune, "keep nodes listed under prune=");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    for (auto* sub : app.get_subcommands()) {
      err << sub->help();
      return kUsageError;
    }
    err << app.help();
    return kUsageError;
  }

  try {
    if (*run) return cmd_run(resolve(run_flags), out, err);
    if (*sweep) return cmd_sweep(resolve(sweep_flags), out, err);
    if (*stats_cmd) return cmd_stats(stats_target, stats_flags, out);
    if (*audit) return cmd_audit(audit_target, audit_opt, out, err);
    if (*validate) return cmd_validate(validate_target, !validate_no_prune, out, err);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kUsageError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsageError;
}

}  // namespace gridcharge::cli
