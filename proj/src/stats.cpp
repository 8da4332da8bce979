#include "gridcharge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "gridcharge/format.hpp"

namespace gridcharge::stats {

namespace {

constexpr double kZ95 = 1.959963984540054;

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

Series Series::from_samples(const std::vector<sim::Sample>& samples) {
  Series s;
  if (samples.empty()) return s;
  s.start = samples.front().time;
  if (samples.size() > 1) s.step = samples[1].time - samples[0].time;
  s.values.reserve(samples.size());
  for (const auto& x : samples) s.values.push_back(x.vehicles);
  return s;
}

double Series::at(double t) const {
  const double k = std::floor((t - start) / step + 1e-9);
  if (k < 0 || k >= static_cast<double>(values.size()))
    throw StatsError("time " + format_double(t) + " outside the series");
  return values[static_cast<std::size_t>(k)];
}

std::vector<double> window_rates(const Series& series, double lambda, const WindowOptions& w) {
  if (!(lambda > 0.0)) throw StatsError("order parameter needs a positive arrival rate");
  if (!(w.window > 0.0)) throw StatsError("window must be positive");
  if (series.values.empty()) throw StatsError("empty series");
  const double first = std::max(w.trim, series.start);
  const double last = series.end() - series.step;  // time of the final sample
  const double span = last - first;
  const auto windows = span < 0 ? 0 : static_cast<std::size_t>(std::floor(span / w.window + 1e-9));
  if (windows == 0) throw StatsError("series shorter than one window after the trim");
  std::vector<double> rates;
  rates.reserve(windows);
  double prev = series.at(first);
  for (std::size_t m = 1; m <= windows; ++m) {
    const double next = series.at(first + static_cast<double>(m) * w.window);
    rates.push_back((next - prev) / (w.window * lambda));
    prev = next;
  }
  return rates;
}

double order_parameter(const Series& series, double lambda, const WindowOptions& w) {
  const auto r = window_rates(series, lambda, w);
  return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

double susceptibility(const Series& series, double lambda, const WindowOptions& w) {
  const auto r = window_rates(series, lambda, w);
  if (r.size() < 10)
    throw StatsError("susceptibility needs at least 10 windows, got " + std::to_string(r.size()));
  return w.window * sample_sd(r);
}

std::optional<std::size_t> susceptibility_peak(const std::vector<double>& chi) {
  std::optional<std::size_t> best;
  for (std::size_t i = 1; i + 1 < chi.size(); ++i)
    if (chi[i] > chi[i - 1] && chi[i] > chi[i + 1] && (!best || chi[i] > chi[*best])) best = i;
  return best;
}

GiniEstimate gini(std::vector<double> x) {
  if (x.empty()) throw StatsError("gini of an empty sample");
  for (double v : x)
    if (!(v >= 0.0) || !std::isfinite(v)) throw StatsError("gini needs finite non-negative values");
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double total = 0.0, weighted = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    total += x[i];
    weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * x[i];
  }
  if (total == 0.0) throw StatsError("gini of an all-zero sample");
  const double mean = total / n;
  return {x.size(), mean, std::max(0.0, weighted / (n * total))};
}

double gini_pairwise(const std::vector<double>& x) {
  if (x.empty()) throw StatsError("gini of an empty sample");
  const double n = static_cast<double>(x.size());
  double diff = 0.0, total = 0.0;
  for (double a : x) {
    total += a;
    for (double b : x) diff += std::abs(a - b);
  }
  if (total == 0.0) throw StatsError("gini of an all-zero sample");
  return diff / (2.0 * n * total);
}

GiniEstimate charging_time_gini(const std::vector<sim::VehicleRecord>& vehicles, double trim) {
  std::vector<double> times;
  for (const auto& v : vehicles)
    if (v.departure_time && *v.departure_time > trim) times.push_back(v.charging_time());
  if (times.empty()) throw StatsError("no vehicle completed after the trim point");
  return gini(std::move(times));
}

Interval mean_interval(const std::vector<double>& values, CiMethod method, int resamples,
                       std::uint64_t seed) {
  if (values.empty()) throw StatsError("interval of an empty sample");
  Interval out;
  out.n = values.size();
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(out.n);
  out.lo = out.hi = out.mean;
  if (out.n < 2) return out;
  if (method != CiMethod::bootstrap) {
    const double q =
        method == CiMethod::normal
            ? kZ95
            : boost::math::quantile(boost::math::students_t(static_cast<double>(out.n - 1)), 0.975);
    const double half = q * sample_sd(values) / std::sqrt(static_cast<double>(out.n));
    out.lo = out.mean - half;
    out.hi = out.mean + half;
    return out;
  }
  if (resamples < 10) throw StatsError("bootstrap needs at least 10 resamples");
  sim::Rng rng(seed, 7);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.n; ++i) s += values[rng.below(out.n)];
    m = s / static_cast<double>(out.n);
  }
  std::sort(means.begin(), means.end());
  auto pick = [&](double q) {
    const auto k = static_cast<std::size_t>(std::floor(q * static_cast<double>(means.size() - 1)));
    return means[k];
  };
  out.lo = std::min(out.mean, pick(0.025));
  out.hi = std::max(out.mean, pick(0.975));
  return out;
}

Trend linear_trend(const Series& series, double from) {
  std::vector<double> t, y;
  for (std::size_t k = 0; k < series.values.size(); ++k) {
    const double tk = series.start + series.step * static_cast<double>(k);
    if (tk < from) continue;
    t.push_back(tk);
    y.push_back(series.values[k]);
  }
  if (t.size() < 3) throw StatsError("trend needs at least 3 samples");
  const double n = static_cast<double>(t.size());
  const double tm = std::accumulate(t.begin(), t.end(), 0.0) / n;
  const double ym = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double stt = 0.0, sty = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    stt += (t[k] - tm) * (t[k] - tm);
    sty += (t[k] - tm) * (y[k] - ym);
  }
  Trend out;
  out.slope = sty / stt;
  double sse = 0.0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const double e = y[k] - ym - out.slope * (t[k] - tm);
    sse += e * e;
  }
  out.stderr_slope = std::sqrt(sse / (n - 2.0) / stt);
  return out;
}

RunObservables observe(const Series& series, const std::vector<sim::VehicleRecord>& vehicles,
                       double lambda, const WindowOptions& w) {
  RunObservables o;
  const auto r = window_rates(series, lambda, w);
  o.eta = std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
  o.chi = susceptibility(series, lambda, w);
  try {
    o.gini = charging_time_gini(vehicles, w.trim).value;
  } catch (const StatsError&) {
  }
  return o;
}

StatRecord ensemble(double lambda, const std::string& algorithm,
                    const std::vector<RunObservables>& runs, double window, CiMethod method) {
  if (runs.empty()) throw StatsError("ensemble of zero runs");
  StatRecord rec;
  rec.lambda = lambda;
  rec.algorithm = algorithm;
  rec.runs = runs.size();
  rec.window = window;
  std::vector<double> eta, chi, gini;
  for (const auto& r : runs) {
    eta.push_back(r.eta);
    chi.push_back(r.chi);
    if (r.gini) gini.push_back(*r.gini);
  }
  rec.eta = mean_interval(eta, method);
  rec.chi = mean_interval(chi, method);
  if (!gini.empty()) rec.gini = mean_interval(gini, method);
  return rec;
}

void write_summary(std::ostream& out, const std::vector<StatRecord>& records) {
  out << "lambda,algorithm,eta_mean,eta_lo,eta_hi,chi_mean,chi_lo,chi_hi,gini_mean,gini_lo,"
         "gini_hi,runs,window\n";
  auto triple = [&](const Interval& i) {
    out << format_double(i.mean) << ',' << format_double(i.lo) << ',' << format_double(i.hi);
  };
  for (const auto& r : records) {
    out << format_double(r.lambda) << ',' << r.algorithm << ',';
    triple(r.eta);
    out << ',';
    triple(r.chi);
    out << ',';
    if (r.gini)
      triple(*r.gini);
    else
      out << ",,";
    out << ',' << r.runs << ',' << format_double(r.window) << '\n';
  }
}

std::vector<StatRecord> read_summary(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("lambda,algorithm,", 0) != 0)
    throw StatsError("not a sweep summary");
  std::vector<StatRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::string cell;
    std::istringstream row(line);
    while (std::getline(row, cell, ',')) c.push_back(cell);
    while (c.size() < 13) c.emplace_back();
    if (c.size() != 13) throw StatsError("summary row has " + std::to_string(c.size()) + " fields");
    auto d = [](const std::string& s) { return std::stod(s); };
    StatRecord r;
    r.lambda = d(c[0]);
    r.algorithm = c[1];
    r.eta = {d(c[2]), d(c[3]), d(c[4]), 0};
    r.chi = {d(c[5]), d(c[6]), d(c[7]), 0};
    if (!c[8].empty()) r.gini = Interval{d(c[8]), d(c[9]), d(c[10]), 0};
    r.runs = static_cast<std::size_t>(std::stoul(c[11]));
    r.window = d(c[12]);
    r.eta.n = r.chi.n = r.runs;
    out.push_back(r);
  }
  return out;
}

}  // namespace gridcharge::stats
