#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridcharge/simulate.hpp"

namespace gridcharge::stats {

class StatsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// N(t) on a regular step grid: value k holds during [t0 + k*step, t0 + (k+1)*step).
struct Series {
  double start = 0.0;
  double step = 1.0;
  std::vector<double> values;

  static Series from_samples(const std::vector<sim::Sample>& samples);
  /// N at time t (the step containing t).
  double at(double t) const;
  double end() const { return start + step * static_cast<double>(values.size()); }
};

struct WindowOptions {
  double window = 100.0;
  double trim = 1000.0;  // time discarded as transient
};

/// Net accumulation rate per window, normalised by lambda:
/// (N(b_m + window) - N(b_m)) / (window * lambda) for consecutive windows
/// starting at the trim point. Throws StatsError if no whole window fits.
std::vector<double> window_rates(const Series& series, double lambda, const WindowOptions& w);

/// Mean of window_rates. Not clamped at zero.
double order_parameter(const Series& series, double lambda, const WindowOptions& w = {});

/// window times the sample standard deviation of window_rates. Needs at
/// least 10 windows.
double susceptibility(const Series& series, double lambda, const WindowOptions& w = {});

/// Peak of chi over an increasing lambda grid: the largest interior local
/// maximum (strictly above both neighbours). The grid ends are excluded
/// because chi grows like lambda^-1/2 as lambda -> 0 from occupancy noise
/// alone. Empty when no interior point qualifies.
std::optional<std::size_t> susceptibility_peak(const std::vector<double>& chi);

struct GiniEstimate {
  std::size_t n = 0;
  double mean = 0.0;
  double value = 0.0;
};

/// Half the relative mean absolute difference, from the sorted sample.
GiniEstimate gini(std::vector<double> samples);
/// O(n^2) reference form.
double gini_pairwise(const std::vector<double>& samples);

/// Gini of charging times of vehicles departing after `trim`.
GiniEstimate charging_time_gini(const std::vector<sim::VehicleRecord>& vehicles, double trim);

struct Interval {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;

  bool contains(double x) const { return lo <= x && x <= hi; }
  bool overlaps(const Interval& o) const { return lo <= o.hi && o.lo <= hi; }
};

enum class CiMethod { student, normal, bootstrap };

/// 95% interval for the mean. Student: mean +- t(0.975, n-1) s / sqrt(n)
/// with the n-1 sample deviation; normal uses 1.96 in place of t. Bootstrap: percentile interval over `resamples`
/// resampled means, seeded for reproducibility. A single value gives a
/// zero-width interval.
Interval mean_interval(const std::vector<double>& values, CiMethod method = CiMethod::student,
                       int resamples = 2000, std::uint64_t seed = 0);

/// Least-squares slope of N against time with its standard error.
struct Trend {
  double slope = 0.0;
  double stderr_slope = 0.0;
};
Trend linear_trend(const Series& series, double from = 0.0);

/// Observables of one run.
struct RunObservables {
  double eta = 0.0;
  double chi = 0.0;
  std::optional<double> gini;  // empty when no vehicle completed after trim
};

RunObservables observe(const Series& series, const std::vector<sim::VehicleRecord>& vehicles,
                       double lambda, const WindowOptions& w);

struct StatRecord {
  double lambda = 0.0;
  std::string algorithm;
  Interval eta;
  Interval chi;
  std::optional<Interval> gini;
  std::size_t runs = 0;
  double window = 0.0;
};

StatRecord ensemble(double lambda, const std::string& algorithm,
                    const std::vector<RunObservables>& runs, double window,
                    CiMethod method = CiMethod::student);

/// `lambda,algorithm,eta_mean,eta_lo,eta_hi,chi_mean,chi_lo,chi_hi,gini_mean,gini_lo,gini_hi,runs,window`
void write_summary(std::ostream& out, const std::vector<StatRecord>& records);
std::vector<StatRecord> read_summary(std::istream& in);

}  // namespace gridcharge::stats
