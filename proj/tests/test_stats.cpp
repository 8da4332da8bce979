#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "gridcharge/stats.hpp"

using namespace gridcharge;
using namespace gridcharge::stats;

namespace {

Series series(std::vector<double> v, double step = 1.0) {
  Series s;
  s.step = step;
  s.values = std::move(v);
  return s;
}

template <typename F>
Series generate(std::size_t n, F&& f, double step = 1.0) {
  std::vector<double> v(n);
  for (std::size_t k = 0; k < n; ++k) v[k] = f(double(k) * step);
  return series(v, step);
}

sim::VehicleRecord vehicle(double arrival, double departure) {
  sim::VehicleRecord v;
  v.arrival_time = arrival;
  v.departure_time = departure;
  v.charge = 1.0;
  return v;
}

}  // namespace

TEST_CASE("series lookup") {
  auto s = series({0, 1, 2, 3}, 0.5);
  CHECK(s.at(0.0) == 0);
  CHECK(s.at(0.49) == 0);
  CHECK(s.at(0.5) == 1);
  CHECK(s.at(1.9) == 3);
  CHECK_THROWS_AS(s.at(2.0), StatsError);
  CHECK(s.end() == 2.0);
  std::vector<sim::Sample> samples{{0, 4, 0, 0}, {0.5, 5, 0, 0}};
  auto f = Series::from_samples(samples);
  CHECK(f.step == 0.5);
  CHECK(f.values == std::vector<double>{4, 5});
}

TEST_CASE("order parameter examples") {
  const WindowOptions w{100, 0};
  CHECK(order_parameter(generate(1001, [](double) { return 7.0; }), 0.5, w) == 0.0);
  // Nothing ever completes: N grows by lambda per unit time.
  CHECK(order_parameter(generate(1001, [](double t) { return 0.3 * t; }), 0.3, w) ==
        doctest::Approx(1.0).epsilon(1e-12));
  CHECK(order_parameter(generate(1001, [](double t) { return 0.25 * t; }), 0.5, w) ==
        doctest::Approx(0.5).epsilon(1e-12));
  // Shrinking queues give negative values, not clamped.
  CHECK(order_parameter(generate(1001, [](double t) { return 500 - 0.1 * t; }), 0.5, w) < 0);
}

TEST_CASE("order parameter trims the transient and needs a whole window") {
  auto s = generate(2001, [](double t) { return t < 1000 ? t : 1000.0; });
  CHECK(order_parameter(s, 1.0, {100, 1000}) == 0.0);
  CHECK(order_parameter(s, 1.0, {100, 0}) == doctest::Approx(0.5));
  CHECK_THROWS_AS(order_parameter(series({1, 2, 3}), 1.0, {100, 0}), StatsError);
  CHECK_THROWS_AS(order_parameter(s, 1.0, {100, 5000}), StatsError);
  CHECK_THROWS_AS(order_parameter(s, 0.0, {100, 0}), StatsError);
}

TEST_CASE("order parameter converges to c / lambda on a ceiling ramp") {
  const double c = 0.3713, lambda = 0.5;
  std::vector<double> error;
  for (std::size_t n : {1001u, 10001u, 100001u}) {
    auto s = generate(n, [&](double t) { return std::ceil(c * t); });
    error.push_back(std::abs(order_parameter(s, lambda, {100, 0}) - c / lambda));
  }
  CHECK(error[0] > 1e-3);
  CHECK(error[2] < error[0] / 50);
}

TEST_CASE("susceptibility") {
  const WindowOptions w{100, 0};
  CHECK(susceptibility(generate(2001, [](double t) { return 2 * t; }), 1.0, w) ==
        doctest::Approx(0.0).epsilon(1e-12));
  // Window rates alternate 0 and 1.
  std::vector<double> v;
  double n = 0;
  for (int m = 0; m < 2000; ++m) {
    const double rate = m % 2 ? 1.0 : 0.0;
    for (int k = 0; k < 100; ++k) v.push_back(n + rate * k);
    n += rate * 100;
  }
  v.push_back(n);
  const double chi = susceptibility(series(v), 1.0, w);
  CHECK(chi == doctest::Approx(50.0).epsilon(1e-3));

  auto s = generate(3001, [](double t) { return std::floor(std::sqrt(t) * 3); });
  auto shifted = s;
  for (auto& x : shifted.values) x += 1234;
  CHECK(susceptibility(s, 0.4, w) == doctest::Approx(susceptibility(shifted, 0.4, w)));
  CHECK_THROWS_AS(susceptibility(generate(901, [](double t) { return t; }), 1.0, w), StatsError);
}

TEST_CASE("susceptibility peak ignores the grid ends") {
  CHECK(susceptibility_peak({20, 12, 9, 14, 11, 10}) == std::size_t{3});
  CHECK(susceptibility_peak({5, 7, 6, 9, 8}) == std::size_t{3});
  CHECK_FALSE(susceptibility_peak({3, 2, 1}).has_value());
  CHECK_FALSE(susceptibility_peak({1, 2}).has_value());
  CHECK_FALSE(susceptibility_peak({4, 4, 4}).has_value());
}

TEST_CASE("gini examples") {
  CHECK(gini({5, 5, 5, 5}).value == 0.0);
  CHECK(gini({0, 0, 7, 0}).value == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(gini({1, 1, 1, 3}).value == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(gini({4.2}).value == 0.0);
  const auto g = gini({1, 2, 3});
  CHECK(g.n == 3);
  CHECK(g.mean == 2.0);
  CHECK_THROWS_AS(gini({}), StatsError);
  CHECK_THROWS_AS(gini({0, 0}), StatsError);
  CHECK_THROWS_AS(gini({1, -1}), StatsError);
}

TEST_CASE("gini sorted form equals the pairwise sum and respects its bounds") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(1, 1000);
  std::lognormal_distribution<double> value(0.0, 1.5);
  std::bernoulli_distribution zero(0.2);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<double> x(size(rng));
    for (auto& v : x) v = zero(rng) ? 0.0 : value(rng);
    if (std::all_of(x.begin(), x.end(), [](double v) { return v == 0.0; })) x[0] = 1.0;
    const double fast = gini(x).value;
    CHECK(std::abs(fast - gini_pairwise(x)) <= 1e-12);
    const double n = double(x.size());
    CHECK(fast >= 0.0);
    CHECK(fast <= (n - 1) / n + 1e-15);
    std::vector<double> scaled(x);
    const double k = std::exp(value(rng) * 2 - 1);
    for (auto& v : scaled) v *= k;
    CHECK(std::abs(gini(scaled).value - fast) <= 1e-12);
  }
  for (std::size_t n : {1u, 2u, 10u, 1000u}) {
    std::vector<double> x(n, 0.0);
    x[n / 2] = 3.5;
    CHECK(gini(x).value == doctest::Approx((double(n) - 1) / double(n)).epsilon(1e-14));
    CHECK(gini_pairwise(x) == doctest::Approx((double(n) - 1) / double(n)).epsilon(1e-14));
  }
}

TEST_CASE("charging time gini") {
  std::vector<sim::VehicleRecord> v{vehicle(0, 5), vehicle(1100, 1103), vehicle(1200, 1203)};
  CHECK(charging_time_gini(v, 1000).value == 0.0);
  CHECK(charging_time_gini(v, 0).value > 0.0);
  CHECK(charging_time_gini({vehicle(10, 14)}, 0).value == 0.0);
  CHECK_THROWS_AS(charging_time_gini(v, 2000), StatsError);
  auto pending = vehicle(1300, 0);
  pending.departure_time.reset();
  v.push_back(pending);
  CHECK(charging_time_gini(v, 1000).n == 2);
}

TEST_CASE("mean intervals") {
  auto same = mean_interval({0.3, 0.3, 0.3});
  CHECK(same.mean == doctest::Approx(0.3));
  CHECK(same.hi - same.lo == doctest::Approx(0.0));
  CHECK(mean_interval({0.0, 0.2}).mean == doctest::Approx(0.1));
  auto one = mean_interval({2.0});
  CHECK(one.lo == 2.0);
  CHECK(one.hi == 2.0);
  auto ci = mean_interval({1, 2, 3, 4});
  CHECK(ci.mean == 2.5);
  CHECK(ci.hi - ci.mean == doctest::Approx(3.182446305284263 * std::sqrt(5.0 / 3.0) / 2));
  auto z = mean_interval({1, 2, 3, 4}, CiMethod::normal);
  CHECK(z.hi - z.mean == doctest::Approx(1.959963984540054 * std::sqrt(5.0 / 3.0) / 2));
  CHECK(ci.contains(2.5));
  CHECK_THROWS_AS(mean_interval({}), StatsError);

  auto boot = mean_interval({1, 2, 3, 4, 5, 6}, CiMethod::bootstrap, 4000, 1);
  CHECK(boot.lo < boot.mean);
  CHECK(boot.hi > boot.mean);
  auto again = mean_interval({1, 2, 3, 4, 5, 6}, CiMethod::bootstrap, 4000, 1);
  CHECK(boot.lo == again.lo);
  CHECK(boot.hi == again.hi);
}

TEST_CASE("interval width shrinks like one over root n") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> d(0.2, 0.05);
  std::vector<double> x(6400);
  for (auto& v : x) v = d(rng);
  auto width = [&](std::size_t n) {
    auto ci = mean_interval(std::vector<double>(x.begin(), x.begin() + long(n)));
    return ci.hi - ci.lo;
  };
  CHECK(width(100) / width(400) == doctest::Approx(2.0).epsilon(0.1));
  CHECK(width(400) / width(6400) == doctest::Approx(4.0).epsilon(0.1));
}

TEST_CASE("linear trend") {
  auto s = generate(500, [](double t) { return 3 + 0.25 * t; });
  auto tr = linear_trend(s);
  CHECK(tr.slope == doctest::Approx(0.25));
  CHECK(tr.stderr_slope == doctest::Approx(0.0).epsilon(1e-9));
  auto flat = linear_trend(generate(500, [](double t) { return std::sin(t); }));
  CHECK(std::abs(flat.slope) < 3 * flat.stderr_slope + 1e-3);
  CHECK_THROWS_AS(linear_trend(series({1, 2})), StatsError);
}

TEST_CASE("ensemble and summary csv") {
  std::vector<RunObservables> runs{{0.0, 10.0, 0.3}, {0.2, 14.0, 0.5}, {0.1, 12.0, std::nullopt}};
  auto r = ensemble(0.4, "pf", runs, 100);
  CHECK(r.eta.mean == doctest::Approx(0.1));
  CHECK(r.chi.mean == doctest::Approx(12.0));
  REQUIRE(r.gini);
  CHECK(r.gini->n == 2);
  CHECK(r.gini->mean == doctest::Approx(0.4));
  CHECK(r.runs == 3);

  auto empty = ensemble(0.1, "mf", {{0.0, 1.0, std::nullopt}}, 50);
  CHECK(!empty.gini);

  std::ostringstream out;
  write_summary(out, {r, empty});
  const std::string text = out.str();
  CHECK(text.rfind(
            "lambda,algorithm,eta_mean,eta_lo,eta_hi,chi_mean,chi_lo,chi_hi,gini_mean,gini_lo,"
            "gini_hi,runs,window\n",
            0) == 0);
  CHECK(text.find("\n0.1,mf,0,0,0,1,1,1,,,,1,50\n") != std::string::npos);
  std::istringstream in(text);
  auto back = read_summary(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].lambda == 0.4);
  CHECK(back[0].eta.mean == r.eta.mean);
  CHECK(back[0].gini->hi == r.gini->hi);
  CHECK(!back[1].gini);
  CHECK(back[1].window == 50);
}

TEST_CASE("observables of one run") {
  auto s = generate(3001, [](double t) { return std::floor(0.1 * t); });
  std::vector<sim::VehicleRecord> v{vehicle(1500, 1502), vehicle(1600, 1606)};
  auto o = observe(s, v, 0.5, {100, 1000});
  CHECK(o.eta == doctest::Approx(0.2));
  CHECK(o.chi == doctest::Approx(0.0).epsilon(1e-12));
  REQUIRE(o.gini);
  CHECK(*o.gini == doctest::Approx(0.25));
  auto none = observe(s, {}, 0.5, {100, 1000});
  CHECK(!none.gini);
}
