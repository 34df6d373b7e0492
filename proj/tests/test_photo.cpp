#include "qelab/photo/photophysics.hpp"

#include "qelab/core/errors.hpp"
#include "qelab/sim/random.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace qelab;

namespace {

photo::SaturationCurve
curve_from_params(const photo::SaturationParams &params,
                  const std::vector<double> &powers, double rel_err) {
  photo::SaturationCurve curve;
  for (double p : powers) {
    double rate = photo::eval_saturation(params, p);
    curve.points.push_back({p, rate, std::max(rel_err * rate, 1e-6)});
  }
  return curve;
}

std::vector<double> log_powers(double lo, double hi, int n) {
  std::vector<double> powers;
  for (int i = 0; i < n; ++i)
    powers.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (n - 1)));
  return powers;
}

} // namespace

TEST_CASE("eval_saturation reproduces the closed-form checkpoints") {
  photo::SaturationParams params{9.1e6, 209.0, 0.0, 500.0, 0.0};
  CHECK(photo::eval_saturation(params, 0.0) == 0.0);
  CHECK(photo::eval_saturation(params, 209.0) ==
        doctest::Approx(9.1e6 / 2.0).epsilon(1e-12));
  CHECK(photo::eval_saturation(params, 120.0) ==
        doctest::Approx(9.1e6 * 120.0 / 329.0).epsilon(1e-12));
  CHECK(photo::eval_saturation(params, 120.0) > 3e6);
  CHECK_THROWS_AS(photo::eval_saturation(params, -1.0), InvalidInput);
}

TEST_CASE("saturation gradient matches central finite differences") {
  sim::CounterRng rng(88);
  for (int trial = 0; trial < 10; ++trial) {
    photo::SaturationParams params;
    params.r_inf_cps = 1e4 * std::pow(10.0, rng.next_double() * 3.0);
    params.p_sat_uw = 20.0 * std::pow(10.0, rng.next_double() * 2.0);
    params.c_sh = 0.01 + rng.next_double() * 5.0;
    params.p_sh_uw = 50.0 + rng.next_double() * 1000.0;
    params.c_bg_cps_per_uw = rng.next_double() * 1e4;
    double power = 5.0 + rng.next_double() * 2000.0;

    auto gradient = photo::saturation_gradient(params, power);
    double *fields[5] = {&params.r_inf_cps, &params.p_sat_uw, &params.c_sh,
                         &params.p_sh_uw, &params.c_bg_cps_per_uw};
    for (int i = 0; i < 5; ++i) {
      double saved = *fields[i];
      double h = 1e-6 * std::max(std::abs(saved), 1e-6);
      *fields[i] = saved + h;
      double up = photo::eval_saturation(params, power);
      *fields[i] = saved - h;
      double down = photo::eval_saturation(params, power);
      *fields[i] = saved;
      double fd = (up - down) / (2.0 * h);
      // The difference quotient itself is limited by cancellation:
      // eps * |R| / h caps its precision, so allow for that floor.
      double fd_noise =
          8.0 * 2.22e-16 * std::abs(photo::eval_saturation(params, power)) / h;
      double scale = std::max(std::abs(fd), std::abs(gradient[i]));
      CHECK(std::abs(gradient[i] - fd) <= 1e-6 * scale + fd_noise);
    }
  }
}

TEST_CASE("the signal term peaks at sqrt(p_sat * p_sh / c_sh)") {
  photo::SaturationParams params{5e6, 150.0, 0.8, 500.0, 0.0};
  double p_star = std::sqrt(params.p_sat_uw * params.p_sh_uw / params.c_sh);
  double h = p_star * 1e-6;
  double up = photo::eval_saturation(params, p_star + h);
  double down = photo::eval_saturation(params, p_star - h);
  double slope = (up - down) / (2.0 * h);
  double scale = photo::eval_saturation(params, p_star) / p_star;
  CHECK(std::abs(slope) / scale < 1e-6);
}

TEST_CASE("eval_saturation is monotone when there is no shelving") {
  photo::SaturationParams params{2e6, 300.0, 0.0, 500.0, 150.0};
  double previous = 0.0;
  for (double p = 0.0; p < 5000.0; p += 25.0) {
    double value = photo::eval_saturation(params, p);
    CHECK(value >= previous);
    previous = value;
  }
}

TEST_CASE("fit_saturation round-trips the headline fixture exactly") {
  photo::SaturationParams truth{9.1e6, 209.0, 0.3, 500.0, 2000.0};
  auto curve = curve_from_params(truth, log_powers(10, 3500, 20), 0.02);
  auto fit = photo::fit_saturation(curve);
  CHECK(fit.params.r_inf_cps == doctest::Approx(9.1e6).epsilon(1e-4));
  CHECK(fit.params.p_sat_uw == doctest::Approx(209.0).epsilon(1e-4));
  CHECK(fit.params.c_sh == doctest::Approx(0.3).epsilon(1e-4));
  CHECK(fit.params.c_bg_cps_per_uw == doctest::Approx(2000.0).epsilon(1e-4));
  CHECK(fit.params.p_sh_uw == 500.0);
  CHECK(fit.std_errors.p_sh_uw == 0.0);
}

TEST_CASE("fit_saturation recovers from multiplicative noise") {
  photo::SaturationParams truth{9.1e6, 209.0, 0.3, 500.0, 2000.0};
  auto powers = log_powers(10, 3500, 30);
  std::vector<double> rinf_errors, psat_errors;
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    sim::CounterRng rng(seed);
    auto curve = curve_from_params(truth, powers, 0.02);
    for (auto &pt : curve.points)
      pt.rate_cps *= 1.0 + 0.02 * rng.next_gaussian(1.0);
    auto fit = photo::fit_saturation(curve);
    rinf_errors.push_back(std::abs(fit.params.r_inf_cps - truth.r_inf_cps) /
                          truth.r_inf_cps);
    psat_errors.push_back(std::abs(fit.params.p_sat_uw - truth.p_sat_uw) /
                          truth.p_sat_uw);
  }
  std::sort(rinf_errors.begin(), rinf_errors.end());
  std::sort(psat_errors.begin(), psat_errors.end());
  CHECK(rinf_errors[rinf_errors.size() / 2] < 0.05);
  CHECK(psat_errors[psat_errors.size() / 2] < 0.05);
}

TEST_CASE("fit_saturation shrinks absent terms to the boundary") {
  photo::SaturationParams truth{5e6, 150.0, 0.0, 500.0, 0.0};
  auto curve = curve_from_params(truth, log_powers(5, 2000, 25), 0.01);
  auto fit = photo::fit_saturation(curve);
  CHECK(fit.params.c_sh <= 1e-3);
  double c_bg_scale = 5e6 / 2000.0;
  CHECK(fit.params.c_bg_cps_per_uw <= 1e-3 * c_bg_scale);
  CHECK(fit.params.r_inf_cps == doctest::Approx(5e6).epsilon(1e-4));
}

TEST_CASE("fit_saturation rejects degenerate and underdetermined input") {
  photo::SaturationCurve flat;
  for (int i = 1; i <= 12; ++i)
    flat.points.push_back({i * 10.0, 500.0, 5.0});
  CHECK_THROWS_AS(photo::fit_saturation(flat), DegenerateData);

  photo::SaturationCurve narrow;
  for (int i = 0; i < 8; ++i)
    narrow.points.push_back({100.0 + i, 100.0 + i, 1.0});
  CHECK_THROWS_AS(photo::fit_saturation(narrow), InvalidInput);

  photo::SaturationCurve short_curve;
  short_curve.points = {{1, 1, 1}, {2, 2, 1}, {3, 3, 1}};
  CHECK_THROWS_AS(photo::fit_saturation(short_curve), InvalidInput);
}

namespace {

photo::DecayHistogram exponential_histogram(double amplitude, double tau_ns,
                                            double offset,
                                            std::int64_t bin_ps, int n_bins) {
  photo::DecayHistogram hist;
  hist.bin_width_ps = bin_ps;
  for (int i = 0; i < n_bins; ++i) {
    double t_ns = i * bin_ps * 1e-3;
    hist.counts.push_back(static_cast<std::uint64_t>(
        std::llround(amplitude * std::exp(-t_ns / tau_ns) + offset)));
  }
  return hist;
}

} // namespace

TEST_CASE("fit_lifetime recovers a noiseless exponential") {
  auto hist = exponential_histogram(1e9, 5.87, 0.0, 128, 400);
  auto fit = photo::fit_lifetime(hist);
  CHECK(fit.tau_ns == doctest::Approx(5.87).epsilon(1e-6));
  CHECK(fit.offset_cps < 1.0);
}

TEST_CASE("fit_lifetime is scale invariant in tau") {
  auto hist = exponential_histogram(2e8, 3.21, 50.0, 64, 600);
  auto fit1 = photo::fit_lifetime(hist);
  for (auto &c : hist.counts)
    c *= 4;
  auto fit2 = photo::fit_lifetime(hist);
  CHECK(fit1.tau_ns == doctest::Approx(fit2.tau_ns).epsilon(1e-6));
}

TEST_CASE("fit_lifetime rejects a flat histogram") {
  photo::DecayHistogram hist;
  hist.bin_width_ps = 128;
  hist.counts.assign(64, 1000);
  CHECK_THROWS_AS(photo::fit_lifetime(hist), DegenerateData);
}

TEST_CASE("build_decay_histogram bins photons against the last trigger") {
  // Photons exactly at trigger times land in bin 0.
  std::vector<corr::TimestampEvent> events;
  for (int i = 0; i < 5; ++i) {
    events.push_back({2, static_cast<std::uint64_t>(i) * 100000});
    events.push_back({0, static_cast<std::uint64_t>(i) * 100000});
  }
  auto stream = test::make_stream(std::move(events), 500000);
  auto hist = photo::build_decay_histogram(stream, 2, 1000);
  CHECK(hist.counts[0] == 5);
  for (std::size_t i = 1; i < hist.counts.size(); ++i)
    CHECK(hist.counts[i] == 0);

  // A single photon 10 ns after a trigger with 1 ns bins fills bin 10.
  auto stream2 = test::make_stream(
      {{2, 0}, {2, 100000}, {0, 10000 + 100000}}, 400000);
  auto hist2 = photo::build_decay_histogram(stream2, 2, 1000);
  CHECK(hist2.counts[10] == 1);
}

TEST_CASE("build_decay_histogram conserves photons") {
  sim::CounterRng rng(55);
  std::vector<corr::TimestampEvent> events;
  const std::uint64_t period = 25641;
  for (int i = 0; i < 200; ++i)
    events.push_back({2, i * period});
  std::uint64_t duration = 210 * period;
  std::size_t photons_after_first = 0;
  for (int i = 0; i < 3000; ++i) {
    std::uint64_t t = rng.next_below(duration);
    events.push_back({0, t});
    if (t >= 0) // first trigger is at 0
      ++photons_after_first;
  }
  auto stream = test::make_stream(std::move(events), duration);
  auto hist = photo::build_decay_histogram(stream, 2, 128);
  std::uint64_t binned = 0;
  for (auto c : hist.counts)
    binned += c;
  CHECK(binned + hist.discarded == photons_after_first);
}

TEST_CASE("build_decay_histogram requires the trigger channel") {
  auto stream = test::make_stream({{0, 10}, {0, 20}, {1, 30}}, 100);
  CHECK_THROWS_AS(photo::build_decay_histogram(stream, 2, 100), InvalidInput);
}
