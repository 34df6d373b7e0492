#include "qelab/sim/emitter_sim.hpp"

#include "qelab/core/errors.hpp"
#include "qelab/sim/random.hpp"

#include <algorithm>
#include <cmath>

namespace qelab::sim {

void SimEmitterConfig::validate() const {
  if (!(lifetime_ns > 0.0) || !(shelf_lifetime_ns > 0.0))
    throw InvalidInput("lifetimes must be positive");
  if (!(p_sat_sim_uw > 0.0))
    throw InvalidInput("p_sat_sim must be positive");
  if (!(shelving_branch >= 0.0 && shelving_branch < 1.0))
    throw InvalidInput("shelving branch must be in [0, 1)");
  if (!(rep_rate_hz > 0.0))
    throw InvalidInput("repetition rate must be positive");
  if (!(collection_efficiency > 0.0 && collection_efficiency <= 1.0))
    throw InvalidInput("collection efficiency must be in (0, 1]");
  if (!(background_cps_per_uw >= 0.0))
    throw InvalidInput("background rate must be non-negative");
  if (!(splitter_ratio > 0.0 && splitter_ratio < 1.0))
    throw InvalidInput("splitter ratio must be in (0, 1)");
  if (!(jitter_ps_rms >= 0.0))
    throw InvalidInput("jitter must be non-negative");
}

double SimEmitterConfig::excitation_prob(double power_uw) const {
  return power_uw / (power_uw + p_sat_sim_uw);
}

std::int64_t SimEmitterConfig::rep_period_ps() const {
  return static_cast<std::int64_t>(std::llround(1e12 / rep_rate_hz));
}

SimRunRecord simulate_stream(const SimEmitterConfig &config, double power_uw,
                             double duration_s) {
  config.validate();
  if (!(power_uw >= 0.0))
    throw InvalidInput("power must be non-negative");
  if (!(duration_s > 0.0))
    throw InvalidInput("duration must be positive");
  const std::uint64_t n_pulses =
      static_cast<std::uint64_t>(duration_s * config.rep_rate_hz);
  if (n_pulses < 10000)
    throw InvalidInput("duration must cover at least 10^4 pulses");

  const std::int64_t period_ps = config.rep_period_ps();
  const std::uint64_t duration_ps =
      static_cast<std::uint64_t>(std::llround(duration_s * 1e12));
  const double lifetime_ps = config.lifetime_ns * 1e3;
  const double shelf_ps = config.shelf_lifetime_ns * 1e3;
  const double p_exc = config.excitation_prob(power_uw);

  CounterRng rng(config.seed);

  SimRunRecord record;
  record.config = config;
  record.power_uw = power_uw;
  record.duration_s = duration_s;
  record.rng_name = std::string(CounterRng::kGeneratorName) + ":" +
                    std::to_string(config.seed);

  struct PendingPhoton {
    double time_ps;
    bool is_signal;
    std::uint64_t sequence;
  };
  std::vector<PendingPhoton> detected;

  std::uint64_t sequence = 0;
  auto emit_photon = [&](double time_ps, bool is_signal) {
    if (time_ps < 0.0 || time_ps > static_cast<double>(duration_ps))
      return;
    if (is_signal)
      ++record.emitted_signal_photons;
    else
      ++record.emitted_background_photons;
    // Thinning, routing and jitter are drawn per photon, in emission
    // order, to keep the stream a pure function of the seed.
    if (!rng.next_bernoulli(config.collection_efficiency))
      return;
    double observed = time_ps;
    if (config.jitter_ps_rms > 0.0)
      observed += rng.next_gaussian(config.jitter_ps_rms);
    observed = std::min(std::max(observed, 0.0),
                        static_cast<double>(duration_ps));
    detected.push_back({observed, is_signal, sequence++});
  };

  corr::TimestampStream &stream = record.stream;
  stream.duration_ps = duration_ps;
  stream.events.reserve(n_pulses + n_pulses / 4);

  // Emitter is available (ground) whenever the pulse time has passed
  // next_available_ps; exponential waits make this bookkeeping exact.
  double next_available_ps = 0.0;
  std::uint32_t photons_this_pulse = 0;
  for (std::uint64_t pulse = 0; pulse < n_pulses; ++pulse) {
    const double t_pulse = static_cast<double>(pulse) *
                           static_cast<double>(period_ps);
    photons_this_pulse = 0;
    if (t_pulse >= next_available_ps && rng.next_bernoulli(p_exc)) {
      double decay_at = t_pulse + rng.next_exponential(lifetime_ps);
      if (rng.next_bernoulli(config.shelving_branch)) {
        next_available_ps = decay_at + rng.next_exponential(shelf_ps);
      } else {
        next_available_ps = decay_at;
        if (decay_at <= static_cast<double>(duration_ps)) {
          emit_photon(decay_at, true);
          ++photons_this_pulse;
        }
      }
    }
    record.max_signal_photons_per_pulse =
        std::max(record.max_signal_photons_per_pulse, photons_this_pulse);
  }

  // Background photons: Poisson count over the run, then uniform times.
  const double background_rate = config.background_cps_per_uw * power_uw;
  if (background_rate > 0.0) {
    std::uint64_t n_background =
        rng.next_poisson(background_rate * duration_s);
    std::vector<double> times(n_background);
    for (auto &t : times)
      t = rng.next_double() * static_cast<double>(duration_ps);
    std::sort(times.begin(), times.end());
    for (double t : times)
      emit_photon(t, false);
  }

  for (const auto &photon : detected) {
    std::uint8_t channel =
        rng.next_bernoulli(config.splitter_ratio) ? kDetectorA : kDetectorB;
    std::uint64_t t =
        static_cast<std::uint64_t>(std::llround(photon.time_ps));
    stream.events.push_back({channel, std::min(t, duration_ps)});
    if (photon.is_signal)
      ++record.detected_signal_photons;
    else
      ++record.detected_background_photons;
  }
  for (std::uint64_t pulse = 0; pulse < n_pulses; ++pulse) {
    std::uint64_t t = pulse * static_cast<std::uint64_t>(period_ps);
    if (t <= duration_ps)
      stream.events.push_back({kTriggerChannel, t});
  }

  std::stable_sort(stream.events.begin(), stream.events.end(),
                   [](const corr::TimestampEvent &lhs,
                      const corr::TimestampEvent &rhs) {
                     return lhs.time_ps < rhs.time_ps;
                   });
  stream.refresh_channels();
  return record;
}

PulseOccupancy steady_state_occupancy(const SimEmitterConfig &config,
                                      double power_uw) {
  config.validate();
  if (!(power_uw >= 0.0))
    throw InvalidInput("power must be non-negative");

  const double T = 1.0 / config.rep_rate_hz;
  const double tau = config.lifetime_ns * 1e-9;
  const double tau_shelf = config.shelf_lifetime_ns * 1e-9;
  const double p = config.excitation_prob(power_uw);
  const double beta = config.shelving_branch;

  // Over one period: an excited emitter survives with probability a;
  // shelf_entry is the probability it decays into the shelf and is still
  // shelved at the next pulse; a shelved emitter survives with s.
  const double a = std::exp(-T / tau);
  double shelf_entry;
  const double rate_diff = 1.0 / tau - 1.0 / tau_shelf;
  if (std::abs(rate_diff) * T < 1e-12) {
    shelf_entry = beta * (T / tau) * std::exp(-T / tau);
  } else {
    shelf_entry = beta * std::exp(-T / tau_shelf) *
                  (-std::expm1(-rate_diff * T)) / (tau * rate_diff);
  }

  const double one_minus_a = -std::expm1(-T / tau);
  const double one_minus_s = -std::expm1(-T / tau_shelf);

  // Stationary chain over states at pulse arrival:
  //   pi_E = pi_G * p * a / (1 - a)
  //   pi_S = p * shelf_entry * pi_G / ((1 - a)(1 - s))
  PulseOccupancy occ;
  const double e_over_g = p * a / one_minus_a;
  const double s_over_g = p * shelf_entry / (one_minus_a * one_minus_s);
  occ.ground = 1.0 / (1.0 + e_over_g + s_over_g);
  occ.excited = occ.ground * e_over_g;
  occ.shelved = occ.ground * s_over_g;
  return occ;
}

double expected_rate(const SimEmitterConfig &config, double power_uw) {
  PulseOccupancy occ = steady_state_occupancy(config, power_uw);
  double signal_rate = config.rep_rate_hz *
                       config.excitation_prob(power_uw) *
                       (1.0 - config.shelving_branch) * occ.ground;
  double background_rate = config.background_cps_per_uw * power_uw;
  return config.collection_efficiency * (signal_rate + background_rate);
}

scan::ScanImage simulate_scan(const std::vector<ScanEmitter> &emitters,
                              double psf_sigma_um, double background_cps,
                              const ScanGeometry &geometry,
                              std::uint64_t seed) {
  if (!(psf_sigma_um > 0.0))
    throw InvalidInput("point spread sigma must be positive");
  if (geometry.width_px <= 0 || geometry.height_px <= 0 ||
      !(geometry.pixel_size_um > 0.0))
    throw InvalidInput("invalid scan geometry");
  if (!(background_cps >= 0.0))
    throw InvalidInput("background must be non-negative");

  scan::ScanImage image;
  image.width_px = geometry.width_px;
  image.height_px = geometry.height_px;
  image.pixel_size_um = geometry.pixel_size_um;
  image.counts.resize(static_cast<std::size_t>(geometry.width_px) *
                      geometry.height_px);

  CounterRng rng(seed);
  const double inv_two_sigma_sq = 1.0 / (2.0 * psf_sigma_um * psf_sigma_um);
  for (int r = 0; r < geometry.height_px; ++r) {
    const double y = (r + 0.5) * geometry.pixel_size_um;
    for (int c = 0; c < geometry.width_px; ++c) {
      const double x = (c + 0.5) * geometry.pixel_size_um;
      double expected = background_cps;
      for (const auto &emitter : emitters) {
        double dx = x - emitter.x_um;
        double dy = y - emitter.y_um;
        expected += emitter.brightness_cps *
                    std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
      }
      image.counts[static_cast<std::size_t>(r) * geometry.width_px + c] =
          static_cast<double>(rng.next_poisson(expected));
    }
  }
  return image;
}

spectro::Spectrum
simulate_spectrum(const std::vector<spectro::GaussianComponent> &components,
                  double baseline, const std::vector<double> &wavelengths_nm,
                  std::uint64_t total_counts, std::uint64_t seed) {
  for (std::size_t i = 1; i < wavelengths_nm.size(); ++i)
    if (!(wavelengths_nm[i] > wavelengths_nm[i - 1]))
      throw InvalidInput("wavelength grid must be strictly increasing");
  if (!(baseline >= 0.0))
    throw InvalidInput("baseline must be non-negative");

  spectro::Spectrum spectrum;
  spectrum.wavelengths_nm = wavelengths_nm;
  spectrum.intensities.assign(wavelengths_nm.size(), 0.0);

  std::vector<double> expected(wavelengths_nm.size(), 0.0);
  double expected_sum = 0.0;
  for (std::size_t i = 0; i < wavelengths_nm.size(); ++i) {
    double value = baseline;
    for (const auto &component : components)
      value += component.value_at(wavelengths_nm[i]);
    expected[i] = value;
    expected_sum += value;
  }
  if (total_counts == 0 || expected_sum <= 0.0)
    return spectrum;

  const double scale = static_cast<double>(total_counts) / expected_sum;
  CounterRng rng(seed);
  for (std::size_t i = 0; i < expected.size(); ++i)
    spectrum.intensities[i] =
        static_cast<double>(rng.next_poisson(scale * expected[i]));
  return spectrum;
}

photo::SaturationCurve simulate_saturation(const SimEmitterConfig &config,
                                           const std::vector<double> &powers_uw,
                                           double integration_s) {
  for (std::size_t i = 1; i < powers_uw.size(); ++i)
    if (!(powers_uw[i] > powers_uw[i - 1]))
      throw InvalidInput("powers must be strictly increasing");

  photo::SaturationCurve curve;
  curve.points.reserve(powers_uw.size());
  for (std::size_t i = 0; i < powers_uw.size(); ++i) {
    SimEmitterConfig point_config = config;
    point_config.seed = CounterRng::mix(config.seed + i + 1);
    SimRunRecord record =
        simulate_stream(point_config, powers_uw[i], integration_s);
    std::uint64_t photons = record.detected_signal_photons +
                            record.detected_background_photons;
    photo::SaturationPoint point;
    point.power_uw = powers_uw[i];
    point.rate_cps = static_cast<double>(photons) / integration_s;
    point.rate_err_cps =
        std::sqrt(static_cast<double>(std::max<std::uint64_t>(photons, 1))) /
        integration_s;
    curve.points.push_back(point);
  }
  return curve;
}

} // namespace qelab::sim
