#pragma once

#include "qelab/corr/correlation.hpp"
#include "qelab/photo/photophysics.hpp"
#include "qelab/scan/detection.hpp"
#include "qelab/spectro/spectroscopy.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qelab::sim {

/// Channel conventions of simulated streams.
inline constexpr std::uint8_t kDetectorA = 0;
inline constexpr std::uint8_t kDetectorB = 1;
inline constexpr std::uint8_t kTriggerChannel = 2;

/// Three-level (ground / excited / shelf) emitter under pulsed excitation,
/// with Poissonian background and a two-detector splitter.
struct SimEmitterConfig {
  double lifetime_ns = 5.87;          // radiative decay
  double p_sat_sim_uw = 209.0;        // p_exc(P) = P / (P + p_sat_sim)
  double shelving_branch = 0.0;       // decay branches into the shelf
  double shelf_lifetime_ns = 500.0;   // shelf dwell time
  double rep_rate_hz = 39e6;
  double collection_efficiency = 0.5; // Bernoulli thinning per photon
  double background_cps_per_uw = 0.0;
  double splitter_ratio = 0.5;        // fraction routed to channel 0
  double jitter_ps_rms = 0.0;         // photons only, never triggers
  std::uint64_t seed = 1;

  void validate() const;
  double excitation_prob(double power_uw) const;
  std::int64_t rep_period_ps() const;
};

struct SimRunRecord {
  SimEmitterConfig config;
  double power_uw = 0.0;
  double duration_s = 0.0;
  std::uint64_t emitted_signal_photons = 0;
  std::uint64_t emitted_background_photons = 0;
  std::uint64_t detected_signal_photons = 0;
  std::uint64_t detected_background_photons = 0;
  std::uint32_t max_signal_photons_per_pulse = 0; // debug tally, must be 1
  std::string rng_name;
  corr::TimestampStream stream;
};

/// Steady-state probabilities of the emitter state seen at pulse arrival.
struct PulseOccupancy {
  double ground = 1.0;
  double excited = 0.0;
  double shelved = 0.0;
};

/// Generates a photon timestamp stream. Per pulse: a ground-state emitter
/// is excited with probability p_exc(P); an excited state waits an
/// exponential lifetime, then either emits (and returns to ground) or
/// branches into the shelf for an exponential dwell. Background photons
/// arrive as a Poisson process. Triggers fire on channel 2 at every pulse.
/// Fully deterministic given the seed.
SimRunRecord simulate_stream(const SimEmitterConfig &config, double power_uw,
                             double duration_s);

/// Closed-form steady state of the per-pulse Markov chain over
/// {ground, excited, shelved}. Exact for the simulate_stream dynamics,
/// including excited states that outlive the pulse period.
PulseOccupancy steady_state_occupancy(const SimEmitterConfig &config,
                                      double power_uw);

/// Expected detected rate: collection_efficiency times the sum of the
/// signal rate rep_rate * p_exc * (1 - shelving_branch) * P(ground at
/// pulse) and the background rate.
double expected_rate(const SimEmitterConfig &config, double power_uw);

struct ScanEmitter {
  double x_um = 0.0;
  double y_um = 0.0;
  double brightness_cps = 0.0; // peak rate at the emitter position
};

struct ScanGeometry {
  int width_px = 0;
  int height_px = 0;
  double pixel_size_um = 0.0;
};

/// Poisson-realized confocal scan: every pixel's expectation is
/// background + sum of Gaussian point spread functions evaluated at the
/// pixel center.
scan::ScanImage simulate_scan(const std::vector<ScanEmitter> &emitters,
                              double psf_sigma_um, double background_cps,
                              const ScanGeometry &geometry, std::uint64_t seed);

/// Poisson-realized spectrum whose expectation follows the multi-Gaussian
/// model scaled so the expected total equals total_counts.
spectro::Spectrum
simulate_spectrum(const std::vector<spectro::GaussianComponent> &components,
                  double baseline, const std::vector<double> &wavelengths_nm,
                  std::uint64_t total_counts, std::uint64_t seed);

/// One simulate_stream per power; rates are detected photons divided by
/// the integration time, errors are sqrt(count) / time. Point i runs with
/// sub-seed mix(seed + i + 1).
photo::SaturationCurve simulate_saturation(const SimEmitterConfig &config,
                                           const std::vector<double> &powers_uw,
                                           double integration_s);

} // namespace qelab::sim
