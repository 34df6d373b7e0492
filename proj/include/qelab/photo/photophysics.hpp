#pragma once

#include "qelab/corr/correlation.hpp"

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace qelab::photo {

/// Parameters of the shelving-corrected saturation model
///   R(P) = R_inf * P / (P + P_sat + c_sh * P^2 / P_sh) + c_bg * P.
struct SaturationParams {
  double r_inf_cps = 0.0;
  double p_sat_uw = 0.0;
  double c_sh = 0.0;
  double p_sh_uw = 500.0;
  double c_bg_cps_per_uw = 0.0;

  void validate() const;
};

struct SaturationPoint {
  double power_uw = 0.0;
  double rate_cps = 0.0;
  double rate_err_cps = 0.0;
};

struct SaturationCurve {
  std::vector<SaturationPoint> points;

  void validate() const;
};

/// Fit output. c_sh and P_sh enter the model only through their ratio, so
/// the fit works on shelving_ratio_per_uw = c_sh / P_sh and reports c_sh
/// against the fixed P_sh convention; std_errors.p_sh_uw is 0 by
/// construction.
struct SaturationFitResult {
  SaturationParams params;
  SaturationParams std_errors;
  double shelving_ratio_per_uw = 0.0;
  double residual_rms_cps = 0.0;
  double reduced_chi2 = 0.0;
  int iterations = 0;
};

struct SaturationFitOptions {
  double fixed_p_sh_uw = 500.0;
  int max_iterations = 200;
};

double eval_saturation(const SaturationParams &params, double power_uw);

/// Analytic partial derivatives of the model with respect to
/// (r_inf, p_sat, c_sh, p_sh, c_bg) at the given power.
std::array<double, 5> saturation_gradient(const SaturationParams &params,
                                          double power_uw);

/// Weighted damped least squares with weights 1 / rate_err^2. Positivity
/// is enforced by fitting logarithms; c_sh and c_bg may shrink to the
/// zero boundary. Multiple deterministic starting points guard against
/// the flat valleys of the model.
SaturationFitResult fit_saturation(const SaturationCurve &curve,
                                   const SaturationFitOptions &options = {});

/// Start-stop histogram of photon delay relative to the most recent
/// trigger. Delays past the histogram range are tallied in discarded.
struct DecayHistogram {
  std::int64_t bin_width_ps = 0;
  std::vector<std::uint64_t> counts;
  std::int64_t t0_ps = 0;
  std::uint64_t discarded = 0;
};

struct LifetimeFit {
  double tau_ns = 0.0;
  double amplitude_cps = 0.0;
  double offset_cps = 0.0;
  std::pair<std::int64_t, std::int64_t> fit_window_ps;
  double residual_rms = 0.0;
};

struct LifetimeFitOptions {
  int guard_bins = 1; // skipped after the histogram maximum
  int max_iterations = 200;
};

/// Fits amplitude * exp(-t / tau) + offset to the decaying part of the
/// histogram (from the bin after the maximum plus the guard offset to the
/// last bin above the tail-offset estimate).
LifetimeFit fit_lifetime(const DecayHistogram &hist,
                         const LifetimeFitOptions &options = {});

DecayHistogram build_decay_histogram(const corr::TimestampStream &stream,
                                     std::uint8_t trigger_channel,
                                     std::int64_t bin_width_ps);

} // namespace qelab::photo
