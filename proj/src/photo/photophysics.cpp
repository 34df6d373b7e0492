#include "qelab/photo/photophysics.hpp"

#include "qelab/core/errors.hpp"
#include "qelab/fit/levmar.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace qelab::photo {

void SaturationParams::validate() const {
  if (!(r_inf_cps > 0.0) || !(p_sat_uw > 0.0) || !(p_sh_uw > 0.0))
    throw InvalidInput("r_inf, p_sat and p_sh must be positive");
  if (!(c_sh >= 0.0) || !(c_bg_cps_per_uw >= 0.0))
    throw InvalidInput("c_sh and c_bg must be non-negative");
}

void SaturationCurve::validate() const {
  if (points.size() < 6)
    throw InvalidInput("saturation curve needs at least 6 points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].power_uw > 0.0))
      throw InvalidInput("powers must be positive");
    if (!(points[i].rate_cps >= 0.0))
      throw InvalidInput("rates must be non-negative");
    if (!(points[i].rate_err_cps > 0.0))
      throw InvalidInput("rate errors must be positive");
    if (i > 0 && !(points[i].power_uw > points[i - 1].power_uw))
      throw InvalidInput("powers must be strictly increasing");
  }
}

double eval_saturation(const SaturationParams &params, double power_uw) {
  if (!(power_uw >= 0.0))
    throw InvalidInput("power must be non-negative");
  if (power_uw == 0.0)
    return 0.0;
  double denom = power_uw + params.p_sat_uw +
                 params.c_sh * power_uw * power_uw / params.p_sh_uw;
  return params.r_inf_cps * power_uw / denom +
         params.c_bg_cps_per_uw * power_uw;
}

std::array<double, 5> saturation_gradient(const SaturationParams &params,
                                          double power_uw) {
  if (!(power_uw >= 0.0))
    throw InvalidInput("power must be non-negative");
  const double p = power_uw;
  const double denom = p + params.p_sat_uw +
                       params.c_sh * p * p / params.p_sh_uw;
  const double denom2 = denom * denom;
  std::array<double, 5> grad;
  grad[0] = p / denom;                                          // d/dR_inf
  grad[1] = -params.r_inf_cps * p / denom2;                     // d/dP_sat
  grad[2] = -params.r_inf_cps * p * (p * p / params.p_sh_uw) / denom2;
  grad[3] = params.r_inf_cps * p * params.c_sh * p * p /
            (params.p_sh_uw * params.p_sh_uw * denom2);         // d/dP_sh
  grad[4] = p;                                                  // d/dc_bg
  return grad;
}

namespace {

// Internal fit parameters: logs of (r_inf, p_sat, s, c_bg) with
// s = c_sh / p_sh. The model only sees the ratio.
struct SaturationModel {
  const SaturationCurve &curve;

  void operator()(const Eigen::VectorXd &theta, Eigen::VectorXd &residuals,
                  Eigen::MatrixXd *jacobian) const {
    const double r_inf = std::exp(theta[0]);
    const double p_sat = std::exp(theta[1]);
    const double s = std::exp(theta[2]);
    const double c_bg = std::exp(theta[3]);
    const int m = static_cast<int>(curve.points.size());
    residuals.resize(m);
    if (jacobian)
      jacobian->setZero(m, 4);
    for (int i = 0; i < m; ++i) {
      const auto &pt = curve.points[i];
      const double p = pt.power_uw;
      const double w = 1.0 / pt.rate_err_cps;
      const double denom = p + p_sat + s * p * p;
      const double signal = r_inf * p / denom;
      residuals[i] = w * (signal + c_bg * p - pt.rate_cps);
      if (jacobian) {
        (*jacobian)(i, 0) = w * signal;                          // log r_inf
        (*jacobian)(i, 1) = w * (-signal / denom) * p_sat;       // log p_sat
        (*jacobian)(i, 2) = w * (-signal * p * p / denom) * s;   // log s
        (*jacobian)(i, 3) = w * p * c_bg;                        // log c_bg
      }
    }
  }
};

} // namespace

SaturationFitResult fit_saturation(const SaturationCurve &curve,
                                   const SaturationFitOptions &options) {
  curve.validate();
  const auto &pts = curve.points;
  const double p_min = pts.front().power_uw;
  const double p_max = pts.back().power_uw;
  if (p_max < 10.0 * p_min)
    throw InvalidInput("powers must span at least a factor of 10");

  double rate_min = pts.front().rate_cps, rate_max = rate_min;
  for (const auto &pt : pts) {
    rate_min = std::min(rate_min, pt.rate_cps);
    rate_max = std::max(rate_max, pt.rate_cps);
  }
  if (!(rate_max - rate_min > 1e-12 * std::max(rate_max, 1.0)))
    throw DegenerateData("all rates are equal");

  SaturationModel model{curve};
  fit::FitOptions fit_options;
  fit_options.max_iterations = options.max_iterations;

  // Small floors keep the logs finite; the boundary cases shrink to them.
  const double s_floor = 1e-14 / p_max;
  const double c_bg_floor = 1e-12 * rate_max / p_max;

  double p_at_peak = p_max;
  for (const auto &pt : pts)
    if (pt.rate_cps == rate_max)
      p_at_peak = pt.power_uw;

  const double p_sat_starts[] = {3.0 * p_min, std::sqrt(p_min * p_max),
                                 p_max / 3.0};
  // Shelving ratio starts span from none to rollover below the lowest
  // measured power.
  const double s_starts[] = {s_floor, 0.1 / p_max, 3.0 / p_max,
                             0.3 / p_min, 3.0 / p_min};
  const double c_bg_starts[] = {c_bg_floor,
                                0.5 * pts.front().rate_cps / p_min};

  fit::FitResult best;
  best.final_cost = std::numeric_limits<double>::infinity();
  for (double p_sat0 : p_sat_starts) {
    for (double s0 : s_starts) {
      for (double c_bg0 : c_bg_starts) {
        if (!(c_bg0 > 0.0))
          c_bg0 = c_bg_floor;
        // r_inf consistent with the brightest point under this start.
        double r_inf0 = std::max(
            rate_max * (p_at_peak + p_sat0 + s0 * p_at_peak * p_at_peak) /
                p_at_peak,
            1e-6);
        Eigen::VectorXd theta(4);
        theta << std::log(r_inf0), std::log(p_sat0), std::log(s0),
            std::log(c_bg0);
        fit::FitResult result = fit::levenberg_marquardt(model, theta,
                                                         fit_options);
        if (result.final_cost < best.final_cost)
          best = result;
      }
    }
  }

  if (!best.converged) {
    std::vector<double> params(best.params.data(),
                               best.params.data() + best.params.size());
    throw FitNotConverged("saturation fit did not converge", params,
                          best.final_cost);
  }

  const double r_inf = std::exp(best.params[0]);
  const double p_sat = std::exp(best.params[1]);
  const double s = std::exp(best.params[2]);
  const double c_bg = std::exp(best.params[3]);

  SaturationFitResult out;
  out.params.r_inf_cps = r_inf;
  out.params.p_sat_uw = p_sat;
  out.params.p_sh_uw = options.fixed_p_sh_uw;
  out.params.c_sh = s * options.fixed_p_sh_uw;
  out.params.c_bg_cps_per_uw = c_bg;
  out.shelving_ratio_per_uw = s;
  out.iterations = best.iterations;

  Eigen::VectorXd log_errors = fit::standard_errors(best);
  out.std_errors.r_inf_cps = r_inf * log_errors[0];
  out.std_errors.p_sat_uw = p_sat * log_errors[1];
  out.std_errors.c_sh = s * log_errors[2] * options.fixed_p_sh_uw;
  out.std_errors.p_sh_uw = 0.0;
  out.std_errors.c_bg_cps_per_uw = c_bg * log_errors[3];

  const int m = static_cast<int>(pts.size());
  double sum_sq = 0.0;
  for (const auto &pt : pts) {
    double r = eval_saturation(out.params, pt.power_uw) - pt.rate_cps;
    sum_sq += r * r;
  }
  out.residual_rms_cps = std::sqrt(sum_sq / m);
  out.reduced_chi2 = m > 4 ? best.final_cost / (m - 4) : 0.0;
  return out;
}

LifetimeFit fit_lifetime(const DecayHistogram &hist,
                         const LifetimeFitOptions &options) {
  if (hist.bin_width_ps < 1)
    throw InvalidInput("decay histogram bin width must be at least 1 ps");
  const int n = static_cast<int>(hist.counts.size());
  if (n < 16)
    throw InvalidInput("decay histogram needs at least 16 bins");
  if (options.guard_bins < 0)
    throw InvalidInput("guard offset must be non-negative");

  const auto &counts = hist.counts;
  int peak = static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());

  // Offset estimate from the tail of the histogram.
  int tail = std::max(2, n / 10);
  double offset_est = 0.0;
  for (int i = n - tail; i < n; ++i)
    offset_est += static_cast<double>(counts[i]);
  offset_est /= tail;

  int start = peak + options.guard_bins;
  int end = n - 1;
  while (end > start && !(static_cast<double>(counts[end]) > offset_est))
    --end;
  if (end - start + 1 < 10)
    throw DegenerateData("no decaying region after the histogram maximum");

  const double bin_ns = static_cast<double>(hist.bin_width_ps) * 1e-3;
  const int m = end - start + 1;

  const double peak_value = static_cast<double>(counts[start]);
  const double offset_floor = std::max(1e-9 * std::max(peak_value, 1.0), 1e-12);
  double offset0 = std::max(offset_est, offset_floor);
  double amp0 = std::max(peak_value - offset0, offset_floor);

  // Initial tau from the 1/e point of the decay.
  double tau0 = bin_ns * m / 2.0;
  for (int i = start; i <= end; ++i) {
    if (static_cast<double>(counts[i]) - offset0 <= amp0 / 2.718281828459045) {
      tau0 = std::max(bin_ns * (i - start), bin_ns);
      break;
    }
  }

  auto residual_fn = [&](const Eigen::VectorXd &theta,
                         Eigen::VectorXd &residuals,
                         Eigen::MatrixXd *jacobian) {
    const double amp = std::exp(theta[0]);
    const double tau = std::exp(theta[1]);
    const double offset = std::exp(theta[2]);
    residuals.resize(m);
    if (jacobian)
      jacobian->setZero(m, 3);
    for (int i = 0; i < m; ++i) {
      double t = bin_ns * i;
      double decay = amp * std::exp(-t / tau);
      residuals[i] = decay + offset - static_cast<double>(counts[start + i]);
      if (jacobian) {
        (*jacobian)(i, 0) = decay;
        (*jacobian)(i, 1) = decay * t / tau;
        (*jacobian)(i, 2) = offset;
      }
    }
  };

  Eigen::VectorXd theta(3);
  theta << std::log(amp0), std::log(tau0), std::log(offset0);
  fit::FitOptions fit_options;
  fit_options.max_iterations = options.max_iterations;
  fit::FitResult result = fit::levenberg_marquardt(residual_fn, theta,
                                                   fit_options);
  if (!result.converged) {
    std::vector<double> params(result.params.data(),
                               result.params.data() + result.params.size());
    throw FitNotConverged("lifetime fit did not converge", params,
                          result.final_cost);
  }

  LifetimeFit fit;
  fit.amplitude_cps = std::exp(result.params[0]);
  fit.tau_ns = std::exp(result.params[1]);
  fit.offset_cps = std::exp(result.params[2]);
  fit.fit_window_ps = {hist.t0_ps + start * hist.bin_width_ps,
                       hist.t0_ps + (end + 1) * hist.bin_width_ps};
  fit.residual_rms = std::sqrt(result.final_cost / m);
  return fit;
}

DecayHistogram build_decay_histogram(const corr::TimestampStream &stream,
                                     std::uint8_t trigger_channel,
                                     std::int64_t bin_width_ps) {
  stream.validate();
  if (bin_width_ps < 1)
    throw InvalidInput("bin width must be at least 1 ps");
  if (!stream.has_channel(trigger_channel))
    throw InvalidInput("trigger channel not present in the stream");

  std::vector<std::uint64_t> triggers = stream.channel_times(trigger_channel);
  if (triggers.size() < 2)
    throw InvalidInput("need at least 2 trigger events");

  const double period =
      static_cast<double>(triggers.back() - triggers.front()) /
      static_cast<double>(triggers.size() - 1);
  const std::int64_t n_bins = static_cast<std::int64_t>(
      std::ceil(period / static_cast<double>(bin_width_ps)));

  DecayHistogram hist;
  hist.bin_width_ps = bin_width_ps;
  hist.t0_ps = 0;
  hist.counts.assign(static_cast<std::size_t>(std::max<std::int64_t>(n_bins, 1)),
                     0);

  std::size_t trigger_index = 0;
  for (const auto &event : stream.events) {
    if (event.channel == trigger_channel)
      continue;
    if (event.time_ps < triggers.front())
      continue; // before the first trigger: outside the bookkeeping
    while (trigger_index + 1 < triggers.size() &&
           triggers[trigger_index + 1] <= event.time_ps)
      ++trigger_index;
    std::uint64_t delay = event.time_ps - triggers[trigger_index];
    std::uint64_t bin = delay / static_cast<std::uint64_t>(bin_width_ps);
    if (bin < hist.counts.size())
      hist.counts[bin] += 1;
    else
      hist.discarded += 1;
  }
  return hist;
}

} // namespace qelab::photo
