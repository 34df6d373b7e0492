#include "qelab/spectro/spectroscopy.hpp"

#include "qelab/core/errors.hpp"
#include "qelab/fit/levmar.hpp"

#include <algorithm>
#include <cmath>

namespace qelab::spectro {

namespace {

constexpr double kSqrt2Pi = 2.5066282746310002;

double interpolate_crossing(double x0, double y0, double x1, double y1,
                            double level) {
  if (y1 == y0)
    return x0;
  return x0 + (level - y0) * (x1 - x0) / (y1 - y0);
}

} // namespace

void Spectrum::validate() const {
  if (wavelengths_nm.size() != intensities.size())
    throw InvalidInput("spectrum arrays differ in length");
  if (wavelengths_nm.size() < 8)
    throw InvalidInput("spectrum needs at least 8 samples");
  for (std::size_t i = 1; i < wavelengths_nm.size(); ++i)
    if (!(wavelengths_nm[i] > wavelengths_nm[i - 1]))
      throw InvalidInput("spectrum wavelengths must be strictly increasing");
  for (double v : intensities)
    if (!(v >= 0.0))
      throw InvalidInput("spectrum intensities must be non-negative");
}

double GaussianComponent::area() const { return amplitude * sigma_nm * kSqrt2Pi; }

double GaussianComponent::value_at(double wavelength_nm) const {
  double z = (wavelength_nm - center_nm) / sigma_nm;
  return amplitude * std::exp(-0.5 * z * z);
}

void FilterConfig::validate() const {
  if (!(peak_transmission > 0.0 && peak_transmission <= 1.0))
    throw InvalidInput("filter transmission must be in (0, 1]");
  auto bands = passbands;
  std::sort(bands.begin(), bands.end());
  for (std::size_t i = 0; i < bands.size(); ++i) {
    if (!(bands[i].first < bands[i].second))
      throw InvalidInput("filter passband must have low < high");
    if (i > 0 && bands[i].first < bands[i - 1].second)
      throw InvalidInput("filter passbands must not overlap");
  }
}

bool FilterConfig::passes(double wavelength_nm) const {
  for (const auto &[low, high] : passbands)
    if (wavelength_nm >= low && wavelength_nm <= high)
      return true;
  return false;
}

const std::map<std::string, FilterConfig> &preset_filters() {
  static const std::map<std::string, FilterConfig> presets = {
      {"cfg1", {{{594.0, 775.0}}, 1.0}},
      {"cfg2", {{{594.0, 650.0}}, 1.0}},
      {"cfg3", {{{615.0, 625.0}}, 0.60}},
  };
  return presets;
}

std::vector<GaussianComponent> detect_peaks(const Spectrum &spectrum, int k) {
  spectrum.validate();
  if (k < 1 || k > 8)
    throw InvalidInput("peak count k must be in [1, 8]");

  const auto &x = spectrum.wavelengths_nm;
  const auto &y = spectrum.intensities;
  const int n = static_cast<int>(y.size());
  const double baseline = *std::min_element(y.begin(), y.end());

  struct Peak {
    int index;
    double prominence;
    double amplitude;
    double sigma;
  };
  std::vector<Peak> peaks;

  int i = 1;
  while (i < n - 1) {
    if (!(y[i] > y[i - 1])) {
      ++i;
      continue;
    }
    // Plateau-aware: advance over equal values, then require a drop.
    int j = i;
    while (j + 1 < n && y[j + 1] == y[i])
      ++j;
    if (j + 1 >= n || !(y[j + 1] < y[i])) {
      i = j + 1;
      continue;
    }
    int p = i; // first index of the plateau

    // Flanking minima: scan outward until a strictly higher sample or the
    // spectrum edge; the minimum over that range is the base.
    double left_base = y[p];
    for (int l = p - 1; l >= 0; --l) {
      left_base = std::min(left_base, y[l]);
      if (y[l] > y[p])
        break;
    }
    double right_base = y[p];
    for (int r = j + 1; r < n; ++r) {
      right_base = std::min(right_base, y[r]);
      if (y[r] > y[p])
        break;
    }
    double prominence = y[p] - std::max(left_base, right_base);
    if (prominence > 0.0) {
      // Width where the curve drops to half prominence on each side.
      double level = y[p] - 0.5 * prominence;
      double x_left = x[std::max(p - 1, 0)];
      for (int l = p - 1; l >= 0; --l) {
        if (y[l] <= level) {
          x_left = interpolate_crossing(x[l], y[l], x[l + 1], y[l + 1], level);
          break;
        }
        x_left = x[l];
      }
      double x_right = x[std::min(j + 1, n - 1)];
      for (int r = j + 1; r < n; ++r) {
        if (y[r] <= level) {
          x_right = interpolate_crossing(x[r - 1], y[r - 1], x[r], y[r], level);
          break;
        }
        x_right = x[r];
      }
      double mean_spacing = (x[n - 1] - x[0]) / (n - 1);
      double sigma = std::max((x_right - x_left) / kFwhmPerSigma,
                              0.5 * mean_spacing);
      peaks.push_back({p, prominence, y[p] - baseline, sigma});
    }
    i = j + 1;
  }

  // Keep the k most prominent maxima, then order those by amplitude.
  std::sort(peaks.begin(), peaks.end(), [&](const Peak &a, const Peak &b) {
    if (a.prominence != b.prominence)
      return a.prominence > b.prominence;
    return a.index < b.index;
  });
  if (static_cast<int>(peaks.size()) > k)
    peaks.resize(k);
  std::sort(peaks.begin(), peaks.end(), [&](const Peak &a, const Peak &b) {
    if (a.amplitude != b.amplitude)
      return a.amplitude > b.amplitude;
    return a.index < b.index;
  });

  std::vector<GaussianComponent> components;
  components.reserve(peaks.size());
  for (const Peak &p : peaks)
    components.push_back({x[p.index], p.sigma, p.amplitude});
  return components;
}

namespace {

// Parameter layout: [log baseline, (center, log sigma, log amplitude) * k].
Eigen::VectorXd pack(double baseline,
                     const std::vector<GaussianComponent> &components) {
  Eigen::VectorXd params(1 + 3 * components.size());
  params[0] = std::log(baseline);
  for (std::size_t j = 0; j < components.size(); ++j) {
    params[1 + 3 * j] = components[j].center_nm;
    params[2 + 3 * j] = std::log(components[j].sigma_nm);
    params[3 + 3 * j] = std::log(components[j].amplitude);
  }
  return params;
}

void unpack(const Eigen::VectorXd &params, double &baseline,
            std::vector<GaussianComponent> &components) {
  baseline = std::exp(params[0]);
  int k = (static_cast<int>(params.size()) - 1) / 3;
  components.resize(k);
  for (int j = 0; j < k; ++j) {
    components[j].center_nm = params[1 + 3 * j];
    components[j].sigma_nm = std::exp(params[2 + 3 * j]);
    components[j].amplitude = std::exp(params[3 + 3 * j]);
  }
}

// Moving-average copy used only to seed the fit: single-sample noise
// spikes would otherwise win the prominence ranking and start the fit in
// needle-shaped local minima.
Spectrum smoothed_for_init(const Spectrum &spectrum) {
  const int n = static_cast<int>(spectrum.intensities.size());
  int half = std::max(1, n / 400);
  Spectrum out = spectrum;
  for (int i = 0; i < n; ++i) {
    int lo = std::max(0, i - half);
    int hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (int j = lo; j <= hi; ++j)
      acc += spectrum.intensities[j];
    out.intensities[i] = acc / (hi - lo + 1);
  }
  return out;
}

fit::ResidualFn make_residual_fn(const Spectrum &spectrum) {
  return [&spectrum](const Eigen::VectorXd &params, Eigen::VectorXd &residuals,
                     Eigen::MatrixXd *jacobian) {
    const auto &x = spectrum.wavelengths_nm;
    const auto &y = spectrum.intensities;
    const int m = static_cast<int>(x.size());
    const int k = (static_cast<int>(params.size()) - 1) / 3;
    const double baseline = std::exp(params[0]);

    residuals.resize(m);
    if (jacobian)
      jacobian->setZero(m, params.size());

    for (int i = 0; i < m; ++i) {
      double model = baseline;
      if (jacobian)
        (*jacobian)(i, 0) = baseline; // d model / d log baseline
      for (int j = 0; j < k; ++j) {
        double center = params[1 + 3 * j];
        double sigma = std::exp(params[2 + 3 * j]);
        double amp = std::exp(params[3 + 3 * j]);
        double z = (x[i] - center) / sigma;
        double g = amp * std::exp(-0.5 * z * z);
        model += g;
        if (jacobian) {
          (*jacobian)(i, 1 + 3 * j) = g * z / sigma;
          (*jacobian)(i, 2 + 3 * j) = g * z * z;
          (*jacobian)(i, 3 + 3 * j) = g;
        }
      }
      residuals[i] = model - y[i];
    }
  };
}

} // namespace

SpectralFit fit_multi_gaussian(const Spectrum &spectrum, int k,
                               const MultiGaussianOptions &options) {
  spectrum.validate();
  if (k < 1 || k > 8)
    throw InvalidInput("component count k must be in [1, 8]");
  const int m = static_cast<int>(spectrum.wavelengths_nm.size());
  if (m < 3 * k + 2)
    throw InvalidInput("spectrum too short for k components");

  const auto &y = spectrum.intensities;
  const double y_max = *std::max_element(y.begin(), y.end());
  const double y_min = *std::min_element(y.begin(), y.end());
  const double baseline_floor = std::max(1e-9 * std::max(y_max, 1.0), 1e-12);
  const double spacing =
      (spectrum.wavelengths_nm.back() - spectrum.wavelengths_nm.front()) /
      (m - 1);

  std::vector<GaussianComponent> components =
      detect_peaks(smoothed_for_init(spectrum), k);
  if (components.empty())
    throw InvalidInput("k exceeds the number of detectable peaks");

  fit::FitOptions fit_options;
  fit_options.max_iterations = options.max_iterations;
  fit_options.cost_rel_tol = options.cost_rel_tol;
  auto residual_fn = make_residual_fn(spectrum);

  auto run_fit = [&](double baseline0,
                     const std::vector<GaussianComponent> &init) {
    return fit::levenberg_marquardt(residual_fn, pack(baseline0, init),
                                    fit_options);
  };

  double baseline0 = std::max(y_min, baseline_floor);
  fit::FitResult result = run_fit(baseline0, components);

  // Not enough prominent maxima: seed missing components at the largest
  // positive fit residual, one at a time.
  while (static_cast<int>(components.size()) < k) {
    double baseline_fit;
    unpack(result.params, baseline_fit, components);

    Eigen::VectorXd residuals;
    residual_fn(result.params, residuals, nullptr);
    int best = -1;
    double best_deficit = 1e-6 * std::max(y_max, 1.0);
    for (int i = 0; i < m; ++i) {
      double deficit = -residuals[i]; // data above model
      if (deficit > best_deficit) {
        best_deficit = deficit;
        best = i;
      }
    }
    if (best < 0)
      throw InvalidInput("k exceeds the number of detectable peaks");

    components.push_back(
        {spectrum.wavelengths_nm[best], 2.0 * spacing, best_deficit});
    result = run_fit(baseline_fit, components);
  }

  // Refinement sweep against local minima: overlapping components often
  // converge to an unsplit blend plus a spurious wide tail. Try a few
  // deterministic restarts (split a dominant component and drop a small
  // one, or re-seed the smallest at the worst residual) and keep the best
  // final cost.
  for (int sweep = 0; sweep < 3 && k >= 2; ++sweep) {
    double baseline_fit;
    std::vector<GaussianComponent> fitted;
    unpack(result.params, baseline_fit, fitted);

    // Support = samples where a component rises above 20 % of its peak.
    // Sub-grid needles (support ~1) are drop candidates, never split
    // candidates.
    auto support_of = [&](const GaussianComponent &c) {
      double cutoff_halfwidth = c.sigma_nm * 1.7941; // sqrt(-2 ln 0.2)
      int lo = static_cast<int>(std::ceil(
          (c.center_nm - cutoff_halfwidth - spectrum.wavelengths_nm.front()) /
          spacing));
      int hi = static_cast<int>(std::floor(
          (c.center_nm + cutoff_halfwidth - spectrum.wavelengths_nm.front()) /
          spacing));
      return std::max(0, std::min(hi, m - 1) - std::max(lo, 0) + 1);
    };

    std::vector<int> split_order, drop_order;
    for (std::size_t i = 0; i < fitted.size(); ++i) {
      if (support_of(fitted[i]) >= 3)
        split_order.push_back(static_cast<int>(i));
      drop_order.push_back(static_cast<int>(i));
    }
    std::sort(split_order.begin(), split_order.end(), [&](int a, int b) {
      return fitted[a].area() > fitted[b].area();
    });
    std::sort(drop_order.begin(), drop_order.end(), [&](int a, int b) {
      int sa = support_of(fitted[a]), sb = support_of(fitted[b]);
      if (sa != sb)
        return sa < sb;
      return fitted[a].area() < fitted[b].area();
    });

    std::vector<std::vector<GaussianComponent>> restarts;
    auto split_drop = [&](int split_index, int drop_index) {
      if (split_index == drop_index)
        return;
      std::vector<GaussianComponent> init;
      const GaussianComponent &s = fitted[split_index];
      for (std::size_t i = 0; i < fitted.size(); ++i) {
        if (static_cast<int>(i) == drop_index)
          continue;
        if (static_cast<int>(i) == split_index) {
          double offset = std::max(0.6 * s.sigma_nm, spacing);
          init.push_back({s.center_nm - offset, s.sigma_nm * 0.7,
                          s.amplitude * 0.6});
          init.push_back({s.center_nm + offset, s.sigma_nm * 0.7,
                          s.amplitude * 0.6});
        } else {
          init.push_back(fitted[i]);
        }
      }
      restarts.push_back(std::move(init));
    };
    for (std::size_t si = 0; si < std::min<std::size_t>(2, split_order.size());
         ++si)
      for (std::size_t di = 0;
           di < std::min<std::size_t>(2, drop_order.size()); ++di)
        split_drop(split_order[si], drop_order[di]);

    {
      // Re-seed the weakest component at the largest data-above-model
      // point of the current solution.
      Eigen::VectorXd residuals;
      residual_fn(result.params, residuals, nullptr);
      int worst = 0;
      for (int i = 1; i < m; ++i)
        if (-residuals[i] > -residuals[worst])
          worst = i;
      if (-residuals[worst] > 0.0 && !drop_order.empty()) {
        std::vector<GaussianComponent> init = fitted;
        init[drop_order.front()] = {spectrum.wavelengths_nm[worst],
                                    2.0 * spacing, -residuals[worst]};
        restarts.push_back(std::move(init));
      }
    }

    bool improved = false;
    for (const auto &init : restarts) {
      fit::FitResult candidate = run_fit(baseline_fit, init);
      if (candidate.final_cost < result.final_cost * (1.0 - 1e-3)) {
        result = candidate;
        improved = true;
      }
    }
    if (!improved)
      break;
  }

  if (!result.converged) {
    std::vector<double> best(result.params.data(),
                             result.params.data() + result.params.size());
    throw FitNotConverged("multi-Gaussian fit did not converge", best,
                          result.final_cost);
  }

  SpectralFit fit;
  unpack(result.params, fit.baseline, fit.components);
  fit.residual_rms = std::sqrt(result.final_cost / m);
  fit.zpl_index = classify_zpl(fit.components);
  fit.fitted_fwhm_nm = kFwhmPerSigma * fit.components[fit.zpl_index].sigma_nm;
  try {
    fit.direct_fwhm_nm = direct_fwhm(spectrum);
  } catch (const DegenerateData &) {
    fit.direct_fwhm_nm = std::nan("");
  }
  return fit;
}

int classify_zpl(const std::vector<GaussianComponent> &components) {
  if (components.empty())
    throw InvalidInput("cannot classify ZPL without components");
  int best = 0;
  for (int j = 1; j < static_cast<int>(components.size()); ++j) {
    double a = components[j].area();
    double a_best = components[best].area();
    if (a > a_best ||
        (a == a_best && components[j].center_nm < components[best].center_nm))
      best = j;
  }
  return best;
}

int classify_zpl(const SpectralFit &fit) { return classify_zpl(fit.components); }

double direct_fwhm(const Spectrum &spectrum) {
  spectrum.validate();
  const auto &x = spectrum.wavelengths_nm;
  const auto &y = spectrum.intensities;
  const int n = static_cast<int>(y.size());

  int peak = static_cast<int>(
      std::max_element(y.begin(), y.end()) - y.begin());
  double baseline = *std::min_element(y.begin(), y.end());
  if (!(y[peak] > baseline))
    throw DegenerateData("spectrum has no peak above baseline");
  double level = baseline + 0.5 * (y[peak] - baseline);

  double x_left = 0.0;
  bool found_left = false;
  for (int i = peak - 1; i >= 0; --i) {
    if (y[i] <= level) {
      x_left = interpolate_crossing(x[i], y[i], x[i + 1], y[i + 1], level);
      found_left = true;
      break;
    }
  }
  double x_right = 0.0;
  bool found_right = false;
  for (int i = peak + 1; i < n; ++i) {
    if (y[i] <= level) {
      x_right = interpolate_crossing(x[i - 1], y[i - 1], x[i], y[i], level);
      found_right = true;
      break;
    }
  }
  if (!found_left || !found_right)
    throw DegenerateData("half-maximum crossing missing on one side");
  return x_right - x_left;
}

double detuning_mev(double component_nm, double zpl_nm) {
  if (!(component_nm > 0.0) || !(zpl_nm > 0.0))
    throw InvalidInput("wavelengths must be positive");
  return 1e3 * kHcEvNm * (1.0 / zpl_nm - 1.0 / component_nm);
}

double wavelength_at_detuning(double zpl_nm, double detuning_mev) {
  if (!(zpl_nm > 0.0))
    throw InvalidInput("ZPL wavelength must be positive");
  double energy_ev = kHcEvNm / zpl_nm - detuning_mev / 1e3;
  if (!(energy_ev > 0.0))
    throw InvalidInput("detuning exceeds the photon energy");
  return kHcEvNm / energy_ev;
}

Spectrum apply_filter(const Spectrum &spectrum, const FilterConfig &filter) {
  spectrum.validate();
  filter.validate();
  Spectrum out = spectrum;
  for (std::size_t i = 0; i < out.intensities.size(); ++i) {
    out.intensities[i] = filter.passes(out.wavelengths_nm[i])
                             ? out.intensities[i] * filter.peak_transmission
                             : 0.0;
  }
  return out;
}

} // namespace qelab::spectro
