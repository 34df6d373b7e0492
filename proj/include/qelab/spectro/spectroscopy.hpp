#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace qelab::spectro {

inline constexpr double kFwhmPerSigma = 2.3548200450309493; // 2 sqrt(2 ln 2)
inline constexpr double kHcEvNm = 1239.84198;               // photon energy

/// Sampled emission intensity versus wavelength.
struct Spectrum {
  std::vector<double> wavelengths_nm; // strictly increasing
  std::vector<double> intensities;    // counts, non-negative

  void validate() const;
};

struct GaussianComponent {
  double center_nm = 0.0;
  double sigma_nm = 0.0;
  double amplitude = 0.0;

  double area() const; // amplitude * sigma * sqrt(2 pi)
  double value_at(double wavelength_nm) const;
};

struct SpectralFit {
  std::vector<GaussianComponent> components;
  double baseline = 0.0;
  int zpl_index = 0;
  double fitted_fwhm_nm = 0.0; // 2 sqrt(2 ln 2) * sigma of the ZPL component
  double direct_fwhm_nm = 0.0; // model-free FWHM; NaN if a half-level
                               // crossing is missing on one side
  double residual_rms = 0.0;
};

/// Top-hat spectral filter: a set of passbands with a common peak
/// transmission.
struct FilterConfig {
  std::vector<std::pair<double, double>> passbands; // (low_nm, high_nm)
  double peak_transmission = 1.0;

  void validate() const;
  bool passes(double wavelength_nm) const;
};

/// The three filter sets used throughout: cfg1 594-775 nm, cfg2 594-650 nm,
/// cfg3 615-625 nm at 60 % transmission.
const std::map<std::string, FilterConfig> &preset_filters();

/// Up to k initial component guesses from the most prominent local maxima
/// (prominence = height above the higher of the two flanking minima).
/// Returned in order of descending amplitude; fewer than k are returned
/// when the spectrum does not have that many peaks.
std::vector<GaussianComponent> detect_peaks(const Spectrum &spectrum, int k);

struct MultiGaussianOptions {
  int max_iterations = 200;
  double cost_rel_tol = 1e-10;
};

/// Least-squares decomposition into k Gaussians plus a constant baseline.
/// Positivity of sigma, amplitude and baseline is enforced by fitting
/// their logarithms. Initial guesses come from detect_peaks; if fewer
/// than k peaks stand out, the remaining components are seeded at the
/// largest fit residual one at a time.
SpectralFit fit_multi_gaussian(const Spectrum &spectrum, int k,
                               const MultiGaussianOptions &options = {});

/// Index of the component with the largest integrated area; ties go to
/// the shortest center wavelength.
int classify_zpl(const std::vector<GaussianComponent> &components);
int classify_zpl(const SpectralFit &fit);

/// Model-free full width at half maximum: baseline is the minimum
/// intensity, crossings are linearly interpolated nearest the peak.
double direct_fwhm(const Spectrum &spectrum);

/// Energy detuning in meV of a component relative to the ZPL; positive
/// for components red of the ZPL.
double detuning_mev(double component_nm, double zpl_nm);

/// Wavelength at a given detuning from the ZPL (inverse of detuning_mev).
double wavelength_at_detuning(double zpl_nm, double detuning_mev);

Spectrum apply_filter(const Spectrum &spectrum, const FilterConfig &filter);

} // namespace qelab::spectro
