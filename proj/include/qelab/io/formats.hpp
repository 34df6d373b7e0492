#pragma once

#include "qelab/corr/correlation.hpp"
#include "qelab/photo/photophysics.hpp"
#include "qelab/scan/detection.hpp"
#include "qelab/sim/emitter_sim.hpp"
#include "qelab/spectro/spectroscopy.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace qelab::io {

/// Timestamp file, little-endian binary:
///   magic "QTAG", u16 version = 1, u16 channel count, u64 duration_ps,
///   then (u8 channel, u64 time_ps) records in time order.
void write_qtag(const std::filesystem::path &path,
                const corr::TimestampStream &stream);
corr::TimestampStream read_qtag(const std::filesystem::path &path);

/// Scan image, text: header "# scan width=<W> height=<H> pixel_um=<p>"
/// followed by H lines of W space-separated counts.
void write_scan_image(const std::filesystem::path &path,
                      const scan::ScanImage &image);
scan::ScanImage read_scan_image(const std::filesystem::path &path);

/// Spectrum CSV with header "wavelength_nm,counts".
void write_spectrum_csv(const std::filesystem::path &path,
                        const spectro::Spectrum &spectrum);
spectro::Spectrum read_spectrum_csv(const std::filesystem::path &path);

/// Saturation CSV "power_uw,rate_cps[,rate_err_cps]" with an optional
/// "# integration_s=<t>" comment. When the error column is missing,
/// Poisson errors sqrt(rate / integration_s) are synthesized from the
/// integration time (default 1 s).
void write_saturation_csv(const std::filesystem::path &path,
                          const photo::SaturationCurve &curve,
                          double integration_s = 0.0);
photo::SaturationCurve read_saturation_csv(const std::filesystem::path &path);

/// Flat key=value simulator config; keys match SimEmitterConfig fields.
void write_sim_config(const std::filesystem::path &path,
                      const sim::SimEmitterConfig &config);
sim::SimEmitterConfig read_sim_config(const std::filesystem::path &path);

/// Filter definitions "filter.<name> = [[low,high],...], transmission=<t>".
/// The returned map starts from the presets; file entries override.
std::map<std::string, spectro::FilterConfig>
read_filter_config(const std::filesystem::path &path);

} // namespace qelab::io
