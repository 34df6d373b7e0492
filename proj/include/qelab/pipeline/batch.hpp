#pragma once

#include "qelab/photo/photophysics.hpp"
#include "qelab/spectro/spectroscopy.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace qelab::pipeline {

/// Per-emitter input file set, one entry per filter configuration.
struct FilterInputs {
  std::filesystem::path spectrum_csv;
  std::filesystem::path g2_qtag;
  std::filesystem::path saturation_csv;
};

struct EmitterInputs {
  int id = 0;
  std::pair<double, double> position_um{0.0, 0.0};
  std::filesystem::path lifetime_qtag;
  std::uint8_t trigger_channel = 2;
  std::map<std::string, FilterInputs> filters;
};

struct Manifest {
  std::vector<EmitterInputs> emitters;
  double op_power_uw = 120.0;
  double rep_rate_hz = 39e6;
};

/// One JSON document listing per-emitter file paths; relative paths are
/// resolved against the manifest's directory. Parse problems are fatal.
Manifest load_manifest(const std::filesystem::path &path);

struct BatchConfig {
  std::map<std::string, spectro::FilterConfig> filters =
      spectro::preset_filters();
  std::vector<std::string> filter_names{"cfg1", "cfg2", "cfg3"};
  double op_power_uw = 120.0;
  double rep_rate_hz = 39e6;
  int spectrum_components = 4;
  std::int64_t g2_bin_width_ps = 256;
  int g2_side_peaks = 10;
  std::uint8_t g2_channel_a = 0;
  std::uint8_t g2_channel_b = 1;
  std::int64_t lifetime_bin_width_ps = 128;
  int workers = 1;

  std::string hash() const; // stable digest over all settings
};

/// Analysis results for one emitter under one filter configuration.
/// Failed steps leave their optionals empty and append to errors.
struct FilterResult {
  std::optional<spectro::SpectralFit> spectral_fit;
  std::optional<double> zpl_nm;
  std::optional<double> g2_zero;
  std::optional<photo::SaturationFitResult> saturation;
  std::optional<double> rate_at_op_power_cps;
  std::vector<std::string> errors;
};

struct EmitterRecord {
  int id = 0;
  std::pair<double, double> position_um{0.0, 0.0};
  std::map<std::string, FilterResult> per_filter;
  std::optional<double> lifetime_ns; // filter-independent, stored once
  struct Provenance {
    std::vector<std::string> input_files;
    std::string config_hash;
    std::vector<std::string> errors;
  } provenance;

  bool complete() const; // no errors anywhere
};

/// Summary of one scalar quantity over the batch (type-7 quartiles).
struct SummaryStats {
  int n = 0;
  double min = 0, q1 = 0, median = 0, q3 = 0, max = 0, mean = 0;
};

struct BatchStats {
  std::vector<double> zpl_bin_edges_nm; // 600..680 in 2 nm steps
  std::vector<int> zpl_counts;
  int zpl_overflow = 0;          // valid ZPLs outside [600, 680)
  std::string zpl_source_filter; // first requested filter
  std::map<std::string, SummaryStats> g2_summary;
  std::map<std::string, SummaryStats> rinf_summary;
  std::map<std::string, int> n_single; // g2_zero < 0.5
  int n_emitters = 0;
};

/// Runs spectrum fit, pulsed g2 and saturation fit per (emitter, filter)
/// and one lifetime fit per emitter. A failure in any step is recorded in
/// that emitter's record and never aborts the batch. Emitters are
/// processed by config.workers threads; output is sorted by id and
/// byte-identical across worker counts.
std::vector<EmitterRecord> run_pipeline(const Manifest &manifest,
                                        const BatchConfig &config);

BatchStats aggregate_stats(const std::vector<EmitterRecord> &records,
                           const std::vector<std::string> &filter_names);

enum class ReportFormat { Json, Csv };

/// Deterministic report files under out_dir. Json writes records.json and
/// stats.json (full precision, key-sorted); Csv writes records.csv plus
/// zpl_histogram.csv, g2_boxplot.csv and rinf_boxplot.csv with values
/// formatted to 6 significant digits.
void emit_report(const std::vector<EmitterRecord> &records,
                 const BatchStats &stats,
                 const std::filesystem::path &out_dir, ReportFormat format);

void save_records_json(const std::vector<EmitterRecord> &records,
                       const std::filesystem::path &path);
std::vector<EmitterRecord>
load_records_json(const std::filesystem::path &path);

} // namespace qelab::pipeline
