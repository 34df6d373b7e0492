#include "qelab/core/errors.hpp"
#include "qelab/io/formats.hpp"
#include "qelab/pipeline/batch.hpp"
#include "qelab/sim/emitter_sim.hpp"
#include "qelab/sim/random.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

using nlohmann::json;
using namespace qelab;

namespace {

void write_json(const std::filesystem::path &path, const json &doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw InvalidInput("cannot write " + path.string());
  out << doc.dump(2) << "\n";
}

json params_json(const photo::SaturationParams &p) {
  return json{{"r_inf_cps", p.r_inf_cps},
              {"p_sat_uw", p.p_sat_uw},
              {"c_sh", p.c_sh},
              {"p_sh_uw", p.p_sh_uw},
              {"c_bg_cps_per_uw", p.c_bg_cps_per_uw}};
}

std::vector<double> log_spaced(double lo, double hi, int n) {
  std::vector<double> values;
  for (int i = 0; i < n; ++i)
    values.push_back(lo *
                     std::pow(hi / lo, n > 1 ? static_cast<double>(i) / (n - 1)
                                             : 0.0));
  return values;
}

int run_detect(const std::string &scan_path, int n, double a,
               const std::string &kernel_name, const std::string &out_path) {
  if (kernel_name != "binomial")
    throw InvalidInput("unknown kernel: " + kernel_name);
  auto image = io::read_scan_image(scan_path);
  scan::DetectionParams params;
  params.neighbor_distance_n = n;
  params.brightness_factor_a = a;
  auto candidates = scan::detect(image, params);

  json out = json::array();
  for (const auto &cand : candidates) {
    out.push_back({{"seed_pixel", {cand.seed_pixel.first, cand.seed_pixel.second}},
                   {"seed_brightness", cand.seed_brightness},
                   {"centroid_um", {cand.centroid_um.first, cand.centroid_um.second}},
                   {"n_pixels", cand.member_pixels.size()}});
  }
  write_json(out_path, json{{"candidates", out},
                            {"n_candidates", candidates.size()},
                            {"params", {{"n", n}, {"a", a},
                                        {"kernel", kernel_name}}}});
  std::cout << candidates.size() << " candidates -> " << out_path << "\n";
  return 0;
}

int run_spectrum(const std::string &in_path, int k,
                 const std::string &filter_name,
                 const std::string &filter_file, const std::string &out_path) {
  auto spectrum = io::read_spectrum_csv(in_path);
  auto filters = filter_file.empty() ? spectro::preset_filters()
                                     : io::read_filter_config(filter_file);
  if (!filter_name.empty()) {
    auto it = filters.find(filter_name);
    if (it == filters.end())
      throw InvalidInput("unknown filter: " + filter_name);
    spectrum = spectro::apply_filter(spectrum, it->second);
  }
  auto fit = spectro::fit_multi_gaussian(spectrum, k);

  json components = json::array();
  for (const auto &c : fit.components)
    components.push_back({{"center_nm", c.center_nm},
                          {"sigma_nm", c.sigma_nm},
                          {"amplitude", c.amplitude}});
  json out{{"components", components},
           {"baseline", fit.baseline},
           {"zpl_index", fit.zpl_index},
           {"zpl_nm", fit.components[fit.zpl_index].center_nm},
           {"fitted_fwhm_nm", fit.fitted_fwhm_nm},
           {"residual_rms", fit.residual_rms},
           {"filter", filter_name.empty() ? json(nullptr) : json(filter_name)}};
  out["direct_fwhm_nm"] =
      std::isnan(fit.direct_fwhm_nm) ? json(nullptr) : json(fit.direct_fwhm_nm);
  write_json(out_path, out);
  std::cout << "ZPL " << fit.components[fit.zpl_index].center_nm
            << " nm, fitted FWHM " << fit.fitted_fwhm_nm << " nm -> "
            << out_path << "\n";
  return 0;
}

int run_g2(const std::string &in_path, int cha, int chb, std::int64_t bin_ps,
           double max_lag_ns, double rep_mhz, int side_peaks,
           const std::string &out_path) {
  auto stream = io::read_qtag(in_path);
  std::int64_t max_lag =
      static_cast<std::int64_t>(std::ceil(max_lag_ns * 1000.0 / bin_ps)) *
      bin_ps;
  auto hist = corr::compute_g2(stream, static_cast<std::uint8_t>(cha),
                               static_cast<std::uint8_t>(chb), bin_ps, max_lag);
  json out{{"bin_width_ps", hist.bin_width_ps},
           {"lags_ps", hist.lags_ps},
           {"raw_counts", hist.raw_counts},
           {"normalized", hist.normalized},
           {"rate_ch1_hz", hist.rate_ch1_hz},
           {"rate_ch2_hz", hist.rate_ch2_hz},
           {"duration_s", hist.duration_s}};
  if (rep_mhz > 0.0) {
    auto result = corr::g2_zero_pulsed(hist, rep_mhz * 1e6, side_peaks);
    out["g2_zero"] = result.g2_zero;
    out["center_peak_area"] = result.center_peak_area;
    out["mean_side_peak_area"] = result.mean_side_peak_area;
    out["rep_period_ps"] = result.rep_period_ps;
    out["n_side_peaks_used"] = result.n_side_peaks_used;
    std::cout << "g2(0) = " << result.g2_zero << " -> " << out_path << "\n";
  } else {
    std::cout << "histogram with " << hist.lags_ps.size() << " bins -> "
              << out_path << "\n";
  }
  write_json(out_path, out);
  return 0;
}

int run_saturation(const std::string &in_path, const std::string &out_path) {
  auto curve = io::read_saturation_csv(in_path);
  auto fit = photo::fit_saturation(curve);
  json out{{"params", params_json(fit.params)},
           {"std_errors", params_json(fit.std_errors)},
           {"shelving_ratio_per_uw", fit.shelving_ratio_per_uw},
           {"residual_rms_cps", fit.residual_rms_cps},
           {"reduced_chi2", fit.reduced_chi2},
           {"iterations", fit.iterations},
           {"note", "c_sh and p_sh enter only through c_sh/p_sh; p_sh is "
                    "fixed by convention and its std error is 0"}};
  write_json(out_path, out);
  std::cout << "R_inf " << fit.params.r_inf_cps << " cps, P_sat "
            << fit.params.p_sat_uw << " uW -> " << out_path << "\n";
  return 0;
}

int run_lifetime(const std::string &in_path, int trigger, std::int64_t bin_ps,
                 const std::string &out_path) {
  auto stream = io::read_qtag(in_path);
  auto hist = photo::build_decay_histogram(
      stream, static_cast<std::uint8_t>(trigger), bin_ps);
  auto fit = photo::fit_lifetime(hist);
  write_json(out_path,
             json{{"tau_ns", fit.tau_ns},
                  {"amplitude", fit.amplitude_cps},
                  {"offset", fit.offset_cps},
                  {"fit_window_ps", {fit.fit_window_ps.first,
                                     fit.fit_window_ps.second}},
                  {"residual_rms", fit.residual_rms},
                  {"histogram_bins", hist.counts.size()},
                  {"discarded_photons", hist.discarded}});
  std::cout << "tau = " << fit.tau_ns << " ns -> " << out_path << "\n";
  return 0;
}

int run_batch(const std::string &manifest_path, const std::string &filters_arg,
              const std::string &filter_file, int workers,
              const std::string &out_dir) {
  auto manifest = pipeline::load_manifest(manifest_path);

  pipeline::BatchConfig config;
  config.filters = filter_file.empty() ? spectro::preset_filters()
                                       : io::read_filter_config(filter_file);
  config.filter_names.clear();
  std::string token;
  std::istringstream names(filters_arg);
  while (std::getline(names, token, ','))
    if (!token.empty())
      config.filter_names.push_back(token);
  config.workers = workers;
  config.op_power_uw = manifest.op_power_uw;
  config.rep_rate_hz = manifest.rep_rate_hz;

  auto records = pipeline::run_pipeline(manifest, config);
  pipeline::BatchStats stats;
  if (!records.empty()) {
    try {
      stats = pipeline::aggregate_stats(records, config.filter_names);
    } catch (const DegenerateData &e) {
      std::cerr << "warning: " << e.what() << "\n";
    }
  }
  pipeline::emit_report(records, stats, out_dir, pipeline::ReportFormat::Json);
  pipeline::emit_report(records, stats, out_dir, pipeline::ReportFormat::Csv);

  int failures = 0;
  for (const auto &record : records)
    if (!record.complete())
      ++failures;
  std::cout << records.size() << " emitters analyzed, " << failures
            << " with failures -> " << out_dir << "\n";
  return failures > 0 ? 2 : 0;
}

int run_report(const std::string &records_path, const std::string &format,
               const std::string &filters_arg, const std::string &out_dir) {
  auto records = pipeline::load_records_json(records_path);
  std::vector<std::string> filter_names;
  std::string token;
  std::istringstream names(filters_arg);
  while (std::getline(names, token, ','))
    if (!token.empty())
      filter_names.push_back(token);

  pipeline::BatchStats stats;
  if (!records.empty()) {
    try {
      stats = pipeline::aggregate_stats(records, filter_names);
    } catch (const DegenerateData &e) {
      std::cerr << "warning: " << e.what() << "\n";
    }
  }
  pipeline::emit_report(records, stats, out_dir,
                        format == "json" ? pipeline::ReportFormat::Json
                                         : pipeline::ReportFormat::Csv);
  std::cout << "report -> " << out_dir << "\n";
  return 0;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"qelab: quantum-emitter scan, spectrum, correlation and "
               "photophysics analysis with a built-in Monte Carlo simulator"};
  app.require_subcommand(1);

  // detect
  auto *detect = app.add_subcommand("detect", "find emitters in a scan image");
  std::string scan_path, detect_out = "candidates.json";
  int neighbor_n = 10;
  double factor_a = 2.5;
  std::string kernel = "binomial";
  detect->add_option("--scan", scan_path, "scan image file")->required();
  detect->add_option("--n", neighbor_n, "neighbor distance in pixels");
  detect->add_option("--a", factor_a, "brightness factor");
  detect->add_option("--kernel", kernel, "smoothing kernel");
  detect->add_option("--out", detect_out, "output JSON");

  // spectrum
  auto *spectrum = app.add_subcommand("spectrum", "multi-Gaussian spectral fit");
  std::string spectrum_in, spectrum_out = "fit.json", filter_name,
              filter_file;
  int components = 4;
  spectrum->add_option("--in", spectrum_in, "spectrum CSV")->required();
  spectrum->add_option("--k", components, "number of Gaussian components");
  spectrum->add_option("--filter", filter_name, "filter preset to apply");
  spectrum->add_option("--filter-config", filter_file,
                       "file with extra filter definitions");
  spectrum->add_option("--out", spectrum_out, "output JSON");

  // g2
  auto *g2 = app.add_subcommand("g2", "correlate a two-channel timestamp file");
  std::string g2_in, g2_out = "g2.json";
  int cha = 0, chb = 1, side_peaks = 10;
  std::int64_t bin_ps = 256;
  double max_lag_ns = 400.0, rep_mhz = 0.0;
  g2->add_option("--in", g2_in, "QTAG timestamp file")->required();
  g2->add_option("--cha", cha, "first detector channel");
  g2->add_option("--chb", chb, "second detector channel");
  g2->add_option("--bin-ps", bin_ps, "bin width in ps");
  g2->add_option("--max-lag-ns", max_lag_ns, "maximum lag in ns");
  g2->add_option("--rep-mhz", rep_mhz,
                 "repetition rate; enables pulsed g2(0) extraction");
  g2->add_option("--side-peaks", side_peaks, "side peaks per side");
  g2->add_option("--out", g2_out, "output JSON");

  // saturation
  auto *saturation = app.add_subcommand("saturation", "fit the power curve");
  std::string sat_in, sat_out = "params.json";
  saturation->add_option("--in", sat_in, "saturation CSV")->required();
  saturation->add_option("--out", sat_out, "output JSON");

  // lifetime
  auto *lifetime = app.add_subcommand("lifetime", "fit the decay histogram");
  std::string lt_in, lt_out = "tau.json";
  int trigger = 2;
  std::int64_t lt_bin_ps = 128;
  lifetime->add_option("--in", lt_in, "QTAG timestamp file")->required();
  lifetime->add_option("--trigger", trigger, "trigger channel");
  lifetime->add_option("--bin-ps", lt_bin_ps, "bin width in ps");
  lifetime->add_option("--out", lt_out, "output JSON");

  // simulate
  auto *simulate = app.add_subcommand("simulate", "generate synthetic data");
  simulate->require_subcommand(1);

  auto *sim_stream = simulate->add_subcommand("stream", "photon timestamps");
  std::string sim_cfg, stream_out = "run.qtag";
  double power_uw = 120.0, duration_s = 1.0;
  std::int64_t seed_override = -1;
  sim_stream->add_option("--config", sim_cfg, "simulator config")->required();
  sim_stream->add_option("--power-uw", power_uw, "excitation power");
  sim_stream->add_option("--duration-s", duration_s, "acquisition time");
  sim_stream->add_option("--seed", seed_override, "override the config seed");
  sim_stream->add_option("--out", stream_out, "output QTAG file");

  auto *sim_scan = simulate->add_subcommand("scan", "confocal scan image");
  int scan_w = 400, scan_h = 400, n_random = 0;
  double pixel_um = 0.2, psf_sigma_um = 0.3, scan_background = 200.0,
         brightness = 4000.0;
  std::uint64_t scan_seed = 1;
  std::string emitters_csv, scan_out = "scan.txt";
  sim_scan->add_option("--width", scan_w, "width in pixels");
  sim_scan->add_option("--height", scan_h, "height in pixels");
  sim_scan->add_option("--pixel-um", pixel_um, "pixel pitch");
  sim_scan->add_option("--psf-sigma-um", psf_sigma_um, "spot sigma");
  sim_scan->add_option("--background", scan_background, "background cps");
  sim_scan->add_option("--emitters", emitters_csv,
                       "CSV of x_um,y_um,brightness_cps");
  sim_scan->add_option("--random", n_random, "place N random emitters");
  sim_scan->add_option("--brightness", brightness,
                       "brightness for random emitters");
  sim_scan->add_option("--seed", scan_seed, "random seed");
  sim_scan->add_option("--out", scan_out, "output scan file");

  auto *sim_spectrum = simulate->add_subcommand("spectrum", "emission spectrum");
  std::string components_csv, sim_spec_out = "spectrum.csv";
  double baseline = 0.02, lo_nm = 600.0, hi_nm = 680.0, step_nm = 0.05;
  std::uint64_t spec_seed = 1, total_counts = 1780000;
  sim_spectrum->add_option("--components", components_csv,
                           "CSV of center_nm,sigma_nm,amplitude "
                           "(default: SnV-like 4-component layout)");
  sim_spectrum->add_option("--baseline", baseline, "baseline level");
  sim_spectrum->add_option("--lo-nm", lo_nm, "grid start");
  sim_spectrum->add_option("--hi-nm", hi_nm, "grid end");
  sim_spectrum->add_option("--step-nm", step_nm, "grid step");
  sim_spectrum->add_option("--total-counts", total_counts, "count budget");
  sim_spectrum->add_option("--seed", spec_seed, "random seed");
  sim_spectrum->add_option("--out", sim_spec_out, "output CSV");

  auto *sim_sat = simulate->add_subcommand("saturation", "power series");
  std::string sat_cfg, sim_sat_out = "sat.csv";
  double sat_lo = 10.0, sat_hi = 3500.0, integration_s = 0.1;
  int sat_n = 30;
  sim_sat->add_option("--config", sat_cfg, "simulator config")->required();
  sim_sat->add_option("--lo-uw", sat_lo, "lowest power");
  sim_sat->add_option("--hi-uw", sat_hi, "highest power");
  sim_sat->add_option("--points", sat_n, "number of log-spaced powers");
  sim_sat->add_option("--integration-s", integration_s, "time per point");
  sim_sat->add_option("--out", sim_sat_out, "output CSV");

  // batch + report
  auto *batch = app.add_subcommand("batch", "run the full pipeline");
  std::string manifest_path, batch_filters = "cfg1,cfg2,cfg3",
              batch_filter_file, batch_out = "report";
  int workers = 1;
  batch->add_option("--manifest", manifest_path, "manifest JSON")->required();
  batch->add_option("--filters", batch_filters, "comma-separated filter names");
  batch->add_option("--filter-config", batch_filter_file,
                    "file with extra filter definitions");
  batch->add_option("--workers", workers, "parallel emitter analyses");
  batch->add_option("--out", batch_out, "report directory");

  auto *report = app.add_subcommand("report", "re-serialize saved records");
  std::string records_path, report_format = "csv",
              report_filters = "cfg1,cfg2,cfg3", report_out = "report";
  report->add_option("--records", records_path, "records JSON")->required();
  report->add_option("--format", report_format, "json or csv");
  report->add_option("--filters", report_filters, "filter names for stats");
  report->add_option("--out", report_out, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*detect)
      return run_detect(scan_path, neighbor_n, factor_a, kernel, detect_out);
    if (*spectrum)
      return run_spectrum(spectrum_in, components, filter_name, filter_file,
                          spectrum_out);
    if (*g2)
      return run_g2(g2_in, cha, chb, bin_ps, max_lag_ns, rep_mhz, side_peaks,
                    g2_out);
    if (*saturation)
      return run_saturation(sat_in, sat_out);
    if (*lifetime)
      return run_lifetime(lt_in, trigger, lt_bin_ps, lt_out);
    if (*sim_stream) {
      auto config = io::read_sim_config(sim_cfg);
      if (seed_override >= 0)
        config.seed = static_cast<std::uint64_t>(seed_override);
      auto record = sim::simulate_stream(config, power_uw, duration_s);
      io::write_qtag(stream_out, record.stream);
      std::cout << record.stream.events.size() << " events ("
                << record.detected_signal_photons << " signal, "
                << record.detected_background_photons << " background, rng "
                << record.rng_name << ") -> " << stream_out << "\n";
      return 0;
    }
    if (*sim_scan) {
      std::vector<sim::ScanEmitter> emitters;
      if (!emitters_csv.empty()) {
        std::ifstream in(emitters_csv);
        if (!in)
          throw InvalidInput("cannot open " + emitters_csv);
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty() || line[0] == '#' || line.rfind("x_um", 0) == 0)
            continue;
          sim::ScanEmitter e;
          if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &e.x_um, &e.y_um,
                          &e.brightness_cps) != 3)
            throw InvalidInput("bad emitter row: " + line);
          emitters.push_back(e);
        }
      }
      sim::CounterRng rng(scan_seed);
      for (int i = 0; i < n_random; ++i) {
        double margin = 12 * pixel_um;
        emitters.push_back(
            {margin + rng.next_double() * (scan_w * pixel_um - 2 * margin),
             margin + rng.next_double() * (scan_h * pixel_um - 2 * margin),
             brightness});
      }
      auto image = sim::simulate_scan(emitters, psf_sigma_um, scan_background,
                                      {scan_w, scan_h, pixel_um},
                                      sim::CounterRng::mix(scan_seed));
      io::write_scan_image(scan_out, image);
      std::cout << emitters.size() << " emitters -> " << scan_out << "\n";
      return 0;
    }
    if (*sim_spectrum) {
      std::vector<spectro::GaussianComponent> comps;
      if (!components_csv.empty()) {
        std::ifstream in(components_csv);
        if (!in)
          throw InvalidInput("cannot open " + components_csv);
        std::string line;
        while (std::getline(in, line)) {
          if (line.empty() || line[0] == '#' || line.rfind("center", 0) == 0)
            continue;
          spectro::GaussianComponent c;
          if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &c.center_nm,
                          &c.sigma_nm, &c.amplitude) != 3)
            throw InvalidInput("bad component row: " + line);
          comps.push_back(c);
        }
      } else {
        comps = {{619.14, 1.7, 1.0},
                 {spectro::wavelength_at_detuning(619.14, 2.5), 1.0, 0.45},
                 {spectro::wavelength_at_detuning(619.14, 17.0), 3.0, 0.40},
                 {spectro::wavelength_at_detuning(619.14, 71.0), 8.0, 0.15}};
      }
      std::vector<double> grid;
      for (double wl = lo_nm; wl <= hi_nm + 1e-9; wl += step_nm)
        grid.push_back(wl);
      auto spec = sim::simulate_spectrum(comps, baseline, grid, total_counts,
                                         spec_seed);
      io::write_spectrum_csv(sim_spec_out, spec);
      std::cout << grid.size() << " samples -> " << sim_spec_out << "\n";
      return 0;
    }
    if (*sim_sat) {
      auto config = io::read_sim_config(sat_cfg);
      auto curve = sim::simulate_saturation(
          config, log_spaced(sat_lo, sat_hi, sat_n), integration_s);
      io::write_saturation_csv(sim_sat_out, curve, integration_s);
      std::cout << curve.points.size() << " points -> " << sim_sat_out << "\n";
      return 0;
    }
    if (*batch)
      return run_batch(manifest_path, batch_filters, batch_filter_file,
                       workers, batch_out);
    if (*report)
      return run_report(records_path, report_format, report_filters,
                        report_out);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
