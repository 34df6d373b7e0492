#include "qelab/pipeline/batch.hpp"

#include "qelab/core/errors.hpp"
#include "qelab/corr/correlation.hpp"
#include "qelab/io/formats.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <thread>

namespace qelab::pipeline {

using nlohmann::json;

namespace {

std::uint64_t fnv1a(const std::string &text) {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

std::string hex64(std::uint64_t v) {
  char buffer[17];
  std::snprintf(buffer, sizeof buffer, "%016llx",
                static_cast<unsigned long long>(v));
  return buffer;
}

std::string fmt6(double v) {
  if (std::isnan(v))
    return "";
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.6g", v);
  return buffer;
}

json read_json_file(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw InvalidInput("cannot open " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception &e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return doc;
}

void write_text_file(const std::filesystem::path &path,
                     const std::string &text) {
  std::ofstream out(path, std::ios::binary); // \n endings everywhere
  if (!out)
    throw InvalidInput("cannot write " + path.string());
  out << text;
  if (!out)
    throw InvalidInput("write failed for " + path.string());
}

} // namespace

Manifest load_manifest(const std::filesystem::path &path) {
  json doc = read_json_file(path);
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&base](const std::string &p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  Manifest manifest;
  try {
    manifest.op_power_uw = doc.value("op_power_uw", 120.0);
    if (doc.contains("rep_rate_mhz"))
      manifest.rep_rate_hz = doc.at("rep_rate_mhz").get<double>() * 1e6;
    for (const auto &entry : doc.at("emitters")) {
      EmitterInputs inputs;
      inputs.id = entry.at("id").get<int>();
      if (entry.contains("position_um")) {
        inputs.position_um = {entry.at("position_um").at(0).get<double>(),
                              entry.at("position_um").at(1).get<double>()};
      }
      if (entry.contains("lifetime_qtag"))
        inputs.lifetime_qtag =
            resolve(entry.at("lifetime_qtag").get<std::string>());
      inputs.trigger_channel = static_cast<std::uint8_t>(
          entry.value("trigger_channel", 2));
      for (const auto &[name, files] : entry.at("filters").items()) {
        FilterInputs fi;
        if (files.contains("spectrum_csv"))
          fi.spectrum_csv = resolve(files.at("spectrum_csv").get<std::string>());
        if (files.contains("g2_qtag"))
          fi.g2_qtag = resolve(files.at("g2_qtag").get<std::string>());
        if (files.contains("saturation_csv"))
          fi.saturation_csv =
              resolve(files.at("saturation_csv").get<std::string>());
        inputs.filters[name] = fi;
      }
      manifest.emitters.push_back(std::move(inputs));
    }
  } catch (const json::exception &e) {
    throw InvalidInput(path.string() + ": manifest schema error: " + e.what());
  }
  return manifest;
}

std::string BatchConfig::hash() const {
  std::ostringstream ss;
  ss.precision(17);
  for (const auto &[name, filter] : filters) {
    ss << name << ':';
    for (const auto &[lo, hi] : filter.passbands)
      ss << lo << '-' << hi << ';';
    ss << filter.peak_transmission << '|';
  }
  for (const auto &name : filter_names)
    ss << name << ',';
  ss << op_power_uw << '|' << rep_rate_hz << '|' << spectrum_components << '|'
     << g2_bin_width_ps << '|' << g2_side_peaks << '|'
     << int(g2_channel_a) << '|' << int(g2_channel_b) << '|'
     << lifetime_bin_width_ps;
  return hex64(fnv1a(ss.str()));
}

bool EmitterRecord::complete() const {
  if (!provenance.errors.empty())
    return false;
  for (const auto &[name, result] : per_filter)
    if (!result.errors.empty())
      return false;
  return true;
}

namespace {

std::int64_t g2_max_lag(const BatchConfig &config) {
  double period_ps = 1e12 / config.rep_rate_hz;
  auto bins = static_cast<std::int64_t>(
      std::ceil((config.g2_side_peaks + 0.5) * period_ps /
                static_cast<double>(config.g2_bin_width_ps)));
  return (bins + 2) * config.g2_bin_width_ps;
}

EmitterRecord analyze_emitter(const EmitterInputs &inputs,
                              const BatchConfig &config,
                              const std::string &config_hash) {
  EmitterRecord record;
  record.id = inputs.id;
  record.position_um = inputs.position_um;
  record.provenance.config_hash = config_hash;

  auto note_file = [&record](const std::filesystem::path &p) {
    if (!p.empty())
      record.provenance.input_files.push_back(p.string());
  };

  for (const auto &name : config.filter_names) {
    auto it = inputs.filters.find(name);
    if (it == inputs.filters.end())
      continue; // nothing measured under this filter
    const FilterInputs &files = it->second;
    FilterResult &result = record.per_filter[name];

    if (!files.spectrum_csv.empty()) {
      note_file(files.spectrum_csv);
      try {
        spectro::Spectrum spectrum = io::read_spectrum_csv(files.spectrum_csv);
        spectro::SpectralFit fit =
            spectro::fit_multi_gaussian(spectrum, config.spectrum_components);
        result.zpl_nm = fit.components[fit.zpl_index].center_nm;
        result.spectral_fit = std::move(fit);
      } catch (const std::exception &e) {
        result.errors.push_back(std::string("spectrum: ") + e.what());
      }
    }

    if (!files.g2_qtag.empty()) {
      note_file(files.g2_qtag);
      try {
        corr::TimestampStream stream = io::read_qtag(files.g2_qtag);
        corr::G2Histogram hist =
            corr::compute_g2(stream, config.g2_channel_a, config.g2_channel_b,
                             config.g2_bin_width_ps, g2_max_lag(config));
        corr::G2Result g2 = corr::g2_zero_pulsed(hist, config.rep_rate_hz,
                                                 config.g2_side_peaks);
        result.g2_zero = g2.g2_zero;
      } catch (const std::exception &e) {
        result.errors.push_back(std::string("g2: ") + e.what());
      }
    }

    if (!files.saturation_csv.empty()) {
      note_file(files.saturation_csv);
      try {
        photo::SaturationCurve curve =
            io::read_saturation_csv(files.saturation_csv);
        photo::SaturationFitResult fit = photo::fit_saturation(curve);
        result.rate_at_op_power_cps =
            photo::eval_saturation(fit.params, config.op_power_uw);
        result.saturation = std::move(fit);
      } catch (const std::exception &e) {
        result.errors.push_back(std::string("saturation: ") + e.what());
      }
    }
  }

  if (!inputs.lifetime_qtag.empty()) {
    note_file(inputs.lifetime_qtag);
    try {
      corr::TimestampStream stream = io::read_qtag(inputs.lifetime_qtag);
      photo::DecayHistogram hist = photo::build_decay_histogram(
          stream, inputs.trigger_channel, config.lifetime_bin_width_ps);
      record.lifetime_ns = photo::fit_lifetime(hist).tau_ns;
    } catch (const std::exception &e) {
      record.provenance.errors.push_back(std::string("lifetime: ") + e.what());
    }
  }
  return record;
}

} // namespace

std::vector<EmitterRecord> run_pipeline(const Manifest &manifest,
                                        const BatchConfig &config) {
  for (const auto &name : config.filter_names)
    if (config.filters.find(name) == config.filters.end())
      throw InvalidInput("filter configuration not declared: " + name);

  const std::string config_hash = config.hash();
  std::vector<EmitterRecord> records(manifest.emitters.size());

  const int worker_count =
      std::max(1, std::min<int>(config.workers,
                                static_cast<int>(manifest.emitters.size())));
  if (worker_count <= 1) {
    for (std::size_t i = 0; i < manifest.emitters.size(); ++i)
      records[i] = analyze_emitter(manifest.emitters[i], config, config_hash);
  } else {
    std::atomic<std::size_t> next{0};
    auto work = [&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= manifest.emitters.size())
          return;
        records[i] =
            analyze_emitter(manifest.emitters[i], config, config_hash);
      }
    };
    std::vector<std::thread> threads;
    threads.reserve(worker_count);
    for (int t = 0; t < worker_count; ++t)
      threads.emplace_back(work);
    for (auto &thread : threads)
      thread.join();
  }

  std::sort(records.begin(), records.end(),
            [](const EmitterRecord &lhs, const EmitterRecord &rhs) {
              return lhs.id < rhs.id;
            });
  return records;
}

namespace {

SummaryStats summarize(std::vector<double> values) {
  SummaryStats stats;
  stats.n = static_cast<int>(values.size());
  if (values.empty())
    return stats;
  std::sort(values.begin(), values.end());
  auto quantile = [&values](double p) {
    // Type-7: linear interpolation between order statistics.
    double h = (static_cast<double>(values.size()) - 1.0) * p;
    std::size_t lo = static_cast<std::size_t>(h);
    double frac = h - static_cast<double>(lo);
    if (lo + 1 < values.size())
      return values[lo] + frac * (values[lo + 1] - values[lo]);
    return values[lo];
  };
  stats.min = values.front();
  stats.max = values.back();
  stats.q1 = quantile(0.25);
  stats.median = quantile(0.5);
  stats.q3 = quantile(0.75);
  double sum = 0.0;
  for (double v : values)
    sum += v;
  stats.mean = sum / static_cast<double>(values.size());
  return stats;
}

} // namespace

BatchStats aggregate_stats(const std::vector<EmitterRecord> &records,
                           const std::vector<std::string> &filter_names) {
  if (records.empty() || filter_names.empty())
    throw DegenerateData("no records to aggregate");

  BatchStats stats;
  stats.n_emitters = static_cast<int>(records.size());
  stats.zpl_source_filter = filter_names.front();

  for (double edge = 600.0; edge <= 680.0 + 1e-9; edge += 2.0)
    stats.zpl_bin_edges_nm.push_back(edge);
  stats.zpl_counts.assign(stats.zpl_bin_edges_nm.size() - 1, 0);

  bool any_valid = false;
  for (const auto &record : records) {
    auto it = record.per_filter.find(stats.zpl_source_filter);
    if (it == record.per_filter.end() || !it->second.zpl_nm)
      continue;
    any_valid = true;
    double zpl = *it->second.zpl_nm;
    if (zpl >= 600.0 && zpl < 680.0)
      stats.zpl_counts[static_cast<std::size_t>((zpl - 600.0) / 2.0)] += 1;
    else
      stats.zpl_overflow += 1;
  }

  for (const auto &name : filter_names) {
    std::vector<double> g2_values;
    std::vector<double> rinf_values;
    int singles = 0;
    for (const auto &record : records) {
      auto it = record.per_filter.find(name);
      if (it == record.per_filter.end())
        continue;
      if (it->second.g2_zero) {
        g2_values.push_back(*it->second.g2_zero);
        if (*it->second.g2_zero < 0.5)
          ++singles;
      }
      if (it->second.saturation)
        rinf_values.push_back(it->second.saturation->params.r_inf_cps);
    }
    if (!g2_values.empty() || !rinf_values.empty())
      any_valid = true;
    stats.g2_summary[name] = summarize(std::move(g2_values));
    stats.rinf_summary[name] = summarize(std::move(rinf_values));
    stats.n_single[name] = singles;
  }

  if (!any_valid)
    throw DegenerateData("no record carries a valid result");
  return stats;
}

namespace {

json component_to_json(const spectro::GaussianComponent &c) {
  return json{{"center_nm", c.center_nm},
              {"sigma_nm", c.sigma_nm},
              {"amplitude", c.amplitude}};
}

json spectral_fit_to_json(const spectro::SpectralFit &fit) {
  json components = json::array();
  for (const auto &c : fit.components)
    components.push_back(component_to_json(c));
  json j{{"components", components},
         {"baseline", fit.baseline},
         {"zpl_index", fit.zpl_index},
         {"fitted_fwhm_nm", fit.fitted_fwhm_nm},
         {"residual_rms", fit.residual_rms}};
  if (std::isnan(fit.direct_fwhm_nm))
    j["direct_fwhm_nm"] = nullptr;
  else
    j["direct_fwhm_nm"] = fit.direct_fwhm_nm;
  return j;
}

spectro::SpectralFit spectral_fit_from_json(const json &j) {
  spectro::SpectralFit fit;
  for (const auto &c : j.at("components"))
    fit.components.push_back({c.at("center_nm").get<double>(),
                              c.at("sigma_nm").get<double>(),
                              c.at("amplitude").get<double>()});
  fit.baseline = j.at("baseline").get<double>();
  fit.zpl_index = j.at("zpl_index").get<int>();
  fit.fitted_fwhm_nm = j.at("fitted_fwhm_nm").get<double>();
  fit.direct_fwhm_nm = j.at("direct_fwhm_nm").is_null()
                           ? std::nan("")
                           : j.at("direct_fwhm_nm").get<double>();
  fit.residual_rms = j.at("residual_rms").get<double>();
  return fit;
}

json saturation_params_to_json(const photo::SaturationParams &p) {
  return json{{"r_inf_cps", p.r_inf_cps},
              {"p_sat_uw", p.p_sat_uw},
              {"c_sh", p.c_sh},
              {"p_sh_uw", p.p_sh_uw},
              {"c_bg_cps_per_uw", p.c_bg_cps_per_uw}};
}

photo::SaturationParams saturation_params_from_json(const json &j) {
  photo::SaturationParams p;
  p.r_inf_cps = j.at("r_inf_cps").get<double>();
  p.p_sat_uw = j.at("p_sat_uw").get<double>();
  p.c_sh = j.at("c_sh").get<double>();
  p.p_sh_uw = j.at("p_sh_uw").get<double>();
  p.c_bg_cps_per_uw = j.at("c_bg_cps_per_uw").get<double>();
  return p;
}

json saturation_to_json(const photo::SaturationFitResult &fit) {
  return json{{"params", saturation_params_to_json(fit.params)},
              {"std_errors", saturation_params_to_json(fit.std_errors)},
              {"shelving_ratio_per_uw", fit.shelving_ratio_per_uw},
              {"residual_rms_cps", fit.residual_rms_cps},
              {"reduced_chi2", fit.reduced_chi2},
              {"note", "c_sh and p_sh are degenerate; only c_sh/p_sh is "
                       "identified and p_sh is reported at its fixed value"}};
}

photo::SaturationFitResult saturation_from_json(const json &j) {
  photo::SaturationFitResult fit;
  fit.params = saturation_params_from_json(j.at("params"));
  fit.std_errors = saturation_params_from_json(j.at("std_errors"));
  fit.shelving_ratio_per_uw = j.at("shelving_ratio_per_uw").get<double>();
  fit.residual_rms_cps = j.at("residual_rms_cps").get<double>();
  fit.reduced_chi2 = j.at("reduced_chi2").get<double>();
  return fit;
}

json record_to_json(const EmitterRecord &record) {
  json per_filter = json::object();
  for (const auto &[name, result] : record.per_filter) {
    json r = json::object();
    r["zpl_nm"] = result.zpl_nm ? json(*result.zpl_nm) : json(nullptr);
    r["g2_zero"] = result.g2_zero ? json(*result.g2_zero) : json(nullptr);
    r["rate_at_op_power_cps"] = result.rate_at_op_power_cps
                                    ? json(*result.rate_at_op_power_cps)
                                    : json(nullptr);
    r["spectral_fit"] = result.spectral_fit
                            ? spectral_fit_to_json(*result.spectral_fit)
                            : json(nullptr);
    r["saturation"] = result.saturation
                          ? saturation_to_json(*result.saturation)
                          : json(nullptr);
    r["errors"] = result.errors;
    per_filter[name] = std::move(r);
  }
  return json{
      {"id", record.id},
      {"position_um", {record.position_um.first, record.position_um.second}},
      {"lifetime_ns",
       record.lifetime_ns ? json(*record.lifetime_ns) : json(nullptr)},
      {"per_filter", per_filter},
      {"provenance",
       {{"input_files", record.provenance.input_files},
        {"config_hash", record.provenance.config_hash},
        {"errors", record.provenance.errors}}}};
}

EmitterRecord record_from_json(const json &j) {
  EmitterRecord record;
  record.id = j.at("id").get<int>();
  record.position_um = {j.at("position_um").at(0).get<double>(),
                        j.at("position_um").at(1).get<double>()};
  if (!j.at("lifetime_ns").is_null())
    record.lifetime_ns = j.at("lifetime_ns").get<double>();
  for (const auto &[name, r] : j.at("per_filter").items()) {
    FilterResult result;
    if (!r.at("zpl_nm").is_null())
      result.zpl_nm = r.at("zpl_nm").get<double>();
    if (!r.at("g2_zero").is_null())
      result.g2_zero = r.at("g2_zero").get<double>();
    if (!r.at("rate_at_op_power_cps").is_null())
      result.rate_at_op_power_cps = r.at("rate_at_op_power_cps").get<double>();
    if (!r.at("spectral_fit").is_null())
      result.spectral_fit = spectral_fit_from_json(r.at("spectral_fit"));
    if (!r.at("saturation").is_null())
      result.saturation = saturation_from_json(r.at("saturation"));
    result.errors = r.at("errors").get<std::vector<std::string>>();
    record.per_filter[name] = std::move(result);
  }
  const json &prov = j.at("provenance");
  record.provenance.input_files =
      prov.at("input_files").get<std::vector<std::string>>();
  record.provenance.config_hash = prov.at("config_hash").get<std::string>();
  record.provenance.errors =
      prov.at("errors").get<std::vector<std::string>>();
  return record;
}

json stats_to_json(const BatchStats &stats) {
  auto summary_to_json = [](const SummaryStats &s) {
    return json{{"n", s.n},       {"min", s.min}, {"q1", s.q1},
                {"median", s.median}, {"q3", s.q3},  {"max", s.max},
                {"mean", s.mean}};
  };
  json g2 = json::object(), rinf = json::object(), singles = json::object();
  for (const auto &[name, s] : stats.g2_summary)
    g2[name] = summary_to_json(s);
  for (const auto &[name, s] : stats.rinf_summary)
    rinf[name] = summary_to_json(s);
  for (const auto &[name, n] : stats.n_single)
    singles[name] = n;
  return json{{"n_emitters", stats.n_emitters},
              {"zpl_histogram",
               {{"bin_edges_nm", stats.zpl_bin_edges_nm},
                {"counts", stats.zpl_counts},
                {"overflow", stats.zpl_overflow},
                {"source_filter", stats.zpl_source_filter}}},
              {"g2_summary", g2},
              {"rinf_summary", rinf},
              {"n_single", singles}};
}

std::string records_csv(const std::vector<EmitterRecord> &records) {
  std::ostringstream out;
  out << "emitter_id,filter,x_um,y_um,lifetime_ns,zpl_nm,fitted_fwhm_nm,"
         "g2_zero,r_inf_cps,p_sat_uw,c_sh,p_sh_uw,c_bg_cps_per_uw,"
         "rate_at_op_power_cps,status\n";
  for (const auto &record : records) {
    for (const auto &[name, result] : record.per_filter) {
      out << record.id << ',' << name << ','
          << fmt6(record.position_um.first) << ','
          << fmt6(record.position_um.second) << ','
          << (record.lifetime_ns ? fmt6(*record.lifetime_ns) : "") << ','
          << (result.zpl_nm ? fmt6(*result.zpl_nm) : "") << ','
          << (result.spectral_fit ? fmt6(result.spectral_fit->fitted_fwhm_nm)
                                  : "")
          << ',' << (result.g2_zero ? fmt6(*result.g2_zero) : "") << ',';
      if (result.saturation) {
        const auto &p = result.saturation->params;
        out << fmt6(p.r_inf_cps) << ',' << fmt6(p.p_sat_uw) << ','
            << fmt6(p.c_sh) << ',' << fmt6(p.p_sh_uw) << ','
            << fmt6(p.c_bg_cps_per_uw);
      } else {
        out << ",,,,";
      }
      out << ','
          << (result.rate_at_op_power_cps ? fmt6(*result.rate_at_op_power_cps)
                                          : "")
          << ',' << (result.errors.empty() ? "ok" : "failed") << '\n';
    }
  }
  return out.str();
}

std::string zpl_histogram_csv(const BatchStats &stats) {
  std::ostringstream out;
  out << "bin_low_nm,bin_high_nm,count\n";
  for (std::size_t i = 0; i < stats.zpl_counts.size(); ++i)
    out << fmt6(stats.zpl_bin_edges_nm[i]) << ','
        << fmt6(stats.zpl_bin_edges_nm[i + 1]) << ',' << stats.zpl_counts[i]
        << '\n';
  return out.str();
}

std::string boxplot_csv(const std::map<std::string, SummaryStats> &summary) {
  std::ostringstream out;
  out << "filter,n,min,q1,median,q3,max,mean\n";
  for (const auto &[name, s] : summary)
    out << name << ',' << s.n << ',' << fmt6(s.min) << ',' << fmt6(s.q1)
        << ',' << fmt6(s.median) << ',' << fmt6(s.q3) << ',' << fmt6(s.max)
        << ',' << fmt6(s.mean) << '\n';
  return out.str();
}

} // namespace

void emit_report(const std::vector<EmitterRecord> &records,
                 const BatchStats &stats,
                 const std::filesystem::path &out_dir, ReportFormat format) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec && !std::filesystem::is_directory(out_dir))
    throw InvalidInput("cannot create report directory " + out_dir.string());

  if (format == ReportFormat::Json) {
    json all = json::array();
    for (const auto &record : records)
      all.push_back(record_to_json(record));
    write_text_file(out_dir / "records.json", all.dump(2) + "\n");
    write_text_file(out_dir / "stats.json", stats_to_json(stats).dump(2) + "\n");
  } else {
    write_text_file(out_dir / "records.csv", records_csv(records));
    write_text_file(out_dir / "zpl_histogram.csv", zpl_histogram_csv(stats));
    write_text_file(out_dir / "g2_boxplot.csv", boxplot_csv(stats.g2_summary));
    write_text_file(out_dir / "rinf_boxplot.csv",
                    boxplot_csv(stats.rinf_summary));
  }
}

void save_records_json(const std::vector<EmitterRecord> &records,
                       const std::filesystem::path &path) {
  json all = json::array();
  for (const auto &record : records)
    all.push_back(record_to_json(record));
  write_text_file(path, all.dump(2) + "\n");
}

std::vector<EmitterRecord>
load_records_json(const std::filesystem::path &path) {
  json doc = read_json_file(path);
  std::vector<EmitterRecord> records;
  try {
    for (const auto &j : doc)
      records.push_back(record_from_json(j));
  } catch (const json::exception &e) {
    throw InvalidInput(path.string() + ": records schema error: " + e.what());
  }
  return records;
}

} // namespace qelab::pipeline
