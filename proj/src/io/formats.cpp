#include "qelab/io/formats.hpp"

#include "qelab/core/errors.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace qelab::io {

namespace {

void put_u16(std::ostream &out, std::uint16_t v) {
  std::array<char, 2> b{static_cast<char>(v & 0xFF),
                        static_cast<char>((v >> 8) & 0xFF)};
  out.write(b.data(), b.size());
}

void put_u64(std::ostream &out, std::uint64_t v) {
  std::array<char, 8> b;
  for (int i = 0; i < 8; ++i)
    b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

std::uint16_t get_u16(std::istream &in) {
  std::array<unsigned char, 2> b;
  in.read(reinterpret_cast<char *>(b.data()), b.size());
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint64_t get_u64(std::istream &in) {
  std::array<unsigned char, 8> b;
  in.read(reinterpret_cast<char *>(b.data()), b.size());
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | b[i];
  return v;
}

std::ifstream open_input(const std::filesystem::path &path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in)
    throw InvalidInput("cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path &path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out)
    throw InvalidInput("cannot write " + path.string());
  return out;
}

} // namespace

void write_qtag(const std::filesystem::path &path,
                const corr::TimestampStream &stream) {
  std::ofstream out = open_output(path, true);
  out.write("QTAG", 4);
  put_u16(out, 1);
  put_u16(out, static_cast<std::uint16_t>(stream.channel_ids.size()));
  put_u64(out, stream.duration_ps);
  for (const auto &event : stream.events) {
    out.put(static_cast<char>(event.channel));
    put_u64(out, event.time_ps);
  }
  if (!out)
    throw InvalidInput("write failed for " + path.string());
}

corr::TimestampStream read_qtag(const std::filesystem::path &path) {
  std::ifstream in = open_input(path, true);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "QTAG", 4) != 0)
    throw InvalidInput(path.string() + ": not a QTAG file");
  std::uint16_t version = get_u16(in);
  if (version != 1)
    throw InvalidInput(path.string() + ": unsupported QTAG version");
  std::uint16_t channel_count = get_u16(in);
  corr::TimestampStream stream;
  stream.duration_ps = get_u64(in);
  if (!in)
    throw InvalidInput(path.string() + ": truncated QTAG header");
  for (;;) {
    int c = in.get();
    if (c == EOF)
      break;
    corr::TimestampEvent event;
    event.channel = static_cast<std::uint8_t>(c);
    event.time_ps = get_u64(in);
    if (!in)
      throw InvalidInput(path.string() + ": truncated QTAG record");
    stream.events.push_back(event);
  }
  stream.refresh_channels();
  if (stream.channel_ids.size() != channel_count)
    throw InvalidInput(path.string() + ": channel count mismatch");
  stream.validate();
  return stream;
}

void write_scan_image(const std::filesystem::path &path,
                      const scan::ScanImage &image) {
  image.validate();
  std::ofstream out = open_output(path, false);
  out << "# scan width=" << image.width_px << " height=" << image.height_px
      << " pixel_um=" << image.pixel_size_um << "\n";
  out.precision(10);
  for (int r = 0; r < image.height_px; ++r) {
    for (int c = 0; c < image.width_px; ++c) {
      if (c)
        out << ' ';
      out << image.at(r, c);
    }
    out << '\n';
  }
}

scan::ScanImage read_scan_image(const std::filesystem::path &path) {
  std::ifstream in = open_input(path, false);
  std::string header;
  std::getline(in, header);
  scan::ScanImage image;
  if (std::sscanf(header.c_str(), "# scan width=%d height=%d pixel_um=%lf",
                  &image.width_px, &image.height_px,
                  &image.pixel_size_um) != 3)
    throw InvalidInput(path.string() + ": bad scan header");
  if (image.width_px <= 0 || image.height_px <= 0)
    throw InvalidInput(path.string() + ": bad scan dimensions");
  image.counts.reserve(static_cast<std::size_t>(image.width_px) *
                       image.height_px);
  double value;
  while (in >> value)
    image.counts.push_back(value);
  if (image.counts.size() !=
      static_cast<std::size_t>(image.width_px) * image.height_px)
    throw InvalidInput(path.string() + ": scan grid size mismatch");
  image.validate();
  return image;
}

void write_spectrum_csv(const std::filesystem::path &path,
                        const spectro::Spectrum &spectrum) {
  std::ofstream out = open_output(path, false);
  out << "wavelength_nm,counts\n";
  out.precision(10);
  for (std::size_t i = 0; i < spectrum.wavelengths_nm.size(); ++i)
    out << spectrum.wavelengths_nm[i] << ',' << spectrum.intensities[i]
        << '\n';
}

spectro::Spectrum read_spectrum_csv(const std::filesystem::path &path) {
  std::ifstream in = open_input(path, false);
  std::string line;
  if (!std::getline(in, line) || line.rfind("wavelength_nm,counts", 0) != 0)
    throw InvalidInput(path.string() + ": missing spectrum CSV header");
  spectro::Spectrum spectrum;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#')
      continue;
    double wavelength, counts;
    if (std::sscanf(line.c_str(), "%lf,%lf", &wavelength, &counts) != 2)
      throw InvalidInput(path.string() + ": bad spectrum row: " + line);
    spectrum.wavelengths_nm.push_back(wavelength);
    spectrum.intensities.push_back(counts);
  }
  spectrum.validate();
  return spectrum;
}

void write_saturation_csv(const std::filesystem::path &path,
                          const photo::SaturationCurve &curve,
                          double integration_s) {
  std::ofstream out = open_output(path, false);
  if (integration_s > 0.0)
    out << "# integration_s=" << integration_s << "\n";
  out << "power_uw,rate_cps,rate_err_cps\n";
  out.precision(10);
  for (const auto &pt : curve.points)
    out << pt.power_uw << ',' << pt.rate_cps << ',' << pt.rate_err_cps
        << '\n';
}

photo::SaturationCurve read_saturation_csv(const std::filesystem::path &path) {
  std::ifstream in = open_input(path, false);
  photo::SaturationCurve curve;
  double integration_s = 1.0;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty())
      continue;
    if (line[0] == '#') {
      double t;
      if (std::sscanf(line.c_str(), "# integration_s=%lf", &t) == 1)
        integration_s = t;
      continue;
    }
    if (!header_seen && line.rfind("power_uw", 0) == 0) {
      header_seen = true;
      continue;
    }
    photo::SaturationPoint pt;
    int fields = std::sscanf(line.c_str(), "%lf,%lf,%lf", &pt.power_uw,
                             &pt.rate_cps, &pt.rate_err_cps);
    if (fields == 2) {
      // Synthesized Poisson error from the per-point integration time.
      pt.rate_err_cps =
          std::sqrt(std::max(pt.rate_cps, 1.0) / integration_s);
    } else if (fields != 3) {
      throw InvalidInput(path.string() + ": bad saturation row: " + line);
    }
    curve.points.push_back(pt);
  }
  curve.validate();
  return curve;
}

void write_sim_config(const std::filesystem::path &path,
                      const sim::SimEmitterConfig &config) {
  std::ofstream out = open_output(path, false);
  out.precision(17);
  out << "lifetime_ns=" << config.lifetime_ns << "\n"
      << "p_sat_sim_uw=" << config.p_sat_sim_uw << "\n"
      << "shelving_branch=" << config.shelving_branch << "\n"
      << "shelf_lifetime_ns=" << config.shelf_lifetime_ns << "\n"
      << "rep_rate_hz=" << config.rep_rate_hz << "\n"
      << "collection_efficiency=" << config.collection_efficiency << "\n"
      << "background_cps_per_uw=" << config.background_cps_per_uw << "\n"
      << "splitter_ratio=" << config.splitter_ratio << "\n"
      << "jitter_ps_rms=" << config.jitter_ps_rms << "\n"
      << "seed=" << config.seed << "\n";
}

sim::SimEmitterConfig read_sim_config(const std::filesystem::path &path) {
  std::ifstream in = open_input(path, false);
  sim::SimEmitterConfig config;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#')
      continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput(path.string() + ": bad config line " +
                         std::to_string(line_number));
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    try {
      if (key == "lifetime_ns")
        config.lifetime_ns = std::stod(value);
      else if (key == "p_sat_sim_uw")
        config.p_sat_sim_uw = std::stod(value);
      else if (key == "shelving_branch")
        config.shelving_branch = std::stod(value);
      else if (key == "shelf_lifetime_ns")
        config.shelf_lifetime_ns = std::stod(value);
      else if (key == "rep_rate_hz")
        config.rep_rate_hz = std::stod(value);
      else if (key == "collection_efficiency")
        config.collection_efficiency = std::stod(value);
      else if (key == "background_cps_per_uw")
        config.background_cps_per_uw = std::stod(value);
      else if (key == "splitter_ratio")
        config.splitter_ratio = std::stod(value);
      else if (key == "jitter_ps_rms")
        config.jitter_ps_rms = std::stod(value);
      else if (key == "seed")
        config.seed = std::stoull(value);
      else
        throw InvalidInput(path.string() + ": unknown config key " + key);
    } catch (const std::invalid_argument &) {
      throw InvalidInput(path.string() + ": bad value for " + key);
    }
  }
  config.validate();
  return config;
}

std::map<std::string, spectro::FilterConfig>
read_filter_config(const std::filesystem::path &path) {
  std::map<std::string, spectro::FilterConfig> filters =
      spectro::preset_filters();
  std::ifstream in = open_input(path, false);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty() || line[0] == '#')
      continue;
    if (line.rfind("filter.", 0) != 0)
      throw InvalidInput(path.string() + ": bad filter line " +
                         std::to_string(line_number));
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput(path.string() + ": bad filter line " +
                         std::to_string(line_number));
    std::string name = line.substr(7, eq - 7);
    while (!name.empty() && name.back() == ' ')
      name.pop_back();

    spectro::FilterConfig filter;
    std::string rest = line.substr(eq + 1);
    auto t_pos = rest.find("transmission=");
    filter.peak_transmission =
        t_pos == std::string::npos ? 1.0 : std::stod(rest.substr(t_pos + 13));

    // Passband list: pairs of numbers inside brackets.
    std::string bands = rest.substr(0, t_pos);
    std::istringstream bs(bands);
    std::vector<double> numbers;
    char ch;
    while (bs.get(ch)) {
      if ((ch >= '0' && ch <= '9') || ch == '.' || ch == '-' || ch == '+') {
        bs.unget();
        double v;
        bs >> v;
        numbers.push_back(v);
      }
    }
    if (numbers.empty() || numbers.size() % 2 != 0)
      throw InvalidInput(path.string() + ": filter " + name +
                         " needs [low,high] pairs");
    for (std::size_t i = 0; i < numbers.size(); i += 2)
      filter.passbands.emplace_back(numbers[i], numbers[i + 1]);
    filter.validate();
    filters[name] = filter;
  }
  return filters;
}

} // namespace qelab::io
