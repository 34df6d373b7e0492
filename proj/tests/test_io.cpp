#include "qelab/io/formats.hpp"

#include "qelab/core/errors.hpp"
#include "qelab/sim/random.hpp"
#include "helpers.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace qelab;

namespace {

std::filesystem::path temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "qelab_io_tests";
  std::filesystem::create_directories(dir);
  return dir;
}

} // namespace

TEST_CASE("qtag files round-trip") {
  sim::CounterRng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    auto stream = test::random_stream(rng, 200, 1000000);
    auto path = temp_dir() / "roundtrip.qtag";
    io::write_qtag(path, stream);
    auto loaded = io::read_qtag(path);
    CHECK(loaded.duration_ps == stream.duration_ps);
    REQUIRE(loaded.events.size() == stream.events.size());
    for (std::size_t i = 0; i < stream.events.size(); ++i) {
      CHECK(loaded.events[i].channel == stream.events[i].channel);
      CHECK(loaded.events[i].time_ps == stream.events[i].time_ps);
    }
    CHECK(loaded.channel_ids == stream.channel_ids);
  }
}

TEST_CASE("qtag rejects corrupt files") {
  auto path = temp_dir() / "bad.qtag";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE then some bytes";
  }
  CHECK_THROWS_AS(io::read_qtag(path), InvalidInput);

  // Truncated record: header plus half an event.
  {
    sim::CounterRng rng(1);
    auto stream = test::random_stream(rng, 4, 1000);
    io::write_qtag(path, stream);
    auto size = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, size - 3);
  }
  CHECK_THROWS_AS(io::read_qtag(path), InvalidInput);
  CHECK_THROWS_AS(io::read_qtag(temp_dir() / "missing.qtag"), InvalidInput);
}

TEST_CASE("scan images round-trip through the text format") {
  scan::ScanImage image;
  image.width_px = 3;
  image.height_px = 2;
  image.pixel_size_um = 0.2;
  image.counts = {1.5, 0.0, 3.25, 4.0, 5.5, 6.125};
  auto path = temp_dir() / "image.scan";
  io::write_scan_image(path, image);
  auto loaded = io::read_scan_image(path);
  CHECK(loaded.width_px == 3);
  CHECK(loaded.height_px == 2);
  CHECK(loaded.pixel_size_um == doctest::Approx(0.2));
  CHECK(loaded.counts == image.counts);
}

TEST_CASE("scan reader rejects malformed headers and grids") {
  auto path = temp_dir() / "bad.scan";
  {
    std::ofstream out(path);
    out << "width=3 height=2\n1 2 3\n4 5 6\n";
  }
  CHECK_THROWS_AS(io::read_scan_image(path), InvalidInput);
  {
    std::ofstream out(path);
    out << "# scan width=3 height=2 pixel_um=0.2\n1 2 3\n4 5\n";
  }
  CHECK_THROWS_AS(io::read_scan_image(path), InvalidInput);
}

TEST_CASE("spectrum CSV round-trips") {
  spectro::Spectrum spectrum;
  for (int i = 0; i < 16; ++i) {
    spectrum.wavelengths_nm.push_back(600.0 + 0.5 * i);
    spectrum.intensities.push_back(10.0 * i);
  }
  auto path = temp_dir() / "spec.csv";
  io::write_spectrum_csv(path, spectrum);
  auto loaded = io::read_spectrum_csv(path);
  CHECK(loaded.wavelengths_nm == spectrum.wavelengths_nm);
  CHECK(loaded.intensities == spectrum.intensities);

  std::ofstream(path) << "lambda,counts\n600,1\n";
  CHECK_THROWS_AS(io::read_spectrum_csv(path), InvalidInput);
}

TEST_CASE("saturation CSV synthesizes Poisson errors when absent") {
  auto path = temp_dir() / "sat.csv";
  {
    std::ofstream out(path);
    out << "# integration_s=4\n";
    out << "power_uw,rate_cps\n";
    for (int i = 1; i <= 8; ++i)
      out << i * 100.0 << ',' << i * 10000.0 << '\n';
  }
  auto curve = io::read_saturation_csv(path);
  REQUIRE(curve.points.size() == 8);
  CHECK(curve.points[0].rate_err_cps ==
        doctest::Approx(std::sqrt(10000.0 / 4.0)));

  photo::SaturationCurve explicit_errors;
  for (int i = 1; i <= 8; ++i)
    explicit_errors.points.push_back({i * 100.0, i * 1e4, 55.5});
  io::write_saturation_csv(path, explicit_errors);
  auto loaded = io::read_saturation_csv(path);
  CHECK(loaded.points[3].rate_err_cps == doctest::Approx(55.5));
}

TEST_CASE("simulator configs round-trip through key=value text") {
  sim::SimEmitterConfig config;
  config.lifetime_ns = 5.87;
  config.shelving_branch = 0.25;
  config.seed = 987654321;
  auto path = temp_dir() / "sim.cfg";
  io::write_sim_config(path, config);
  auto loaded = io::read_sim_config(path);
  CHECK(loaded.lifetime_ns == config.lifetime_ns);
  CHECK(loaded.shelving_branch == config.shelving_branch);
  CHECK(loaded.seed == config.seed);

  std::ofstream(path) << "lifetime_ns=5\nnot_a_key=3\n";
  CHECK_THROWS_AS(io::read_sim_config(path), InvalidInput);
}

TEST_CASE("filter config files extend the presets") {
  auto path = temp_dir() / "filters.cfg";
  std::ofstream(path) << "filter.cfg4 = [[600,650],[660,670]], "
                         "transmission=0.8\n";
  auto filters = io::read_filter_config(path);
  CHECK(filters.count("cfg1") == 1);
  CHECK(filters.count("cfg3") == 1);
  REQUIRE(filters.count("cfg4") == 1);
  CHECK(filters["cfg4"].passbands.size() == 2);
  CHECK(filters["cfg4"].passbands[1].first == doctest::Approx(660.0));
  CHECK(filters["cfg4"].peak_transmission == doctest::Approx(0.8));
}
