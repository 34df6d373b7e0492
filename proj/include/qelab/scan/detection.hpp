#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

namespace qelab::scan {

/// 2-D grid of photon count rates with a physical pixel pitch. Row-major;
/// row 0 is the top of the scan, x runs along columns, y along rows.
struct ScanImage {
  int width_px = 0;
  int height_px = 0;
  double pixel_size_um = 0.0;
  std::vector<double> counts; // counts/s, width_px * height_px entries

  double at(int row, int col) const {
    return counts[static_cast<std::size_t>(row) * width_px + col];
  }
  double &at(int row, int col) {
    return counts[static_cast<std::size_t>(row) * width_px + col];
  }

  /// Throws InvalidInput on dimension mismatch, negative counts or pitch.
  void validate() const;
};

using Kernel3x3 = std::array<double, 9>;

/// Separable binomial approximation of a Gaussian: ([1,2,1] x [1,2,1]) / 16.
Kernel3x3 binomial_kernel();

struct DetectionParams {
  int neighbor_distance_n = 10;
  double brightness_factor_a = 2.5;
  Kernel3x3 kernel = binomial_kernel();

  void validate() const;
};

struct PixelMask {
  int width_px = 0;
  int height_px = 0;
  std::vector<std::uint8_t> marked;

  bool at(int row, int col) const {
    return marked[static_cast<std::size_t>(row) * width_px + col] != 0;
  }
  std::size_t marked_count() const;
};

struct EmitterCandidate {
  std::vector<std::pair<int, int>> member_pixels; // (row, col), sorted
  std::pair<int, int> seed_pixel;                 // brightest member
  double seed_brightness = 0.0;                   // smoothed value at seed
  std::pair<double, double> centroid_um;          // (x, y)
};

/// 3x3 kernel-weighted smoothing with edge replication at the borders.
ScanImage smooth(const ScanImage &image, const Kernel3x3 &kernel);

/// Marks pixels at least n from every border whose brightness strictly
/// exceeds a times each of the four nth neighbors (offsets (+-n, 0) and
/// (0, +-n)). Expects an already smoothed image.
PixelMask select_bright_pixels(const ScanImage &smoothed,
                               const DetectionParams &params);

/// Groups marked pixels into 8-connected components. Seeds are the
/// brightest members in the smoothed image (ties resolved to the smallest
/// (row, col)); candidates are ordered by seed (row, col).
std::vector<EmitterCandidate> group_pixels(const PixelMask &mask,
                                           const ScanImage &smoothed);

/// smooth -> select_bright_pixels -> group_pixels.
std::vector<EmitterCandidate> detect(const ScanImage &image,
                                     const DetectionParams &params);

} // namespace qelab::scan
