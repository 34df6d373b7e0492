#include "qelab/scan/detection.hpp"

#include "qelab/core/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace qelab::scan {

void ScanImage::validate() const {
  if (width_px <= 0 || height_px <= 0)
    throw InvalidInput("scan image has no pixels");
  if (counts.size() != static_cast<std::size_t>(width_px) * height_px)
    throw InvalidInput("scan image grid size does not match dimensions");
  if (!(pixel_size_um > 0.0))
    throw InvalidInput("scan image pixel size must be positive");
  for (double c : counts)
    if (!(c >= 0.0))
      throw InvalidInput("scan image counts must be non-negative");
}

Kernel3x3 binomial_kernel() {
  return {1.0 / 16, 2.0 / 16, 1.0 / 16, 2.0 / 16, 4.0 / 16,
          2.0 / 16, 1.0 / 16, 2.0 / 16, 1.0 / 16};
}

void DetectionParams::validate() const {
  if (neighbor_distance_n < 1)
    throw InvalidInput("neighbor distance n must be >= 1");
  if (!(brightness_factor_a > 1.0))
    throw InvalidInput("brightness factor a must be > 1");
  double sum = std::accumulate(kernel.begin(), kernel.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-12)
    throw InvalidInput("kernel weights must sum to 1");
  for (double w : kernel)
    if (!(w >= 0.0))
      throw InvalidInput("kernel weights must be non-negative");
}

std::size_t PixelMask::marked_count() const {
  return static_cast<std::size_t>(
      std::count(marked.begin(), marked.end(), std::uint8_t{1}));
}

ScanImage smooth(const ScanImage &image, const Kernel3x3 &kernel) {
  image.validate();
  ScanImage out = image;
  auto clamp = [](int v, int lo, int hi) { return std::min(std::max(v, lo), hi); };
  for (int r = 0; r < image.height_px; ++r) {
    for (int c = 0; c < image.width_px; ++c) {
      double acc = 0.0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          int rr = clamp(r + dr, 0, image.height_px - 1);
          int cc = clamp(c + dc, 0, image.width_px - 1);
          acc += kernel[(dr + 1) * 3 + (dc + 1)] * image.at(rr, cc);
        }
      }
      out.at(r, c) = acc;
    }
  }
  return out;
}

PixelMask select_bright_pixels(const ScanImage &smoothed,
                               const DetectionParams &params) {
  smoothed.validate();
  params.validate();
  const int n = params.neighbor_distance_n;
  if (2 * n >= std::min(smoothed.width_px, smoothed.height_px))
    throw InvalidInput("neighbor distance n too large for this image");

  PixelMask mask;
  mask.width_px = smoothed.width_px;
  mask.height_px = smoothed.height_px;
  mask.marked.assign(static_cast<std::size_t>(mask.width_px) * mask.height_px,
                     0);

  const double a = params.brightness_factor_a;
  // The n-wide border band is never considered: the nth neighbor must
  // exist in all four directions.
  for (int r = n; r < smoothed.height_px - n; ++r) {
    for (int c = n; c < smoothed.width_px - n; ++c) {
      double v = smoothed.at(r, c);
      bool bright = v > a * smoothed.at(r - n, c) &&
                    v > a * smoothed.at(r + n, c) &&
                    v > a * smoothed.at(r, c - n) &&
                    v > a * smoothed.at(r, c + n);
      if (bright)
        mask.marked[static_cast<std::size_t>(r) * mask.width_px + c] = 1;
    }
  }
  return mask;
}

std::vector<EmitterCandidate> group_pixels(const PixelMask &mask,
                                           const ScanImage &smoothed) {
  if (mask.width_px != smoothed.width_px ||
      mask.height_px != smoothed.height_px)
    throw InvalidInput("mask dimensions do not match image");

  const int w = mask.width_px;
  const int h = mask.height_px;
  std::vector<std::int32_t> label(static_cast<std::size_t>(w) * h, -1);
  std::vector<EmitterCandidate> candidates;

  // Flood fill in scan order; 8-connectivity includes diagonals.
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::size_t idx = static_cast<std::size_t>(r) * w + c;
      if (!mask.marked[idx] || label[idx] >= 0)
        continue;
      std::int32_t id = static_cast<std::int32_t>(candidates.size());
      EmitterCandidate cand;
      stack.clear();
      stack.emplace_back(r, c);
      label[idx] = id;
      while (!stack.empty()) {
        auto [pr, pc] = stack.back();
        stack.pop_back();
        cand.member_pixels.emplace_back(pr, pc);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            if (dr == 0 && dc == 0)
              continue;
            int nr = pr + dr, nc = pc + dc;
            if (nr < 0 || nr >= h || nc < 0 || nc >= w)
              continue;
            std::size_t nidx = static_cast<std::size_t>(nr) * w + nc;
            if (mask.marked[nidx] && label[nidx] < 0) {
              label[nidx] = id;
              stack.emplace_back(nr, nc);
            }
          }
        }
      }
      candidates.push_back(std::move(cand));
    }
  }

  for (auto &cand : candidates) {
    std::sort(cand.member_pixels.begin(), cand.member_pixels.end());
    cand.seed_pixel = cand.member_pixels.front();
    cand.seed_brightness =
        smoothed.at(cand.seed_pixel.first, cand.seed_pixel.second);
    double sum_r = 0.0, sum_c = 0.0;
    for (auto [pr, pc] : cand.member_pixels) {
      double v = smoothed.at(pr, pc);
      // Ties go to the smallest (row, col), which sorted order gives us.
      if (v > cand.seed_brightness) {
        cand.seed_brightness = v;
        cand.seed_pixel = {pr, pc};
      }
      sum_r += pr;
      sum_c += pc;
    }
    double n = static_cast<double>(cand.member_pixels.size());
    cand.centroid_um = {sum_c / n * smoothed.pixel_size_um,
                        sum_r / n * smoothed.pixel_size_um};
  }

  std::sort(candidates.begin(), candidates.end(),
            [](const EmitterCandidate &lhs, const EmitterCandidate &rhs) {
              return lhs.seed_pixel < rhs.seed_pixel;
            });
  return candidates;
}

std::vector<EmitterCandidate> detect(const ScanImage &image,
                                     const DetectionParams &params) {
  ScanImage smoothed = smooth(image, params.kernel);
  PixelMask mask = select_bright_pixels(smoothed, params);
  return group_pixels(mask, smoothed);
}

} // namespace qelab::scan
