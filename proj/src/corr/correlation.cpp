#include "qelab/corr/correlation.hpp"

#include "qelab/core/errors.hpp"

#include <algorithm>
#include <cmath>

namespace qelab::corr {

void TimestampStream::validate() const {
  std::uint64_t previous = 0;
  for (const auto &event : events) {
    if (event.time_ps < previous)
      throw InvalidInput("timestamps must be non-decreasing");
    if (event.time_ps > duration_ps)
      throw InvalidInput("timestamp beyond the acquisition duration");
    previous = event.time_ps;
  }
  if (!std::is_sorted(channel_ids.begin(), channel_ids.end()))
    throw InvalidInput("channel_ids must be sorted");
}

bool TimestampStream::has_channel(std::uint8_t channel) const {
  return std::binary_search(channel_ids.begin(), channel_ids.end(), channel);
}

std::vector<std::uint64_t>
TimestampStream::channel_times(std::uint8_t channel) const {
  std::vector<std::uint64_t> times;
  for (const auto &event : events)
    if (event.channel == channel)
      times.push_back(event.time_ps);
  return times;
}

std::size_t TimestampStream::channel_count(std::uint8_t channel) const {
  std::size_t count = 0;
  for (const auto &event : events)
    if (event.channel == channel)
      ++count;
  return count;
}

void TimestampStream::refresh_channels() {
  channel_ids.clear();
  for (const auto &event : events)
    channel_ids.push_back(event.channel);
  std::sort(channel_ids.begin(), channel_ids.end());
  channel_ids.erase(std::unique(channel_ids.begin(), channel_ids.end()),
                    channel_ids.end());
}

std::int64_t lag_bin_index(std::int64_t delta_ps, std::int64_t bin_width_ps) {
  std::int64_t magnitude = delta_ps < 0 ? -delta_ps : delta_ps;
  std::int64_t bin = (magnitude + bin_width_ps / 2) / bin_width_ps;
  return delta_ps < 0 ? -bin : bin;
}

G2Histogram compute_g2(const TimestampStream &stream, std::uint8_t ch_a,
                       std::uint8_t ch_b, std::int64_t bin_width_ps,
                       std::int64_t max_lag_ps) {
  stream.validate();
  if (bin_width_ps < 1)
    throw InvalidInput("bin width must be at least 1 ps");
  if (max_lag_ps < bin_width_ps || max_lag_ps % bin_width_ps != 0)
    throw InvalidInput("max lag must be a positive multiple of the bin width");
  if (ch_a == ch_b)
    throw InvalidInput("correlation needs two distinct detector channels");
  if (!stream.has_channel(ch_a) || !stream.has_channel(ch_b))
    throw InvalidInput("requested channel not present in the stream");
  if (stream.duration_ps == 0)
    throw InvalidInput("stream has zero duration");

  const std::int64_t m = max_lag_ps / bin_width_ps;
  // Outermost accepted lag so that the bin index stays within [-m, m].
  const std::int64_t reach =
      (m + 1) * bin_width_ps - 1 - bin_width_ps / 2;

  G2Histogram hist;
  hist.bin_width_ps = bin_width_ps;
  hist.lags_ps.resize(2 * m + 1);
  for (std::int64_t k = -m; k <= m; ++k)
    hist.lags_ps[k + m] = k * bin_width_ps;
  hist.raw_counts.assign(2 * m + 1, 0);

  const std::vector<std::uint64_t> times_a = stream.channel_times(ch_a);
  const std::vector<std::uint64_t> times_b = stream.channel_times(ch_b);

  std::size_t lo = 0, hi = 0;
  for (std::uint64_t a : times_a) {
    const std::int64_t sa = static_cast<std::int64_t>(a);
    while (lo < times_b.size() &&
           static_cast<std::int64_t>(times_b[lo]) < sa - reach)
      ++lo;
    if (hi < lo)
      hi = lo;
    while (hi < times_b.size() &&
           static_cast<std::int64_t>(times_b[hi]) <= sa + reach)
      ++hi;
    for (std::size_t j = lo; j < hi; ++j) {
      std::int64_t delta = static_cast<std::int64_t>(times_b[j]) - sa;
      hist.raw_counts[lag_bin_index(delta, bin_width_ps) + m] += 1;
    }
  }

  hist.duration_s = static_cast<double>(stream.duration_ps) * 1e-12;
  hist.rate_ch1_hz = static_cast<double>(times_a.size()) / hist.duration_s;
  hist.rate_ch2_hz = static_cast<double>(times_b.size()) / hist.duration_s;

  hist.normalized.assign(hist.raw_counts.size(), 0.0);
  double denom = hist.rate_ch1_hz * hist.rate_ch2_hz * hist.duration_s *
                 (static_cast<double>(bin_width_ps) * 1e-12);
  if (denom > 0.0)
    for (std::size_t i = 0; i < hist.raw_counts.size(); ++i)
      hist.normalized[i] = static_cast<double>(hist.raw_counts[i]) / denom;
  return hist;
}

G2Result g2_zero_pulsed(const G2Histogram &hist, double rep_rate_hz,
                        int n_side_peaks) {
  if (!(rep_rate_hz > 0.0))
    throw InvalidInput("repetition rate must be positive");
  if (n_side_peaks < 2)
    throw InvalidInput("need at least 2 side peaks per side");
  if (hist.bin_width_ps < 1 || hist.lags_ps.empty())
    throw InvalidInput("empty histogram");

  const std::int64_t period_ps =
      static_cast<std::int64_t>(std::llround(1e12 / rep_rate_hz));
  if (period_ps < 4 * hist.bin_width_ps)
    throw InvalidInput("repetition period must span at least 4 bins");

  const std::int64_t max_center = hist.lags_ps.back();
  // The outermost side window must fit inside the histogram.
  if (2 * (static_cast<double>(n_side_peaks) + 0.5) * period_ps >
      2.0 * max_center + hist.bin_width_ps)
    throw InvalidInput("histogram lag range too short for the side peaks");

  // Assign each bin to the nearest pulse-period multiple.
  std::vector<std::uint64_t> window_counts(2 * n_side_peaks + 1, 0);
  std::vector<std::int64_t> window_bins(2 * n_side_peaks + 1, 0);
  for (std::size_t i = 0; i < hist.lags_ps.size(); ++i) {
    double j = static_cast<double>(hist.lags_ps[i]) / period_ps;
    std::int64_t window = std::llround(j);
    if (std::abs(window) > n_side_peaks)
      continue;
    std::size_t slot = static_cast<std::size_t>(window + n_side_peaks);
    window_counts[slot] += hist.raw_counts[i];
    window_bins[slot] += 1;
  }

  const std::size_t center_slot = static_cast<std::size_t>(n_side_peaks);
  const double center_bins = static_cast<double>(window_bins[center_slot]);
  if (center_bins <= 0.0)
    throw InvalidInput("center window contains no bins");

  double side_sum = 0.0;
  int side_windows = 0;
  for (std::size_t slot = 0; slot < window_counts.size(); ++slot) {
    if (slot == center_slot)
      continue;
    if (window_bins[slot] <= 0)
      throw InvalidInput("side window contains no bins");
    // Equalize window widths: integer bin counts per window differ by one
    // depending on how the period lines up with the bin grid.
    side_sum += static_cast<double>(window_counts[slot]) * center_bins /
                static_cast<double>(window_bins[slot]);
    ++side_windows;
  }

  G2Result result;
  result.rep_period_ps = period_ps;
  result.n_side_peaks_used = side_windows;
  result.center_peak_area = static_cast<double>(window_counts[center_slot]);
  result.mean_side_peak_area = side_sum / side_windows;
  if (!(result.mean_side_peak_area > 0.0))
    throw DegenerateData("side peaks carry no counts");
  result.g2_zero = result.center_peak_area / result.mean_side_peak_area;
  return result;
}

double background_corrected_g2(double g2_measured, double signal_fraction_p) {
  if (!(signal_fraction_p > 0.0 && signal_fraction_p <= 1.0))
    throw InvalidInput("signal fraction must be in (0, 1]");
  if (!(g2_measured >= 0.0))
    throw InvalidInput("measured g2 must be non-negative");
  double p2 = signal_fraction_p * signal_fraction_p;
  return (g2_measured - (1.0 - p2)) / p2;
}

} // namespace qelab::corr
