#pragma once

#include <cstdint>
#include <vector>

namespace qelab::corr {

struct TimestampEvent {
  std::uint8_t channel = 0;
  std::uint64_t time_ps = 0;
};

/// Time-ordered photon detection events with channel tags.
struct TimestampStream {
  std::vector<TimestampEvent> events;
  std::uint64_t duration_ps = 0;
  std::vector<std::uint8_t> channel_ids; // sorted, distinct

  void validate() const;
  bool has_channel(std::uint8_t channel) const;
  std::vector<std::uint64_t> channel_times(std::uint8_t channel) const;
  std::size_t channel_count(std::uint8_t channel) const;

  /// Rebuilds channel_ids from the event list.
  void refresh_channels();
};

/// Cross-correlation histogram of signed lags t_b - t_a. Bins are centered
/// at integer multiples of the bin width; a lag is assigned to the nearest
/// center with half-bin ties going away from zero, so the histogram of a
/// channel-swapped stream is the exact mirror of the original. For even
/// bin widths the zero bin covers one picosecond less than the others.
struct G2Histogram {
  std::int64_t bin_width_ps = 0;
  std::vector<std::int64_t> lags_ps;  // bin centers, -max_lag .. +max_lag
  std::vector<std::uint64_t> raw_counts;
  std::vector<double> normalized; // raw / (rate_a * rate_b * duration * width)
  double rate_ch1_hz = 0.0;
  double rate_ch2_hz = 0.0;
  double duration_s = 0.0;
};

struct G2Result {
  double g2_zero = 0.0;
  double center_peak_area = 0.0;
  double mean_side_peak_area = 0.0; // width-equalized to the center window
  std::int64_t rep_period_ps = 0;
  int n_side_peaks_used = 0; // total over both sides
};

/// Bin index for a signed lag: nearest multiple of the bin width, ties
/// rounded away from zero. Exposed because the file format tools and the
/// pulsed-peak integration share it.
std::int64_t lag_bin_index(std::int64_t delta_ps, std::int64_t bin_width_ps);

/// Counts ordered pairs (a from ch_a, b from ch_b) by signed lag
/// t_b - t_a over |lag| <= max_lag_ps, via a sliding window over the
/// sorted per-channel times (O(N * mean window occupancy)).
G2Histogram compute_g2(const TimestampStream &stream, std::uint8_t ch_a,
                       std::uint8_t ch_b, std::int64_t bin_width_ps,
                       std::int64_t max_lag_ps);

/// Pulsed g2(0) by peak-area ratio: raw counts are integrated in windows
/// one repetition period wide centered on lag 0 and on the nearest
/// n_side_peaks period multiples on each side; the center area is divided
/// by the mean side area (side windows are width-equalized in bins before
/// averaging).
G2Result g2_zero_pulsed(const G2Histogram &hist, double rep_rate_hz,
                        int n_side_peaks);

/// Intrinsic emitter g2 given the signal fraction p of a Poissonian
/// background: (g2 - (1 - p^2)) / p^2. Not clamped; inconsistent inputs
/// may legitimately give negative values.
double background_corrected_g2(double g2_measured, double signal_fraction_p);

} // namespace qelab::corr
