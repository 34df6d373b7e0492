#pragma once

#include "qelab/corr/correlation.hpp"
#include "qelab/scan/detection.hpp"
#include "qelab/sim/random.hpp"

#include <algorithm>
#include <cstdint>
#include <set>
#include <vector>

namespace qelab::test {

inline corr::TimestampStream
make_stream(std::vector<corr::TimestampEvent> events, std::uint64_t duration_ps) {
  corr::TimestampStream stream;
  std::stable_sort(events.begin(), events.end(),
                   [](const corr::TimestampEvent &a,
                      const corr::TimestampEvent &b) {
                     return a.time_ps < b.time_ps;
                   });
  stream.events = std::move(events);
  stream.duration_ps = duration_ps;
  stream.refresh_channels();
  return stream;
}

/// Two channels of uniformly random timestamps, time-sorted.
inline corr::TimestampStream random_stream(sim::CounterRng &rng,
                                           std::size_t n_per_channel,
                                           std::uint64_t duration_ps) {
  std::vector<corr::TimestampEvent> events;
  events.reserve(2 * n_per_channel);
  for (std::size_t i = 0; i < n_per_channel; ++i) {
    events.push_back({0, rng.next_below(duration_ps + 1)});
    events.push_back({1, rng.next_below(duration_ps + 1)});
  }
  return make_stream(std::move(events), duration_ps);
}

/// All-pairs reference for compute_g2: direct enumeration of ordered
/// cross-channel pairs, binned by the same documented rule.
inline std::vector<std::uint64_t>
brute_force_g2(const corr::TimestampStream &stream, std::uint8_t ch_a,
               std::uint8_t ch_b, std::int64_t bin_width_ps,
               std::int64_t max_lag_ps) {
  const std::int64_t m = max_lag_ps / bin_width_ps;
  std::vector<std::uint64_t> counts(2 * m + 1, 0);
  for (const auto &ea : stream.events) {
    if (ea.channel != ch_a)
      continue;
    for (const auto &eb : stream.events) {
      if (eb.channel != ch_b)
        continue;
      std::int64_t delta = static_cast<std::int64_t>(eb.time_ps) -
                           static_cast<std::int64_t>(ea.time_ps);
      std::int64_t mag = delta < 0 ? -delta : delta;
      std::int64_t bin = (mag + bin_width_ps / 2) / bin_width_ps;
      if (delta < 0)
        bin = -bin;
      if (bin >= -m && bin <= m)
        counts[static_cast<std::size_t>(bin + m)] += 1;
    }
  }
  return counts;
}

/// All-pairs connectivity reference for group_pixels: adjacency by
/// Chebyshev distance 1, components by repeated sweeps.
inline std::vector<std::set<std::pair<int, int>>>
brute_force_components(const scan::PixelMask &mask) {
  std::vector<std::pair<int, int>> pixels;
  for (int r = 0; r < mask.height_px; ++r)
    for (int c = 0; c < mask.width_px; ++c)
      if (mask.at(r, c))
        pixels.emplace_back(r, c);

  std::vector<int> component(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    component[i] = static_cast<int>(i);

  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      for (std::size_t j = 0; j < pixels.size(); ++j) {
        int dr = pixels[i].first - pixels[j].first;
        int dc = pixels[i].second - pixels[j].second;
        if (dr >= -1 && dr <= 1 && dc >= -1 && dc <= 1 &&
            component[i] != component[j]) {
          int target = std::min(component[i], component[j]);
          component[i] = component[j] = target;
          changed = true;
        }
      }
    }
  }

  std::vector<std::set<std::pair<int, int>>> groups;
  std::vector<int> seen;
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    auto it = std::find(seen.begin(), seen.end(), component[i]);
    std::size_t slot;
    if (it == seen.end()) {
      seen.push_back(component[i]);
      groups.emplace_back();
      slot = groups.size() - 1;
    } else {
      slot = static_cast<std::size_t>(it - seen.begin());
    }
    groups[slot].insert(pixels[i]);
  }
  return groups;
}

} // namespace qelab::test
