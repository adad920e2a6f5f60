#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pan/error.hpp"
#include "pan/tensor.hpp"

namespace pan {

/// One EDA window. Samples are stored as the 32-bit floats that live in the
/// dataset files, so write -> read -> write round-trips byte-identically.
struct WindowRecord {
  std::uint16_t subject_id = 0;
  std::uint8_t level = 0;
  std::vector<float> samples;
};

struct Dataset {
  std::uint32_t rate = 512;
  std::uint32_t samples_per_window = 2816;
  std::vector<WindowRecord> records;

  void validate() const {
    if (rate == 0 || samples_per_window == 0) {
      throw FormatError("dataset: rate and window size must be positive");
    }
    for (const WindowRecord& r : records) {
      if (r.level > 4) {
        throw FormatError("dataset: stimulus level " + std::to_string(r.level) +
                          " outside 0..4");
      }
      if (r.samples.size() != samples_per_window) {
        throw FormatError("dataset: window with " + std::to_string(r.samples.size()) +
                          " samples, expected " + std::to_string(samples_per_window));
      }
    }
  }

  std::vector<std::uint16_t> subject_ids() const {
    std::vector<std::uint16_t> ids;
    for (const WindowRecord& r : records) {
      bool seen = false;
      for (std::uint16_t s : ids) {
        if (s == r.subject_id) {
          seen = true;
          break;
        }
      }
      if (!seen) ids.push_back(r.subject_id);
    }
    return ids;
  }
};

}  // namespace pan
