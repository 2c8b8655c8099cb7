#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "s3l/dsp.hpp"

namespace s3l {

// Student/teacher input perturbations. Composition order in pretraining is
// fixed: mix_noise (waveform) -> log_mel -> spec_augment on the student
// branch; positional_shift applies to the teacher branch only.
struct AugmentPolicy {
  double snr_db_min = 5.0;
  double snr_db_max = 20.0;
  int n_time_masks = 2;
  std::int64_t max_time_mask_frames = 20;
  int n_freq_masks = 2;
  std::int64_t max_freq_mask_bins = 8;
  double freq_mask_noise_std = 0.1;
  std::int64_t max_shift_frames = 16;
  std::uint64_t master_seed = 0;

  void validate() const;
};

// Intervals actually applied by spec_augment plus the shift draw, so tests
// can verify that untouched cells are bit-identical.
struct MaskRecord {
  std::vector<std::pair<std::int64_t, std::int64_t>> time_masks;  // [t0, t1) columns
  std::vector<std::pair<std::int64_t, std::int64_t>> freq_masks;  // [f0, f1) rows
  std::int64_t shift = 0;

  bool covers(std::int64_t m, std::int64_t t) const {
    for (const auto& [t0, t1] : time_masks)
      if (t >= t0 && t < t1) return true;
    for (const auto& [f0, f1] : freq_masks)
      if (m >= f0 && m < f1) return true;
    return false;
  }
};

// clean + g * noise_crop with g chosen so that the clean/scaled-noise power
// ratio equals snr_db (before the final [-1, 1] clip). The crop offset is
// drawn from the seed; noise must be at least as long as clean.
Waveform mix_noise(const Waveform& clean, const Waveform& noise, double snr_db,
                   std::uint64_t seed);

// Time masks are zeroed; frequency masks are refilled with Gaussian noise of
// the policy's std. Every cell outside the returned record is bit-identical
// to the input.
std::pair<MelSpectrogram, MaskRecord> spec_augment(const MelSpectrogram& m,
                                                   const AugmentPolicy& policy,
                                                   std::uint64_t seed);

// Prepends p all-zero frames, p drawn uniformly from [0, max_shift]. After
// encoding, drop the first ceil(p / downsample) teacher frames and truncate
// both streams to the common length.
std::pair<MelSpectrogram, std::int64_t> positional_shift(const MelSpectrogram& m,
                                                         std::int64_t max_shift,
                                                         std::uint64_t seed);

std::int64_t shift_realign_drop(std::int64_t shift, std::int64_t downsample);

}  // namespace s3l
