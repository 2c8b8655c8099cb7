#include "s3l/augment.hpp"

#include <algorithm>
#include <cmath>

namespace s3l {

void AugmentPolicy::validate() const {
  if (n_time_masks < 0 || n_freq_masks < 0 || max_time_mask_frames < 0 || max_freq_mask_bins < 0)
    throw ConfigError("augment: mask counts and widths must be non-negative");
  if (snr_db_min > snr_db_max) throw ConfigError("augment: snr range is not ordered");
  if (max_shift_frames < 0) throw ConfigError("augment: max_shift_frames must be non-negative");
  if (freq_mask_noise_std < 0.0) throw ConfigError("augment: freq_mask_noise_std must be non-negative");
}

Waveform mix_noise(const Waveform& clean, const Waveform& noise, double snr_db,
                   std::uint64_t seed) {
  const std::int64_t n = clean.size();
  if (noise.size() < n)
    throw ContractError("mix_noise: noise shorter than clean (" + std::to_string(noise.size()) +
                        " < " + std::to_string(n) + ")");

  double p_clean = 0.0;
  for (const double v : clean.samples) p_clean += v * v;
  p_clean /= static_cast<double>(n);

  Rng rng(derive_seed(seed, "mix-noise"));
  const std::int64_t offset =
      static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(noise.size() - n + 1)));

  double p_noise = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = noise.samples[static_cast<std::size_t>(offset + i)];
    p_noise += v * v;
  }
  p_noise /= static_cast<double>(n);

  if (p_clean <= 0.0 || p_noise <= 0.0)
    throw DegenerateSignalError("mix_noise: zero-power signal");

  // 10*log10(p_clean / (g^2 * p_noise)) = snr_db
  const double g = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));

  Waveform out;
  out.sample_rate = clean.sample_rate;
  out.labels = clean.labels;
  out.samples.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    out.samples[static_cast<std::size_t>(i)] =
        std::clamp(clean.samples[static_cast<std::size_t>(i)] +
                       g * noise.samples[static_cast<std::size_t>(offset + i)],
                   -1.0, 1.0);
  return out;
}

std::pair<MelSpectrogram, MaskRecord> spec_augment(const MelSpectrogram& m,
                                                   const AugmentPolicy& policy,
                                                   std::uint64_t seed) {
  policy.validate();
  MelSpectrogram out = m;
  MaskRecord record;
  Rng rng(derive_seed(seed, "spec-augment"));

  const std::int64_t max_t = std::min(policy.max_time_mask_frames, m.frames);
  for (int i = 0; i < policy.n_time_masks; ++i) {
    const std::int64_t width = rng.range(0, max_t);
    if (width == 0) continue;
    const std::int64_t t0 = rng.range(0, m.frames - width);
    record.time_masks.emplace_back(t0, t0 + width);
    for (std::int64_t mm = 0; mm < m.n_mels; ++mm)
      for (std::int64_t t = t0; t < t0 + width; ++t) out.at(mm, t) = 0.0;
  }

  const std::int64_t max_f = std::min(policy.max_freq_mask_bins, m.n_mels);
  for (int i = 0; i < policy.n_freq_masks; ++i) {
    const std::int64_t width = rng.range(0, max_f);
    if (width == 0) continue;
    const std::int64_t f0 = rng.range(0, m.n_mels - width);
    record.freq_masks.emplace_back(f0, f0 + width);
    for (std::int64_t mm = f0; mm < f0 + width; ++mm)
      for (std::int64_t t = 0; t < m.frames; ++t)
        out.at(mm, t) = policy.freq_mask_noise_std * rng.normal();
  }
  return {std::move(out), std::move(record)};
}

std::pair<MelSpectrogram, std::int64_t> positional_shift(const MelSpectrogram& m,
                                                         std::int64_t max_shift,
                                                         std::uint64_t seed) {
  if (max_shift < 0) throw ConfigError("positional_shift: max_shift must be non-negative");
  Rng rng(derive_seed(seed, "pos-shift"));
  const std::int64_t p = max_shift == 0 ? 0 : rng.range(0, max_shift);
  if (p == 0) return {m, 0};

  MelSpectrogram out;
  out.n_mels = m.n_mels;
  out.frames = m.frames + p;
  out.hop = m.hop;
  out.values.assign(static_cast<std::size_t>(out.n_mels * out.frames), 0.0);
  for (std::int64_t mm = 0; mm < m.n_mels; ++mm)
    for (std::int64_t t = 0; t < m.frames; ++t) out.at(mm, t + p) = m.at(mm, t);
  if (!m.frame_labels.empty()) {
    out.frame_labels.assign(static_cast<std::size_t>(out.frames), -1);
    for (std::int64_t t = 0; t < m.frames; ++t)
      out.frame_labels[static_cast<std::size_t>(t + p)] = m.frame_labels[static_cast<std::size_t>(t)];
  }
  return {std::move(out), p};
}

std::int64_t shift_realign_drop(std::int64_t shift, std::int64_t downsample) {
  if (downsample < 1) throw ContractError("shift_realign_drop: downsample must be >= 1");
  return (shift + downsample - 1) / downsample;
}

}  // namespace s3l
