#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s3l/augment.hpp"

using namespace s3l;

namespace {

MelSpectrogram random_mel(std::int64_t n_mels, std::int64_t frames, std::uint64_t seed) {
  MelSpectrogram m;
  m.n_mels = n_mels;
  m.frames = frames;
  m.hop = 160;
  m.values.resize(static_cast<std::size_t>(n_mels * frames));
  Rng rng(seed);
  for (auto& v : m.values) v = rng.uniform(-5.0, 5.0);
  return m;
}

}  // namespace

TEST_CASE("mix_noise at extreme SNR approaches the clean signal") {
  auto clean = synth_utterance(SynthSpec{}, 11);
  auto noise = synth_noise(NoiseKind::White, clean.size() + 500, 12);
  auto mixed = mix_noise(clean, noise, 100.0, 3);
  REQUIRE(mixed.samples.size() == clean.samples.size());
  double max_diff = 0.0;
  for (std::size_t i = 0; i < clean.samples.size(); ++i)
    max_diff = std::max(max_diff, std::abs(mixed.samples[i] - clean.samples[i]));
  CHECK(max_diff < 1e-4);
}

TEST_CASE("mix_noise hits the requested SNR before clipping") {
  // Scale the clean signal down so the mix never clips; then the scaled
  // noise is exactly mixed - clean and its power can be measured directly.
  auto clean = synth_utterance(SynthSpec{}, 21);
  for (auto& v : clean.samples) v *= 0.25;
  auto noise = synth_noise(NoiseKind::White, clean.size(), 22);

  for (double snr : {0.0, 10.0, -5.0}) {
    auto mixed = mix_noise(clean, noise, snr, 4);
    double p_clean = 0.0, p_noise = 0.0;
    for (std::size_t i = 0; i < clean.samples.size(); ++i) {
      const double d = mixed.samples[i] - clean.samples[i];
      p_clean += clean.samples[i] * clean.samples[i];
      p_noise += d * d;
    }
    const double measured = 10.0 * std::log10(p_clean / p_noise);
    CHECK(std::abs(std::pow(10.0, (measured - snr) / 10.0) - 1.0) < 1e-6);
  }
}

TEST_CASE("mix_noise determinism and degenerate inputs") {
  auto clean = synth_utterance(SynthSpec{}, 31);
  auto noise = synth_noise(NoiseKind::Babble, clean.size() + 1000, 32);
  auto a = mix_noise(clean, noise, 8.0, 5);
  auto b = mix_noise(clean, noise, 8.0, 5);
  CHECK(a.samples == b.samples);

  Waveform silence;
  silence.samples.assign(1000, 0.0);
  Waveform noise2;
  noise2.samples.assign(1000, 0.1);
  CHECK_THROWS_AS(mix_noise(silence, noise2, 0.0, 1), DegenerateSignalError);
  CHECK_THROWS_AS(mix_noise(noise2, silence, 0.0, 1), DegenerateSignalError);

  Waveform shorter;
  shorter.samples.assign(10, 0.1);
  CHECK_THROWS_AS(mix_noise(noise2, shorter, 0.0, 1), ContractError);
}

TEST_CASE("spec_augment with zero masks is the identity") {
  auto m = random_mel(16, 40, 7);
  AugmentPolicy policy;
  policy.n_time_masks = 0;
  policy.n_freq_masks = 0;
  auto [out, record] = spec_augment(m, policy, 9);
  CHECK(out.values == m.values);
  CHECK(record.time_masks.empty());
  CHECK(record.freq_masks.empty());
}

TEST_CASE("spec_augment masks behave per contract") {
  auto m = random_mel(16, 40, 17);
  AugmentPolicy policy;
  policy.n_time_masks = 1;
  policy.max_time_mask_frames = 6;
  policy.n_freq_masks = 0;
  // find a seed whose draw is a non-empty time mask
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto [out, record] = spec_augment(m, policy, seed);
    if (record.time_masks.empty()) continue;
    const auto [t0, t1] = record.time_masks[0];
    for (std::int64_t mm = 0; mm < m.n_mels; ++mm)
      for (std::int64_t t = t0; t < t1; ++t) CHECK(out.at(mm, t) == 0.0);
    break;
  }
}

TEST_CASE("spec_augment leaves untouched cells bit-identical") {
  Rng meta(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = random_mel(meta.range(4, 24), meta.range(8, 60), meta.next_u64());
    AugmentPolicy policy;
    policy.n_time_masks = static_cast<int>(meta.range(0, 3));
    policy.max_time_mask_frames = meta.range(0, 10);
    policy.n_freq_masks = static_cast<int>(meta.range(0, 3));
    policy.max_freq_mask_bins = meta.range(0, 6);
    auto [out, record] = spec_augment(m, policy, meta.next_u64());
    for (std::int64_t mm = 0; mm < m.n_mels; ++mm)
      for (std::int64_t t = 0; t < m.frames; ++t)
        if (!record.covers(mm, t)) CHECK(out.at(mm, t) == m.at(mm, t));
  }
}

TEST_CASE("spec_augment is deterministic per seed") {
  auto m = random_mel(12, 30, 5);
  AugmentPolicy policy;
  auto [a, ra] = spec_augment(m, policy, 77);
  auto [b, rb] = spec_augment(m, policy, 77);
  CHECK(a.values == b.values);
  CHECK(ra.time_masks == rb.time_masks);
  CHECK(ra.freq_masks == rb.freq_masks);
}

TEST_CASE("positional_shift identity and prefix contract") {
  auto m = random_mel(10, 25, 3);
  auto [same, p0] = positional_shift(m, 0, 1);
  CHECK(p0 == 0);
  CHECK(same.values == m.values);

  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    auto [out, p] = positional_shift(m, 8, seed);
    REQUIRE(out.frames == m.frames + p);
    for (std::int64_t mm = 0; mm < m.n_mels; ++mm) {
      for (std::int64_t t = 0; t < p; ++t) CHECK(out.at(mm, t) == 0.0);
      for (std::int64_t t = 0; t < m.frames; ++t) CHECK(out.at(mm, t + p) == m.at(mm, t));
    }
    if (p == 4) break;
  }
}

TEST_CASE("positional_shift draw is uniform over [0, max_shift]") {
  const std::int64_t max_shift = 16;
  std::vector<std::int64_t> counts(static_cast<std::size_t>(max_shift + 1), 0);
  auto m = random_mel(4, 10, 9);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) {
    auto [out, p] = positional_shift(m, max_shift, static_cast<std::uint64_t>(i));
    counts[static_cast<std::size_t>(p)] += 1;
  }
  const double expected = static_cast<double>(draws) / static_cast<double>(max_shift + 1);
  double chi2 = 0.0;
  for (const auto c : counts) {
    const double d = static_cast<double>(c) - expected;
    chi2 += d * d / expected;
  }
  // chi-square critical value at the 0.01 level with 16 degrees of freedom
  CHECK(chi2 < 32.0);
}

TEST_CASE("shift realignment drop uses ceil rounding") {
  CHECK(shift_realign_drop(0, 8) == 0);
  CHECK(shift_realign_drop(1, 8) == 1);
  CHECK(shift_realign_drop(8, 8) == 1);
  CHECK(shift_realign_drop(9, 8) == 2);
  CHECK(shift_realign_drop(16, 8) == 2);
}
