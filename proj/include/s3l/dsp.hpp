#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "s3l/errors.hpp"
#include "s3l/rng.hpp"

namespace s3l {

// Sample span [begin, end) carrying one phone class.
struct LabelSegment {
  std::int64_t begin = 0;
  std::int64_t end = 0;
  int cls = -1;
};

struct Waveform {
  std::vector<double> samples;  // mono, in [-1, 1]
  int sample_rate = 16000;
  std::vector<LabelSegment> labels;  // non-overlapping, sorted, within [0, len)

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
};

// Log-mel energies, [n_mels x frames] row-major. frame_labels is empty when
// the source waveform carried no labels; -1 marks an unlabeled frame.
struct MelSpectrogram {
  std::int64_t n_mels = 0;
  std::int64_t frames = 0;
  std::int64_t hop = 0;
  std::vector<double> values;
  std::vector<int> frame_labels;

  double& at(std::int64_t m, std::int64_t t) { return values[static_cast<std::size_t>(m * frames + t)]; }
  double at(std::int64_t m, std::int64_t t) const { return values[static_cast<std::size_t>(m * frames + t)]; }
};

enum class WindowKind { Hann, Rect };

struct DspConfig {
  int sample_rate = 16000;
  std::int64_t n_fft = 400;   // 25 ms
  std::int64_t hop = 160;     // 10 ms
  std::int64_t n_mels = 40;
  double fmin = 20.0;
  double fmax = 7600.0;
  WindowKind window = WindowKind::Hann;
  double log_floor = 1e-10;
};

// Generator recipe for one synthetic corpus. Utterances concatenate
// two-formant harmonic segments, one phone class per segment.
struct SynthSpec {
  std::uint64_t seed = 0;  // corpus master seed; per-utterance seeds derive from it
  double duration_min_s = 1.0;
  double duration_max_s = 3.0;
  int n_classes = 5;
  std::vector<std::array<double, 2>> formants;  // defaults to a vowel-like table
  double seg_min_ms = 80.0;
  double seg_max_ms = 200.0;
  double amplitude = 0.8;

  static std::vector<std::array<double, 2>> default_formants();
};

Waveform synth_utterance(const SynthSpec& spec, std::uint64_t seed);

enum class NoiseKind { White, Babble };

Waveform synth_noise(NoiseKind kind, std::int64_t length, std::uint64_t seed);

std::int64_t stft_frame_count(std::int64_t samples, std::int64_t n_fft, std::int64_t hop);

// Magnitude-squared spectrogram, [n_fft/2+1 x frames] row-major.
struct PowerSpectrogram {
  std::int64_t bins = 0;
  std::int64_t frames = 0;
  std::vector<double> values;

  double& at(std::int64_t b, std::int64_t t) { return values[static_cast<std::size_t>(b * frames + t)]; }
  double at(std::int64_t b, std::int64_t t) const { return values[static_cast<std::size_t>(b * frames + t)]; }
};

PowerSpectrogram stft_power(const Waveform& w, std::int64_t n_fft, std::int64_t hop,
                            WindowKind window);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular filters, [n_mels x n_fft/2+1] row-major, each row peaking at 1.
struct MelFilterbank {
  std::int64_t n_mels = 0;
  std::int64_t bins = 0;
  std::vector<double> weights;

  double at(std::int64_t m, std::int64_t b) const { return weights[static_cast<std::size_t>(m * bins + b)]; }
};

MelFilterbank mel_filterbank(std::int64_t n_mels, std::int64_t n_fft, double sample_rate,
                             double fmin, double fmax);

MelSpectrogram log_mel(const Waveform& w, const DspConfig& cfg);

// Orthonormal DCT-II over the mel axis; [n_coeff x frames] row-major.
std::vector<double> mfcc(const MelSpectrogram& m, std::int64_t n_coeff);

// Canonical RIFF mono 16-bit PCM.
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

}  // namespace s3l
