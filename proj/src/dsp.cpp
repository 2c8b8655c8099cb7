#include "s3l/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <numbers>

namespace s3l {

namespace {

using cd = std::complex<double>;

// Mixed-radix Cooley-Tukey with a shared twiddle table. Sizes with prime
// factors beyond the table fall back to the naive DFT of the remaining
// block, so any n works; 2/3/5-smooth sizes (400, 512, ...) stay fast.
struct FftPlan {
  std::int64_t n;
  std::vector<cd> twiddles;  // exp(-2*pi*i*j/n)

  explicit FftPlan(std::int64_t size) : n(size), twiddles(static_cast<std::size_t>(size)) {
    for (std::int64_t j = 0; j < n; ++j) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n);
      twiddles[static_cast<std::size_t>(j)] = cd(std::cos(ang), std::sin(ang));
    }
  }

  cd tw(std::int64_t num, std::int64_t den) const {
    // exp(-2*pi*i*num/den) where den divides n
    const std::int64_t idx = (num % den) * (n / den);
    return twiddles[static_cast<std::size_t>(idx)];
  }

  void run(const std::vector<cd>& in, std::vector<cd>& out) const {
    out.resize(in.size());
    rec(in, out);
  }

 private:
  static std::int64_t smallest_factor(std::int64_t m) {
    for (std::int64_t p : {2, 3, 5, 7}) {
      if (m % p == 0) return p;
    }
    return m;
  }

  void rec(const std::vector<cd>& in, std::vector<cd>& out) const {
    const std::int64_t m = static_cast<std::int64_t>(in.size());
    if (m == 1) {
      out[0] = in[0];
      return;
    }
    const std::int64_t p = smallest_factor(m);
    if (p == m) {
      // prime block: naive DFT
      for (std::int64_t k = 0; k < m; ++k) {
        cd acc(0.0, 0.0);
        for (std::int64_t j = 0; j < m; ++j) acc += in[static_cast<std::size_t>(j)] * tw(j * k, m);
        out[static_cast<std::size_t>(k)] = acc;
      }
      return;
    }
    const std::int64_t sub = m / p;
    std::vector<std::vector<cd>> parts(static_cast<std::size_t>(p));
    std::vector<std::vector<cd>> parts_out(static_cast<std::size_t>(p));
    for (std::int64_t r = 0; r < p; ++r) {
      auto& part = parts[static_cast<std::size_t>(r)];
      part.resize(static_cast<std::size_t>(sub));
      for (std::int64_t j = 0; j < sub; ++j) part[static_cast<std::size_t>(j)] = in[static_cast<std::size_t>(j * p + r)];
      parts_out[static_cast<std::size_t>(r)].resize(static_cast<std::size_t>(sub));
      rec(part, parts_out[static_cast<std::size_t>(r)]);
    }
    for (std::int64_t k = 0; k < m; ++k) {
      cd acc(0.0, 0.0);
      for (std::int64_t r = 0; r < p; ++r)
        acc += tw(r * k, m) * parts_out[static_cast<std::size_t>(r)][static_cast<std::size_t>(k % sub)];
      out[static_cast<std::size_t>(k)] = acc;
    }
  }
};

const FftPlan& plan_for(std::int64_t n) {
  thread_local std::map<std::int64_t, FftPlan> cache;
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, FftPlan(n)).first;
  return it->second;
}

}  // namespace

std::int64_t stft_frame_count(std::int64_t samples, std::int64_t n_fft, std::int64_t hop) {
  if (samples < n_fft) return 0;
  return 1 + (samples - n_fft) / hop;
}

PowerSpectrogram stft_power(const Waveform& w, std::int64_t n_fft, std::int64_t hop,
                            WindowKind window) {
  if (n_fft < 2) throw ConfigError("stft: n_fft must be at least 2");
  if (hop < 1 || hop > n_fft) throw ConfigError("stft: need 1 <= hop <= n_fft");
  if (w.size() < n_fft)
    throw SequenceTooShortError("stft: waveform of " + std::to_string(w.size()) +
                                " samples is shorter than n_fft=" + std::to_string(n_fft));

  std::vector<double> win(static_cast<std::size_t>(n_fft), 1.0);
  if (window == WindowKind::Hann)
    for (std::int64_t m = 0; m < n_fft; ++m)
      win[static_cast<std::size_t>(m)] =
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n_fft));

  const std::int64_t frames = stft_frame_count(w.size(), n_fft, hop);
  const std::int64_t bins = n_fft / 2 + 1;
  PowerSpectrogram out;
  out.bins = bins;
  out.frames = frames;
  out.values.assign(static_cast<std::size_t>(bins * frames), 0.0);

  const FftPlan& plan = plan_for(n_fft);
  std::vector<cd> buf(static_cast<std::size_t>(n_fft));
  std::vector<cd> spec;
  for (std::int64_t t = 0; t < frames; ++t) {
    const std::int64_t base = t * hop;
    for (std::int64_t m = 0; m < n_fft; ++m)
      buf[static_cast<std::size_t>(m)] =
          cd(w.samples[static_cast<std::size_t>(base + m)] * win[static_cast<std::size_t>(m)], 0.0);
    plan.run(buf, spec);
    for (std::int64_t b = 0; b < bins; ++b) out.at(b, t) = std::norm(spec[static_cast<std::size_t>(b)]);
  }
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelFilterbank mel_filterbank(std::int64_t n_mels, std::int64_t n_fft, double sample_rate,
                             double fmin, double fmax) {
  if (n_mels < 2) throw ConfigError("mel_filterbank: need n_mels >= 2");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= sample_rate / 2.0))
    throw ConfigError("mel_filterbank: need 0 <= fmin < fmax <= sr/2");

  const std::int64_t bins = n_fft / 2 + 1;
  const double m_lo = hz_to_mel(fmin), m_hi = hz_to_mel(fmax);
  std::vector<double> edges(static_cast<std::size_t>(n_mels + 2));
  for (std::int64_t i = 0; i < n_mels + 2; ++i)
    edges[static_cast<std::size_t>(i)] =
        mel_to_hz(m_lo + (m_hi - m_lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  MelFilterbank fb;
  fb.n_mels = n_mels;
  fb.bins = bins;
  fb.weights.assign(static_cast<std::size_t>(n_mels * bins), 0.0);
  for (std::int64_t m = 0; m < n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)];
    const double center = edges[static_cast<std::size_t>(m + 1)];
    const double right = edges[static_cast<std::size_t>(m + 2)];
    double peak = 0.0;
    for (std::int64_t b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / static_cast<double>(n_fft);
      const double rise = (f - left) / (center - left);
      const double fall = (right - f) / (right - center);
      const double v = std::max(0.0, std::min(rise, fall));
      fb.weights[static_cast<std::size_t>(m * bins + b)] = v;
      peak = std::max(peak, v);
    }
    if (peak <= 0.0)
      throw ConfigError("mel_filterbank: filter " + std::to_string(m) +
                        " covers no FFT bin (too many filters for this resolution)");
    for (std::int64_t b = 0; b < bins; ++b) fb.weights[static_cast<std::size_t>(m * bins + b)] /= peak;
  }
  return fb;
}

MelSpectrogram log_mel(const Waveform& w, const DspConfig& cfg) {
  const PowerSpectrogram power = stft_power(w, cfg.n_fft, cfg.hop, cfg.window);
  const MelFilterbank fb =
      mel_filterbank(cfg.n_mels, cfg.n_fft, static_cast<double>(cfg.sample_rate), cfg.fmin, cfg.fmax);

  MelSpectrogram out;
  out.n_mels = cfg.n_mels;
  out.frames = power.frames;
  out.hop = cfg.hop;
  out.values.assign(static_cast<std::size_t>(out.n_mels * out.frames), 0.0);
  for (std::int64_t m = 0; m < out.n_mels; ++m)
    for (std::int64_t t = 0; t < out.frames; ++t) {
      double acc = 0.0;
      for (std::int64_t b = 0; b < power.bins; ++b) acc += fb.at(m, b) * power.at(b, t);
      out.at(m, t) = std::log(std::max(acc, cfg.log_floor));
    }

  if (!w.labels.empty()) {
    // Majority class over each frame's sample span; ties go to the lower id.
    out.frame_labels.assign(static_cast<std::size_t>(out.frames), -1);
    for (std::int64_t t = 0; t < out.frames; ++t) {
      const std::int64_t lo = t * cfg.hop;
      const std::int64_t hi = std::min<std::int64_t>(lo + cfg.n_fft, w.size());
      std::map<int, std::int64_t> counts;
      for (const auto& seg : w.labels) {
        const std::int64_t a = std::max(lo, seg.begin);
        const std::int64_t b = std::min(hi, seg.end);
        if (b > a) counts[seg.cls] += b - a;
      }
      int best = -1;
      std::int64_t best_n = 0;
      for (const auto& [cls, n] : counts)
        if (n > best_n) {
          best = cls;
          best_n = n;
        }
      out.frame_labels[static_cast<std::size_t>(t)] = best;
    }
  }
  return out;
}

std::vector<double> mfcc(const MelSpectrogram& m, std::int64_t n_coeff) {
  if (n_coeff > m.n_mels)
    throw ConfigError("mfcc: n_coeff " + std::to_string(n_coeff) + " exceeds n_mels " +
                      std::to_string(m.n_mels));
  const std::int64_t n = m.n_mels;
  const double scale0 = std::sqrt(1.0 / static_cast<double>(n));
  const double scale = std::sqrt(2.0 / static_cast<double>(n));
  std::vector<double> out(static_cast<std::size_t>(n_coeff * m.frames), 0.0);
  for (std::int64_t j = 0; j < n_coeff; ++j)
    for (std::int64_t t = 0; t < m.frames; ++t) {
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i)
        acc += m.at(i, t) * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) *
                                     static_cast<double>(j) / static_cast<double>(n));
      out[static_cast<std::size_t>(j * m.frames + t)] = acc * (j == 0 ? scale0 : scale);
    }
  return out;
}

std::vector<std::array<double, 2>> SynthSpec::default_formants() {
  // Two-formant vowel-like targets (Hz).
  return {{{730.0, 1090.0}}, {{270.0, 2290.0}}, {{300.0, 870.0}}, {{530.0, 1840.0}}, {{570.0, 840.0}}};
}

namespace {

// One voiced segment: harmonic series with amplitudes shaped by two formant
// resonances, raised-cosine ramps at both ends.
void render_segment(std::vector<double>& out, std::int64_t begin, std::int64_t len, double f0,
                    double f1, double f2, double gain, int sample_rate, Rng& rng) {
  constexpr double kBandwidth = 140.0;
  const double nyquist_cap = 0.45 * sample_rate;
  const int n_harm = static_cast<int>(nyquist_cap / f0);
  std::vector<double> amp(static_cast<std::size_t>(n_harm) + 1, 0.0);
  std::vector<double> phase(static_cast<std::size_t>(n_harm) + 1, 0.0);
  for (int h = 1; h <= n_harm; ++h) {
    const double fh = h * f0;
    const double d1 = (fh - f1) / kBandwidth;
    const double d2 = (fh - f2) / kBandwidth;
    amp[static_cast<std::size_t>(h)] = std::exp(-0.5 * d1 * d1) + 0.8 * std::exp(-0.5 * d2 * d2);
    phase[static_cast<std::size_t>(h)] = rng.uniform(0.0, 2.0 * std::numbers::pi);
  }
  double norm = 0.0;
  for (int h = 1; h <= n_harm; ++h) norm += amp[static_cast<std::size_t>(h)];
  if (norm <= 0.0) norm = 1.0;

  const std::int64_t ramp = std::min<std::int64_t>(len / 4, sample_rate / 200);  // <= 5 ms
  for (std::int64_t i = 0; i < len; ++i) {
    const double t = static_cast<double>(i) / sample_rate;
    double v = 0.0;
    for (int h = 1; h <= n_harm; ++h)
      v += amp[static_cast<std::size_t>(h)] *
           std::sin(2.0 * std::numbers::pi * h * f0 * t + phase[static_cast<std::size_t>(h)]);
    v *= gain / norm;
    if (ramp > 0) {
      if (i < ramp) v *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(ramp));
      if (len - 1 - i < ramp)
        v *= 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(len - 1 - i) / static_cast<double>(ramp));
    }
    out[static_cast<std::size_t>(begin + i)] = v;
  }
}

}  // namespace

Waveform synth_utterance(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.n_classes < 1) throw ConfigError("synth: empty phone inventory");
  if (!(spec.duration_min_s >= 0.5 && spec.duration_max_s <= 30.0 &&
        spec.duration_min_s <= spec.duration_max_s))
    throw ConfigError("synth: duration range must lie within [0.5s, 30s]");
  auto formants = spec.formants.empty() ? SynthSpec::default_formants() : spec.formants;
  if (static_cast<int>(formants.size()) < spec.n_classes)
    throw ConfigError("synth: formant table smaller than the class inventory");

  constexpr int kSampleRate = 16000;
  Rng rng(derive_seed(seed, "synth-utt"));
  const double duration = rng.uniform(spec.duration_min_s, spec.duration_max_s);
  const std::int64_t total = static_cast<std::int64_t>(std::llround(duration * kSampleRate));

  Waveform w;
  w.sample_rate = kSampleRate;
  w.samples.assign(static_cast<std::size_t>(total), 0.0);

  std::int64_t pos = 0;
  const std::int64_t min_len = static_cast<std::int64_t>(spec.seg_min_ms * kSampleRate / 1000.0);
  while (pos < total) {
    std::int64_t len = static_cast<std::int64_t>(
        std::llround(rng.uniform(spec.seg_min_ms, spec.seg_max_ms) * kSampleRate / 1000.0));
    if (total - pos - len < min_len) len = total - pos;  // absorb the tail
    const int cls = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.n_classes)));
    const double f0 = rng.uniform(95.0, 135.0);
    const double jitter1 = 1.0 + 0.03 * rng.uniform(-1.0, 1.0);
    const double jitter2 = 1.0 + 0.03 * rng.uniform(-1.0, 1.0);
    const double gain = spec.amplitude * rng.uniform(0.75, 1.0);
    render_segment(w.samples, pos, len, f0, formants[static_cast<std::size_t>(cls)][0] * jitter1,
                   formants[static_cast<std::size_t>(cls)][1] * jitter2, gain, kSampleRate, rng);
    w.labels.push_back({pos, pos + len, cls});
    pos += len;
  }

  double peak = 0.0;
  for (const double v : w.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.9) {
    const double s = 0.9 / peak;
    for (double& v : w.samples) v *= s;
  }
  return w;
}

Waveform synth_noise(NoiseKind kind, std::int64_t length, std::uint64_t seed) {
  if (length <= 0) throw ConfigError("synth_noise: length must be positive");
  constexpr int kSampleRate = 16000;
  Waveform w;
  w.sample_rate = kSampleRate;
  w.samples.assign(static_cast<std::size_t>(length), 0.0);
  Rng rng(derive_seed(seed, "synth-noise"));

  if (kind == NoiseKind::White) {
    for (auto& v : w.samples) v = std::clamp(0.3 * rng.normal(), -0.95, 0.95);
    return w;
  }

  // Babble-like: a few overlapping voiced streams at random pitches.
  constexpr int kVoices = 6;
  const auto table = SynthSpec::default_formants();
  for (int voice = 0; voice < kVoices; ++voice) {
    std::vector<double> stream(static_cast<std::size_t>(length), 0.0);
    std::int64_t pos = 0;
    while (pos < length) {
      const std::int64_t len =
          std::min<std::int64_t>(length - pos, rng.range(kSampleRate / 8, kSampleRate / 3));
      const auto& f = table[rng.below(table.size())];
      render_segment(stream, pos, len, rng.uniform(85.0, 260.0), f[0] * rng.uniform(0.9, 1.1),
                     f[1] * rng.uniform(0.9, 1.1), 0.5, kSampleRate, rng);
      pos += len;
    }
    for (std::int64_t i = 0; i < length; ++i) w.samples[static_cast<std::size_t>(i)] += stream[static_cast<std::size_t>(i)];
  }

  double mean = 0.0;
  for (const double v : w.samples) mean += v;
  mean /= static_cast<double>(length);
  double peak = 0.0;
  for (auto& v : w.samples) {
    v -= mean;
    peak = std::max(peak, std::abs(v));
  }
  if (peak > 0.0)
    for (auto& v : w.samples) v *= 0.7 / peak;
  return w;
}

}  // namespace s3l
