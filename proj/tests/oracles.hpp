// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written from the definitions (sliding
// windows, explicit path enumeration, exhaustive search) and shares no code
// with the implementation paths it verifies.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <vector>

#include "s3l/evaluation.hpp"
#include "s3l/objectives.hpp"
#include "s3l/tensor.hpp"

namespace s3l::oracles {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(lo, hi);
  return t;
}

// conv1d: gather each window and take an explicit dot product.
inline Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                                  const Tensor<double>& bias, std::int64_t stride,
                                  std::int64_t padding) {
  const std::int64_t c_in = x.dim(0), t_in = x.dim(1);
  const std::int64_t c_out = w.dim(0), k = w.dim(2);
  const std::int64_t t_out = (t_in + 2 * padding - k) / stride + 1;
  Tensor<double> out({c_out, t_out});
  for (std::int64_t t = 0; t < t_out; ++t) {
    std::vector<double> window(static_cast<std::size_t>(c_in * k), 0.0);
    for (std::int64_t ci = 0; ci < c_in; ++ci)
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t ti = t * stride + j - padding;
        if (ti >= 0 && ti < t_in) window[static_cast<std::size_t>(ci * k + j)] = x.at(ci, ti);
      }
    for (std::int64_t co = 0; co < c_out; ++co) {
      double acc = bias.defined() ? bias.at(co) : 0.0;
      for (std::size_t i = 0; i < window.size(); ++i)
        acc += window[i] * w.at(co * c_in * k + static_cast<std::int64_t>(i));
      out.at(co, t) = acc;
    }
  }
  return out;
}

// Direct O(n^2) DFT power spectrum of one frame.
inline std::vector<double> dft_power_oracle(const std::vector<double>& frame, WindowKind window) {
  const std::int64_t n = static_cast<std::int64_t>(frame.size());
  std::vector<double> windowed(frame);
  if (window == WindowKind::Hann)
    for (std::int64_t m = 0; m < n; ++m)
      windowed[static_cast<std::size_t>(m)] *=
          0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n));
  std::vector<double> power(static_cast<std::size_t>(n / 2 + 1));
  for (std::int64_t k = 0; k <= n / 2; ++k) {
    double re = 0.0, im = 0.0;
    for (std::int64_t m = 0; m < n; ++m) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * m) / static_cast<double>(n);
      re += windowed[static_cast<std::size_t>(m)] * std::cos(ang);
      im += windowed[static_cast<std::size_t>(m)] * std::sin(ang);
    }
    power[static_cast<std::size_t>(k)] = re * re + im * im;
  }
  return power;
}

// Contrastive loss by direct summation of the defining formula.
inline double contrastive_oracle(const Tensor<double>& z, const Tensor<double>& zt, double tau,
                                 const std::vector<std::vector<std::int64_t>>& dsets) {
  auto cosine = [&](const Tensor<double>& a, std::int64_t i, const Tensor<double>& b, std::int64_t j) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t c = 0; c < a.dim(1); ++c) {
      dot += a.at(i, c) * b.at(j, c);
      na += a.at(i, c) * a.at(i, c);
      nb += b.at(j, c) * b.at(j, c);
    }
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };
  double total = 0.0;
  for (std::int64_t i = 0; i < z.dim(0); ++i) {
    double denom = 0.0;
    for (const auto j : dsets[static_cast<std::size_t>(i)])
      denom += std::exp(cosine(z, i, zt, j) / tau);
    total += -std::log(std::exp(cosine(z, i, zt, i) / tau) / denom);
  }
  return total / static_cast<double>(z.dim(0));
}

// CTC by enumerating every frame-level path and collapsing it.
inline double ctc_enumeration_oracle(const Tensor<double>& log_probs, const std::vector<int>& labels) {
  const std::int64_t frames = log_probs.dim(0);
  const std::int64_t symbols = log_probs.dim(1);
  const int blank = static_cast<int>(symbols) - 1;
  double total = 0.0;
  std::vector<int> path(static_cast<std::size_t>(frames), 0);
  std::function<void(std::int64_t, double)> walk = [&](std::int64_t t, double logp) {
    if (t == frames) {
      std::vector<int> collapsed;
      int prev = -1;
      for (const int s : path) {
        if (s != prev && s != blank) collapsed.push_back(s);
        prev = s;
      }
      if (collapsed == labels) total += std::exp(logp);
      return;
    }
    for (int s = 0; s < static_cast<int>(symbols); ++s) {
      path[static_cast<std::size_t>(t)] = s;
      walk(t + 1, logp + log_probs.at(t, s));
    }
  };
  walk(0, 0.0);
  return -std::log(total);
}

inline Tensor<double> random_log_probs(std::int64_t frames, std::int64_t symbols, Rng& rng) {
  Tensor<double> lp({frames, symbols});
  for (std::int64_t t = 0; t < frames; ++t) {
    double mx = -1e300;
    for (std::int64_t s = 0; s < symbols; ++s) {
      lp.at(t, s) = rng.uniform(-2.0, 2.0);
      mx = std::max(mx, lp.at(t, s));
    }
    double acc = 0.0;
    for (std::int64_t s = 0; s < symbols; ++s) acc += std::exp(lp.at(t, s) - mx);
    const double lse = mx + std::log(acc);
    for (std::int64_t s = 0; s < symbols; ++s) lp.at(t, s) -= lse;
  }
  return lp;
}

// Edit distance by exhaustive edit-script search at the first mismatch.
inline std::int64_t edit_search_oracle(std::vector<int> hyp, const std::vector<int>& ref,
                                       std::int64_t depth, std::int64_t best) {
  if (depth >= best) return best;
  if (hyp == ref) return depth;
  std::size_t i = 0;
  while (i < hyp.size() && i < ref.size() && hyp[i] == ref[i]) ++i;
  if (i == hyp.size() && i == ref.size()) return depth;
  std::int64_t out = best;
  if (i < hyp.size()) {
    auto h = hyp;
    h.erase(h.begin() + static_cast<std::ptrdiff_t>(i));
    out = std::min(out, edit_search_oracle(std::move(h), ref, depth + 1, out));
  }
  if (i < ref.size()) {
    auto h = hyp;
    h.insert(h.begin() + static_cast<std::ptrdiff_t>(i), ref[i]);
    out = std::min(out, edit_search_oracle(std::move(h), ref, depth + 1, out));
  }
  if (i < hyp.size() && i < ref.size()) {
    auto h = hyp;
    h[i] = ref[i];
    out = std::min(out, edit_search_oracle(std::move(h), ref, depth + 1, out));
  }
  return out;
}

// ABX with an independent framewise angular distance and DTW.
inline double abx_oracle(const std::vector<AbxInstance>& instances) {
  auto frame_dist = [](const Tensor<double>& p, std::int64_t i, const Tensor<double>& q, std::int64_t j) {
    double dot = 0, np = 0, nq = 0;
    for (std::int64_t c = 0; c < p.dim(1); ++c) {
      dot += p.at(i, c) * q.at(j, c);
      np += p.at(i, c) * p.at(i, c);
      nq += q.at(j, c) * q.at(j, c);
    }
    return std::acos(std::clamp(dot / std::sqrt(np * nq), -1.0, 1.0)) / std::numbers::pi;
  };
  auto dtw = [&](const Tensor<double>& s, const Tensor<double>& t) {
    const std::int64_t n = s.dim(0), m = t.dim(0);
    std::vector<std::vector<std::pair<double, std::int64_t>>> dp(
        static_cast<std::size_t>(n),
        std::vector<std::pair<double, std::int64_t>>(static_cast<std::size_t>(m)));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < m; ++j) {
        const double c = frame_dist(s, i, t, j);
        if (i == 0 && j == 0) {
          dp[0][0] = {c, 1};
          continue;
        }
        std::pair<double, std::int64_t> best{1e300, 0};
        if (i > 0 && j > 0 && dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)].first < best.first)
          best = dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j - 1)];
        if (i > 0 && dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)].first < best.first)
          best = dp[static_cast<std::size_t>(i - 1)][static_cast<std::size_t>(j)];
        if (j > 0 && dp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)].first < best.first)
          best = dp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j - 1)];
        dp[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = {best.first + c, best.second + 1};
      }
    const auto& last = dp[static_cast<std::size_t>(n - 1)][static_cast<std::size_t>(m - 1)];
    return last.first / static_cast<double>(last.second);
  };
  double score = 0;
  for (const auto& inst : instances) {
    const double dax = dtw(inst.a, inst.x), dbx = dtw(inst.b, inst.x);
    score += dax < dbx ? 1.0 : (dax == dbx ? 0.5 : 0.0);
  }
  return score / static_cast<double>(instances.size());
}

// Exhaustive best 2-partition by inertia over N <= ~16 points.
struct BestPartition {
  double inertia = 0.0;
  std::vector<int> assign;
};

inline BestPartition best_two_partition(const Tensor<double>& pts) {
  const int n = static_cast<int>(pts.dim(0));
  const std::int64_t d = pts.dim(1);
  BestPartition best;
  best.inertia = 1e300;
  for (int mask = 0; mask < (1 << n); ++mask) {
    int count[2] = {0, 0};
    std::vector<double> centroid(static_cast<std::size_t>(2 * d), 0.0);
    for (int i = 0; i < n; ++i) {
      const int g = (mask >> i) & 1;
      ++count[g];
      for (std::int64_t c = 0; c < d; ++c) centroid[static_cast<std::size_t>(g * d + c)] += pts.at(i, c);
    }
    if (count[0] == 0 || count[1] == 0) continue;
    for (int g = 0; g < 2; ++g)
      for (std::int64_t c = 0; c < d; ++c) centroid[static_cast<std::size_t>(g * d + c)] /= count[g];
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      const int g = (mask >> i) & 1;
      for (std::int64_t c = 0; c < d; ++c) {
        const double diff = pts.at(i, c) - centroid[static_cast<std::size_t>(g * d + c)];
        inertia += diff * diff;
      }
    }
    if (inertia < best.inertia) {
      best.inertia = inertia;
      best.assign.assign(static_cast<std::size_t>(n), 0);
      for (int i = 0; i < n; ++i) best.assign[static_cast<std::size_t>(i)] = (mask >> i) & 1;
    }
  }
  return best;
}

}  // namespace s3l::oracles
