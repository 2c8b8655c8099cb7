#include "s3l/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>

#include "s3l/objectives.hpp"

namespace s3l {

std::int64_t levenshtein(std::span<const int> hyp, std::span<const int> ref) {
  const std::size_t n = hyp.size(), m = ref.size();
  std::vector<std::int64_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const std::int64_t sub = prev[j - 1] + (hyp[i - 1] == ref[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double token_error_rate(const std::vector<EvalPair>& pairs) {
  std::int64_t errors = 0, tokens = 0;
  for (const auto& p : pairs) {
    errors += levenshtein(p.hyp, p.ref);
    tokens += static_cast<std::int64_t>(p.ref.size());
  }
  if (tokens == 0) throw DegenerateSignalError("token_error_rate: no reference tokens");
  return static_cast<double>(errors) / static_cast<double>(tokens);
}

double utterance_error_rate(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw ContractError("utterance_error_rate: no pairs");
  std::int64_t wrong = 0;
  for (const auto& p : pairs) wrong += p.hyp == p.ref ? 0 : 1;
  return static_cast<double>(wrong) / static_cast<double>(pairs.size());
}

template <typename T>
std::vector<int> greedy_ctc_decode(const Tensor<T>& log_probs) {
  if (log_probs.rank() != 2) throw DimensionError("greedy_ctc_decode: expected [T x (V+1)]");
  const std::int64_t frames = log_probs.dim(0), symbols = log_probs.dim(1);
  const int blank = static_cast<int>(symbols) - 1;
  std::vector<int> out;
  int prev = -1;
  for (std::int64_t t = 0; t < frames; ++t) {
    int best = 0;
    for (std::int64_t s = 1; s < symbols; ++s)
      if (log_probs.at(t, s) > log_probs.at(t, best)) best = static_cast<int>(s);
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

namespace {

double frame_distance(const Tensor<double>& a, std::int64_t ia, const Tensor<double>& b,
                      std::int64_t ib, AbxDistance kind) {
  const std::int64_t d = a.dim(1);
  if (kind == AbxDistance::Angular) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::int64_t c = 0; c < d; ++c) {
      dot += a.at(ia, c) * b.at(ib, c);
      na += a.at(ia, c) * a.at(ia, c);
      nb += b.at(ib, c) * b.at(ib, c);
    }
    if (na <= 0.0 || nb <= 0.0) throw DegenerateSignalError("abx: zero frame vector");
    const double cosv = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
    return std::acos(cosv) / std::numbers::pi;
  }
  // KL over distribution-valued frames
  double acc = 0.0;
  for (std::int64_t c = 0; c < d; ++c) {
    const double p = std::max(a.at(ia, c), 1e-12);
    const double q = std::max(b.at(ib, c), 1e-12);
    acc += p * std::log(p / q);
  }
  return acc;
}

}  // namespace

double dtw_distance(const Tensor<double>& s1, const Tensor<double>& s2, AbxDistance kind) {
  if (!s1.defined() || !s2.defined() || s1.rank() != 2 || s2.rank() != 2 || s1.dim(1) != s2.dim(1))
    throw ContractError("dtw: need two [T x d] sequences of equal width");
  const std::int64_t n = s1.dim(0), m = s2.dim(0);
  std::vector<double> cost(static_cast<std::size_t>(n * m));
  std::vector<std::int64_t> steps(static_cast<std::size_t>(n * m));
  auto at = [&](auto& v, std::int64_t i, std::int64_t j) -> auto& {
    return v[static_cast<std::size_t>(i * m + j)];
  };
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < m; ++j) {
      const double c = frame_distance(s1, i, s2, j, kind);
      if (i == 0 && j == 0) {
        at(cost, i, j) = c;
        at(steps, i, j) = 1;
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      std::int64_t best_steps = 0;
      // diagonal preferred on ties, then the shorter expansions
      if (i > 0 && j > 0 && at(cost, i - 1, j - 1) < best) {
        best = at(cost, i - 1, j - 1);
        best_steps = at(steps, i - 1, j - 1);
      }
      if (i > 0 && at(cost, i - 1, j) < best) {
        best = at(cost, i - 1, j);
        best_steps = at(steps, i - 1, j);
      }
      if (j > 0 && at(cost, i, j - 1) < best) {
        best = at(cost, i, j - 1);
        best_steps = at(steps, i, j - 1);
      }
      at(cost, i, j) = best + c;
      at(steps, i, j) = best_steps + 1;
    }
  return at(cost, n - 1, m - 1) / static_cast<double>(at(steps, n - 1, m - 1));
}

double abx_score(const std::vector<AbxInstance>& instances, AbxDistance kind) {
  if (instances.empty()) throw ContractError("abx_score: no instances");
  double score = 0.0;
  for (const auto& inst : instances) {
    if (inst.cat_a == inst.cat_b) throw ContractError("abx_score: categories must differ");
    const double dax = dtw_distance(inst.a, inst.x, kind);
    const double dbx = dtw_distance(inst.b, inst.x, kind);
    if (dax < dbx)
      score += 1.0;
    else if (dax == dbx)
      score += 0.5;
  }
  return score / static_cast<double>(instances.size());
}

std::vector<int> pool_labels(const std::vector<int>& frame_labels, std::int64_t t_out,
                             std::int64_t downsample) {
  std::vector<int> out(static_cast<std::size_t>(t_out), -1);
  const std::int64_t t_in = static_cast<std::int64_t>(frame_labels.size());
  for (std::int64_t t = 0; t < t_out; ++t) {
    const std::int64_t lo = t * downsample;
    const std::int64_t hi = std::min(t_in, lo + downsample);
    std::map<int, std::int64_t> counts;
    for (std::int64_t i = lo; i < hi; ++i) {
      const int c = frame_labels[static_cast<std::size_t>(i)];
      if (c >= 0) counts[c] += 1;
    }
    int best = -1;
    std::int64_t best_n = 0;
    for (const auto& [cls, cnt] : counts)
      if (cnt > best_n) {
        best = cls;
        best_n = cnt;
      }
    out[static_cast<std::size_t>(t)] = best;
  }
  return out;
}

double train_softmax_probe(const ProbeData& data, int n_classes, std::uint64_t seed,
                           std::int64_t epochs, double lr) {
  if (data.layer_sets.size() != data.labels.size() || data.layer_sets.empty())
    throw ContractError("probe: features and labels disagree");
  if (n_classes < 2) throw DegenerateSignalError("probe: need at least two classes");

  std::int64_t n_layers = static_cast<std::int64_t>(data.layer_sets[0].size());
  const std::int64_t dim = data.layer_sets[0][0].dim(1);

  // distinct labels present?
  std::vector<bool> seen(static_cast<std::size_t>(n_classes), false);
  for (const auto& utt : data.labels)
    for (const int c : utt)
      if (c >= 0 && c < n_classes) seen[static_cast<std::size_t>(c)] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2)
    throw DegenerateSignalError("probe: dataset carries fewer than two classes");

  // 80/20 split by utterance
  const std::int64_t n_utts = static_cast<std::int64_t>(data.layer_sets.size());
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_utts));
  for (std::int64_t i = 0; i < n_utts; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, "probe-split"));
  for (std::int64_t i = n_utts - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);
  const std::int64_t n_train = std::max<std::int64_t>(1, (n_utts * 8) / 10);

  Tensor<double> logits({std::max<std::int64_t>(n_layers, 1)});
  Tensor<double> w({dim, n_classes});
  Tensor<double> b({n_classes});
  Rng wrng(derive_seed(seed, "probe-init"));
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (std::int64_t i = 0; i < w.numel(); ++i) w.at(i) = wrng.uniform(-bound, bound);
  logits.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);

  std::vector<Tensor<double>> params{logits, w, b};
  AdamState<double> opt;
  opt.init(params);

  auto utterance_loss = [&](std::int64_t u, Tape<double>* tape) -> Tensor<double> {
    const auto& layers = data.layer_sets[static_cast<std::size_t>(u)];
    const auto& labels = data.labels[static_cast<std::size_t>(u)];
    Tensor<double> feats = aggregate_layers(layers, logits, tape);
    Tensor<double> scores = linear(feats, w, b, tape);
    MaskSet labeled;
    labeled.frames = feats.dim(0);
    labeled.span = 1;
    labeled.mask.resize(static_cast<std::size_t>(labeled.frames));
    bool any = false;
    for (std::int64_t t = 0; t < labeled.frames; ++t) {
      const bool on = labels[static_cast<std::size_t>(t)] >= 0;
      labeled.mask[static_cast<std::size_t>(t)] = on;
      any |= on;
    }
    if (!any) return Tensor<double>{};
    std::vector<int> safe(labels.begin(), labels.end());
    for (auto& c : safe)
      if (c < 0) c = 0;  // masked out anyway
    return masked_predictive_loss(scores, safe, labeled, tape);
  };

  for (std::int64_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::int64_t oi = 0; oi < n_train; ++oi) {
      const std::int64_t u = order[static_cast<std::size_t>(oi)];
      Tape<double> tape;
      auto loss = utterance_loss(u, &tape);
      if (!loss.defined()) continue;
      for (auto& p : params) p.zero_grad();
      tape.backward(loss);
      adam_step(params, opt, lr);
    }
  }

  std::int64_t correct = 0, total = 0;
  for (std::int64_t oi = n_train; oi < n_utts; ++oi) {
    const std::int64_t u = order[static_cast<std::size_t>(oi)];
    const auto& labels = data.labels[static_cast<std::size_t>(u)];
    Tensor<double> feats = aggregate_layers(data.layer_sets[static_cast<std::size_t>(u)], logits);
    Tensor<double> scores = linear(feats, w, b);
    for (std::int64_t t = 0; t < scores.dim(0); ++t) {
      const int y = labels[static_cast<std::size_t>(t)];
      if (y < 0) continue;
      int best = 0;
      for (std::int64_t c = 1; c < scores.dim(1); ++c)
        if (scores.at(t, c) > scores.at(t, best)) best = static_cast<int>(c);
      correct += best == y ? 1 : 0;
      ++total;
    }
  }
  if (total == 0) throw DegenerateSignalError("probe: held-out split carries no labeled frames");
  return static_cast<double>(correct) / static_cast<double>(total);
}

namespace {

template <typename T>
Tensor<double> to_double(const Tensor<T>& t) {
  std::vector<double> values(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) values[static_cast<std::size_t>(i)] = static_cast<double>(t.at(i));
  return Tensor<double>(t.shape(), std::move(values));
}

}  // namespace

template <typename T>
double linear_probe_eval(Encoder<T>& encoder, const std::vector<MelSpectrogram>& dataset,
                         int n_classes, AggregateMode mode, std::uint64_t seed) {
  ProbeData data;
  const std::int64_t ds = encoder.cfg.downsample();
  for (const auto& mel : dataset) {
    if (mel.frame_labels.empty()) throw ContractError("linear_probe_eval: unlabeled utterance");
    auto r = encode(encoder, mel);  // frozen: no tape
    auto layers = aggregation_set(encoder, r, mode);
    std::vector<Tensor<double>> dlayers;
    for (const auto& l : layers) dlayers.push_back(to_double(l));
    data.layer_sets.push_back(std::move(dlayers));
    data.labels.push_back(pool_labels(mel.frame_labels, r.final.dim(0), ds));
  }
  return train_softmax_probe(data, n_classes, seed);
}

template <typename T>
EfficiencyReport efficiency_report(Encoder<T>& encoder, const RunMetrics& metrics,
                                   const std::string& checkpoint_path) {
  EfficiencyReport rep;
  rep.trainable_params = encoder.param_count();
  rep.wall_ms_total = metrics.wall_ms_total;
  rep.frames_total = metrics.frames_total;
  rep.steps = metrics.steps;
  constexpr std::int64_t kRefFrames = 100;
  rep.per_layer = mac_estimate(encoder.cfg, kRefFrames);
  for (const auto& l : rep.per_layer) rep.macs_total += l.macs;
  rep.macs_per_frame = static_cast<double>(rep.macs_total) / static_cast<double>(kRefFrames);
  if (!checkpoint_path.empty()) {
    std::error_code ec;
    const auto size = std::filesystem::file_size(checkpoint_path, ec);
    rep.checkpoint_bytes = ec ? 0 : static_cast<std::int64_t>(size);
  }
  return rep;
}

template std::vector<int> greedy_ctc_decode(const Tensor<float>&);
template std::vector<int> greedy_ctc_decode(const Tensor<double>&);
template double linear_probe_eval(Encoder<float>&, const std::vector<MelSpectrogram>&, int,
                                  AggregateMode, std::uint64_t);
template double linear_probe_eval(Encoder<double>&, const std::vector<MelSpectrogram>&, int,
                                  AggregateMode, std::uint64_t);
template EfficiencyReport efficiency_report(Encoder<float>&, const RunMetrics&, const std::string&);
template EfficiencyReport efficiency_report(Encoder<double>&, const RunMetrics&, const std::string&);

}  // namespace s3l
