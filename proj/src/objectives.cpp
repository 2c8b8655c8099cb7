#include "s3l/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace s3l {

std::int64_t MaskSet::count() const {
  return std::count(mask.begin(), mask.end(), true);
}

std::vector<std::int64_t> MaskSet::indices() const {
  std::vector<std::int64_t> out;
  for (std::int64_t t = 0; t < frames; ++t)
    if (mask[static_cast<std::size_t>(t)]) out.push_back(t);
  return out;
}

MaskSet mask_spans(std::int64_t frames, double start_prob, std::int64_t span, std::uint64_t seed) {
  if (!(start_prob >= 0.0 && start_prob <= 1.0))
    throw ConfigError("mask_spans: start_prob must lie in [0, 1]");
  if (span < 1 || span > frames) throw ConfigError("mask_spans: need 1 <= span <= frames");
  MaskSet m;
  m.frames = frames;
  m.span = span;
  m.mask.assign(static_cast<std::size_t>(frames), false);
  Rng rng(derive_seed(seed, "mask-spans"));
  for (std::int64_t t = 0; t < frames; ++t) {
    if (rng.uniform() < start_prob) {
      m.starts.push_back(t);
      for (std::int64_t u = t; u < std::min(frames, t + span); ++u)
        m.mask[static_cast<std::size_t>(u)] = true;
    }
  }
  return m;
}

double cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("cosine_sim: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na <= 0.0 || nb <= 0.0) throw DegenerateSignalError("cosine_sim: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::vector<std::int64_t>> sample_distractors(std::int64_t frames,
                                                          const DistractorPolicy& policy) {
  if (frames < 1) throw ContractError("sample_distractors: empty utterance");
  std::vector<std::vector<std::int64_t>> out(static_cast<std::size_t>(frames));
  if (policy.kind == DistractorPolicy::Kind::InUtteranceAll) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(frames));
    std::iota(all.begin(), all.end(), 0);
    for (auto& d : out) d = all;
    return out;
  }
  if (policy.k == 0) {
    for (std::int64_t i = 0; i < frames; ++i) out[static_cast<std::size_t>(i)] = {i};
    return out;
  }
  if (frames == 1)
    throw DegenerateUtteranceError("sample_distractors: cannot draw negatives from a 1-frame utterance");
  if (policy.k >= frames)
    throw ConfigError("sample_distractors: k must be smaller than the frame count");

  Rng rng(derive_seed(policy.seed, "distractors"));
  for (std::int64_t i = 0; i < frames; ++i) {
    std::vector<std::int64_t> pool;
    pool.reserve(static_cast<std::size_t>(frames - 1));
    for (std::int64_t j = 0; j < frames; ++j)
      if (j != i) pool.push_back(j);
    // partial Fisher-Yates for k draws without replacement
    for (std::int64_t d = 0; d < policy.k; ++d) {
      const std::int64_t j = d + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(pool.size() - static_cast<std::size_t>(d))));
      std::swap(pool[static_cast<std::size_t>(d)], pool[static_cast<std::size_t>(j)]);
    }
    auto& di = out[static_cast<std::size_t>(i)];
    di.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(policy.k));
    di.push_back(i);
    std::sort(di.begin(), di.end());
  }
  return out;
}

template <typename T>
Tensor<T> contrastive_loss(const ContrastiveBatch<T>& batch, Tape<T>* tape) {
  if (!(batch.tau > T{0})) throw ConfigError("contrastive_loss: tau must be positive");
  const Tensor<T>& z = batch.student;
  const Tensor<T>& zt = batch.teacher;
  if (z.rank() != 2 || zt.rank() != 2 || z.shape() != zt.shape())
    throw DimensionError("contrastive_loss: student/teacher shapes differ");
  const std::int64_t frames = z.dim(0), dim = z.dim(1);
  if (static_cast<std::int64_t>(batch.distractors.size()) != frames)
    throw ContractError("contrastive_loss: distractor sets do not match the frame count");

  std::vector<double> ns(static_cast<std::size_t>(frames)), nt(static_cast<std::size_t>(frames));
  for (std::int64_t i = 0; i < frames; ++i) {
    double a = 0.0, b = 0.0;
    for (std::int64_t c = 0; c < dim; ++c) {
      a += static_cast<double>(z.at(i, c)) * static_cast<double>(z.at(i, c));
      b += static_cast<double>(zt.at(i, c)) * static_cast<double>(zt.at(i, c));
    }
    if (a <= 0.0 || b <= 0.0) throw DegenerateSignalError("contrastive_loss: zero projection row");
    ns[static_cast<std::size_t>(i)] = std::sqrt(a);
    nt[static_cast<std::size_t>(i)] = std::sqrt(b);
  }

  const double tau = static_cast<double>(batch.tau);
  // cosine similarities per (i, j in D_i), plus softmax weights p_ij
  std::vector<std::vector<double>> sims(static_cast<std::size_t>(frames));
  std::vector<std::vector<double>> probs(static_cast<std::size_t>(frames));
  double total = 0.0;
  for (std::int64_t i = 0; i < frames; ++i) {
    const auto& di = batch.distractors[static_cast<std::size_t>(i)];
    if (di.empty()) throw ContractError("contrastive_loss: empty distractor set");
    bool has_self = false;
    double self_sim = 0.0;
    auto& srow = sims[static_cast<std::size_t>(i)];
    srow.resize(di.size());
    for (std::size_t di_idx = 0; di_idx < di.size(); ++di_idx) {
      const std::int64_t j = di[di_idx];
      if (j < 0 || j >= frames) throw ContractError("contrastive_loss: distractor index out of range");
      double dot = 0.0;
      for (std::int64_t c = 0; c < dim; ++c)
        dot += static_cast<double>(z.at(i, c)) * static_cast<double>(zt.at(j, c));
      srow[di_idx] = dot / (ns[static_cast<std::size_t>(i)] * nt[static_cast<std::size_t>(j)]);
      if (j == i) {
        has_self = true;
        self_sim = srow[di_idx];
      }
    }
    if (!has_self) throw ContractError("contrastive_loss: positive index missing from D_i");

    double mx = -std::numeric_limits<double>::infinity();
    for (const double s : srow) mx = std::max(mx, s / tau);
    double acc = 0.0;
    for (const double s : srow) acc += std::exp(s / tau - mx);
    const double lse = mx + std::log(acc);
    total += lse - self_sim / tau;

    auto& prow = probs[static_cast<std::size_t>(i)];
    prow.resize(di.size());
    for (std::size_t di_idx = 0; di_idx < di.size(); ++di_idx)
      prow[di_idx] = std::exp(srow[di_idx] / tau - lse);
  }

  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(frames)));
  if (tape != nullptr && z.requires_grad()) {
    loss.set_requires_grad(true);
    tape->record(
        "contrastive_loss", {z}, loss,
        [z = z, zt = zt, loss = loss, distractors = batch.distractors, sims = sims, probs = probs,
         ns = ns, nt = nt, frames = frames, dim = dim, tau = tau]() mutable {
          const double g = static_cast<double>(loss.grad()[0]) / static_cast<double>(frames);
          for (std::int64_t i = 0; i < frames; ++i) {
            const auto& di = distractors[static_cast<std::size_t>(i)];
            const auto& srow = sims[static_cast<std::size_t>(i)];
            const auto& prow = probs[static_cast<std::size_t>(i)];
            for (std::size_t di_idx = 0; di_idx < di.size(); ++di_idx) {
              const std::int64_t j = di[di_idx];
              // dL/ds_ij = g * (p_ij - [j == i]) / tau
              const double ds = g * (prow[di_idx] - (j == i ? 1.0 : 0.0)) / tau;
              if (ds == 0.0) continue;
              // ds_ij/dz_i = (zt_j / |zt_j| - s_ij * z_i / |z_i|) / |z_i|
              const double inv_ns = 1.0 / ns[static_cast<std::size_t>(i)];
              const double inv_nt = 1.0 / nt[static_cast<std::size_t>(j)];
              for (std::int64_t c = 0; c < dim; ++c) {
                const double zi = static_cast<double>(z.at(i, c));
                const double ztj = static_cast<double>(zt.at(j, c));
                z.grad()[i * dim + c] +=
                    static_cast<T>(ds * (ztj * inv_nt - srow[di_idx] * zi * inv_ns) * inv_ns);
              }
            }
          }
        });
  }
  return loss;
}

template <typename T>
Tensor<T> masked_predictive_loss(const Tensor<T>& logits, const std::vector<int>& targets,
                                 const MaskSet& mask, Tape<T>* tape) {
  if (logits.rank() != 2) throw DimensionError("masked_predictive_loss: expected [T x k] logits");
  const std::int64_t frames = logits.dim(0), classes = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != frames)
    throw DimensionError("masked_predictive_loss: target count mismatch");
  if (mask.frames != frames) throw ContractError("masked_predictive_loss: mask size mismatch");
  const std::int64_t masked = mask.count();
  if (masked < 1) throw EmptyMaskError("masked_predictive_loss: empty mask set");

  double total = 0.0;
  for (std::int64_t t = 0; t < frames; ++t) {
    if (!mask.mask[static_cast<std::size_t>(t)]) continue;
    const int y = targets[static_cast<std::size_t>(t)];
    if (y < 0 || y >= classes) throw ContractError("masked_predictive_loss: target out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(logits.at(t, c)));
    double acc = 0.0;
    for (std::int64_t c = 0; c < classes; ++c) acc += std::exp(static_cast<double>(logits.at(t, c)) - mx);
    total += mx + std::log(acc) - static_cast<double>(logits.at(t, y));
  }

  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(masked)));
  if (wants_grad(tape, {logits})) {
    loss.set_requires_grad(true);
    tape->record("masked_predictive_loss", {logits}, loss,
                 [logits = logits, loss = loss, targets = targets, mask = mask, frames = frames,
                  classes = classes, masked = masked]() mutable {
                   const T g = loss.grad()[0] / static_cast<T>(masked);
                   for (std::int64_t t = 0; t < frames; ++t) {
                     if (!mask.mask[static_cast<std::size_t>(t)]) continue;
                     double mx = -std::numeric_limits<double>::infinity();
                     for (std::int64_t c = 0; c < classes; ++c)
                       mx = std::max(mx, static_cast<double>(logits.at(t, c)));
                     double acc = 0.0;
                     for (std::int64_t c = 0; c < classes; ++c)
                       acc += std::exp(static_cast<double>(logits.at(t, c)) - mx);
                     for (std::int64_t c = 0; c < classes; ++c) {
                       const double p = std::exp(static_cast<double>(logits.at(t, c)) - mx) / acc;
                       const double onehot = c == targets[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
                       logits.grad()[t * classes + c] += g * static_cast<T>(p - onehot);
                     }
                   }
                 });
  }
  return loss;
}

namespace {

double sq_dist(const Tensor<double>& a, std::int64_t ra, const Tensor<double>& b, std::int64_t rb) {
  const std::int64_t d = a.dim(1);
  double acc = 0.0;
  for (std::int64_t c = 0; c < d; ++c) {
    const double diff = a.at(ra, c) - b.at(rb, c);
    acc += diff * diff;
  }
  return acc;
}

}  // namespace

KmeansModel kmeans_fit(const Tensor<double>& features, std::int64_t k, std::int64_t iters,
                       std::uint64_t seed) {
  if (features.rank() != 2) throw DimensionError("kmeans_fit: expected [N x d] features");
  const std::int64_t n = features.dim(0), d = features.dim(1);
  if (k < 1 || n < k) throw ConfigError("kmeans_fit: need N >= k >= 1");

  Rng rng(derive_seed(seed, "kmeans"));
  KmeansModel model;
  model.centroids = Tensor<double>({k, d});

  // kmeans++ seeding
  std::vector<std::int64_t> chosen;
  chosen.push_back(static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))));
  std::vector<double> best_d2(static_cast<std::size_t>(n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) best_d2[static_cast<std::size_t>(i)] = sq_dist(features, i, features, chosen[0]);
  while (static_cast<std::int64_t>(chosen.size()) < k) {
    double total = 0.0;
    for (const double v : best_d2) total += v;
    std::int64_t pick = 0;
    if (total <= 0.0) {
      pick = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      double r = rng.uniform() * total;
      for (std::int64_t i = 0; i < n; ++i) {
        r -= best_d2[static_cast<std::size_t>(i)];
        if (r <= 0.0) {
          pick = i;
          break;
        }
        pick = i;
      }
    }
    chosen.push_back(pick);
    for (std::int64_t i = 0; i < n; ++i)
      best_d2[static_cast<std::size_t>(i)] =
          std::min(best_d2[static_cast<std::size_t>(i)], sq_dist(features, i, features, pick));
  }
  for (std::int64_t c = 0; c < k; ++c)
    for (std::int64_t j = 0; j < d; ++j) model.centroids.at(c, j) = features.at(chosen[static_cast<std::size_t>(c)], j);

  std::vector<int> assign(static_cast<std::size_t>(n), 0);
  for (std::int64_t it = 0; it < iters; ++it) {
    // assignment
    double inertia = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      int best = 0;
      double best_val = sq_dist(features, i, model.centroids, 0);
      for (std::int64_t c = 1; c < k; ++c) {
        const double v = sq_dist(features, i, model.centroids, c);
        if (v < best_val) {
          best_val = v;
          best = static_cast<int>(c);
        }
      }
      assign[static_cast<std::size_t>(i)] = best;
      inertia += best_val;
    }
    model.inertia_history.push_back(inertia);

    // update
    std::vector<std::int64_t> counts(static_cast<std::size_t>(k), 0);
    Tensor<double> sums({k, d});
    for (std::int64_t i = 0; i < n; ++i) {
      const int c = assign[static_cast<std::size_t>(i)];
      counts[static_cast<std::size_t>(c)] += 1;
      for (std::int64_t j = 0; j < d; ++j) sums.at(c, j) += features.at(i, j);
    }
    for (std::int64_t c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // re-seed an empty cluster to the farthest point from its centroid
        std::int64_t far = 0;
        double far_val = -1.0;
        for (std::int64_t i = 0; i < n; ++i) {
          const double v = sq_dist(features, i, model.centroids, assign[static_cast<std::size_t>(i)]);
          if (v > far_val) {
            far_val = v;
            far = i;
          }
        }
        for (std::int64_t j = 0; j < d; ++j) model.centroids.at(c, j) = features.at(far, j);
      } else {
        for (std::int64_t j = 0; j < d; ++j)
          model.centroids.at(c, j) = sums.at(c, j) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  return model;
}

std::vector<int> kmeans_assign(const Tensor<double>& features, const KmeansModel& model) {
  if (features.rank() != 2 || features.dim(1) != model.dim())
    throw DimensionError("kmeans_assign: feature dim mismatch");
  const std::int64_t n = features.dim(0);
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    double best_val = sq_dist(features, i, model.centroids, 0);
    for (std::int64_t c = 1; c < model.k(); ++c) {
      const double v = sq_dist(features, i, model.centroids, c);
      if (v < best_val) {  // strict: ties keep the lowest index
        best_val = v;
        best = static_cast<int>(c);
      }
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

namespace {

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

}  // namespace

template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& log_probs, const std::vector<int>& labels, Tape<T>* tape) {
  if (log_probs.rank() != 2) throw DimensionError("ctc_loss: expected [T x (V+1)] log probs");
  const std::int64_t frames = log_probs.dim(0);
  const std::int64_t vocab = log_probs.dim(1) - 1;  // blank is the last column
  if (vocab < 1) throw DimensionError("ctc_loss: need at least one non-blank symbol");
  const std::int64_t len = static_cast<std::int64_t>(labels.size());
  for (const int l : labels)
    if (l < 0 || l >= vocab) throw ContractError("ctc_loss: label outside the vocabulary");

  std::int64_t repeats = 0;
  for (std::int64_t i = 1; i < len; ++i)
    if (labels[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i - 1)]) ++repeats;
  if (len + repeats > frames)
    throw InfeasibleAlignmentError("ctc_loss: " + std::to_string(len) + " labels (" +
                                   std::to_string(repeats) + " repeats) need more than " +
                                   std::to_string(frames) + " frames");

  const std::int64_t states = 2 * len + 1;
  const double ninf = -std::numeric_limits<double>::infinity();
  auto label_of = [&](std::int64_t s) -> std::int64_t {
    return s % 2 == 0 ? vocab : labels[static_cast<std::size_t>(s / 2)];
  };
  auto lp = [&](std::int64_t t, std::int64_t s) {
    return static_cast<double>(log_probs.at(t, label_of(s)));
  };

  std::vector<double> alpha(static_cast<std::size_t>(frames * states), ninf);
  auto a_at = [&](std::int64_t t, std::int64_t s) -> double& {
    return alpha[static_cast<std::size_t>(t * states + s)];
  };
  a_at(0, 0) = lp(0, 0);
  if (states > 1) a_at(0, 1) = lp(0, 1);
  for (std::int64_t t = 1; t < frames; ++t)
    for (std::int64_t s = 0; s < states; ++s) {
      double acc = a_at(t - 1, s);
      if (s >= 1) acc = log_add(acc, a_at(t - 1, s - 1));
      if (s >= 2 && label_of(s) != vocab && label_of(s) != label_of(s - 2))
        acc = log_add(acc, a_at(t - 1, s - 2));
      if (acc != ninf) a_at(t, s) = acc + lp(t, s);
    }

  double ll = a_at(frames - 1, states - 1);
  if (states > 1) ll = log_add(ll, a_at(frames - 1, states - 2));
  if (ll == ninf) throw InfeasibleAlignmentError("ctc_loss: no feasible alignment");

  Tensor<T> loss = Tensor<T>::scalar(static_cast<T>(-ll));
  if (wants_grad(tape, {log_probs})) {
    // beta excludes the emission at its own frame: beta[T-1][final] = 0
    std::vector<double> beta(static_cast<std::size_t>(frames * states), ninf);
    auto b_at = [&](std::int64_t t, std::int64_t s) -> double& {
      return beta[static_cast<std::size_t>(t * states + s)];
    };
    b_at(frames - 1, states - 1) = 0.0;
    if (states > 1) b_at(frames - 1, states - 2) = 0.0;
    for (std::int64_t t = frames - 2; t >= 0; --t)
      for (std::int64_t s = 0; s < states; ++s) {
        double acc = b_at(t + 1, s) == ninf ? ninf : b_at(t + 1, s) + lp(t + 1, s);
        if (s + 1 < states && b_at(t + 1, s + 1) != ninf)
          acc = log_add(acc, b_at(t + 1, s + 1) + lp(t + 1, s + 1));
        if (s + 2 < states && label_of(s + 2) != vocab && label_of(s + 2) != label_of(s) &&
            b_at(t + 1, s + 2) != ninf)
          acc = log_add(acc, b_at(t + 1, s + 2) + lp(t + 1, s + 2));
        b_at(t, s) = acc;
      }

    loss.set_requires_grad(true);
    tape->record("ctc_loss", {log_probs}, loss,
                 [log_probs = log_probs, loss = loss, alpha = alpha, beta = beta, labels = labels,
                  frames = frames, states = states, vocab = vocab, ll = ll]() mutable {
                   auto label_of2 = [&](std::int64_t s) -> std::int64_t {
                     return s % 2 == 0 ? vocab : labels[static_cast<std::size_t>(s / 2)];
                   };
                   const T g = loss.grad()[0];
                   const std::int64_t cols = vocab + 1;
                   for (std::int64_t t = 0; t < frames; ++t) {
                     for (std::int64_t k = 0; k < cols; ++k) {
                       double acc = -std::numeric_limits<double>::infinity();
                       for (std::int64_t s = 0; s < states; ++s) {
                         if (label_of2(s) != k) continue;
                         const double a = alpha[static_cast<std::size_t>(t * states + s)];
                         const double b = beta[static_cast<std::size_t>(t * states + s)];
                         if (a == -std::numeric_limits<double>::infinity() ||
                             b == -std::numeric_limits<double>::infinity())
                           continue;
                         acc = log_add(acc, a + b);
                       }
                       if (acc == -std::numeric_limits<double>::infinity()) continue;
                       // dL/dlp[t][k] = -exp(logsumexp_s(alpha+beta) - ll)
                       log_probs.grad()[t * cols + k] -= g * static_cast<T>(std::exp(acc - ll));
                     }
                   }
                 });
  }
  return loss;
}

#define S3L_INSTANTIATE_OBJECTIVES(T)                                                             \
  template struct ContrastiveBatch<T>;                                                            \
  template Tensor<T> contrastive_loss(const ContrastiveBatch<T>&, Tape<T>*);                      \
  template Tensor<T> masked_predictive_loss(const Tensor<T>&, const std::vector<int>&,            \
                                            const MaskSet&, Tape<T>*);                            \
  template Tensor<T> ctc_loss(const Tensor<T>&, const std::vector<int>&, Tape<T>*);

S3L_INSTANTIATE_OBJECTIVES(float)
S3L_INSTANTIATE_OBJECTIVES(double)

}  // namespace s3l
