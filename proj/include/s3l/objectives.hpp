#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "s3l/tensor.hpp"

namespace s3l {

// ---- Masking ----------------------------------------------------------------

// Union of fixed-length spans whose starts fire independently per index.
struct MaskSet {
  std::int64_t frames = 0;
  std::int64_t span = 0;
  std::vector<std::int64_t> starts;
  std::vector<bool> mask;  // size frames

  std::int64_t count() const;
  std::vector<std::int64_t> indices() const;
};

MaskSet mask_spans(std::int64_t frames, double start_prob, std::int64_t span, std::uint64_t seed);

// ---- Similarities and contrastive loss --------------------------------------

double cosine_sim(std::span<const double> a, std::span<const double> b);

// Student/teacher projections plus the in-utterance distractor sets. The
// positive index i must appear in its own D_i; the teacher side is treated
// as a constant (no gradient flows into it).
template <typename T>
struct ContrastiveBatch {
  Tensor<T> student;  // [T x P]
  Tensor<T> teacher;  // [T x P]
  T tau = static_cast<T>(0.1);
  std::vector<std::vector<std::int64_t>> distractors;
};

// L = -mean_i log( exp(phi(z_i, z'_i)/tau) / sum_{j in D_i} exp(phi(z_i, z'_j)/tau) )
template <typename T>
Tensor<T> contrastive_loss(const ContrastiveBatch<T>& batch, Tape<T>* tape = nullptr);

struct DistractorPolicy {
  enum class Kind { InUtteranceAll, InUtteranceK };
  Kind kind = Kind::InUtteranceAll;
  std::int64_t k = 0;
  std::uint64_t seed = 0;
};

// D_i sets over one utterance of T frames; i is always included.
std::vector<std::vector<std::int64_t>> sample_distractors(std::int64_t frames,
                                                          const DistractorPolicy& policy);

// ---- Masked predictive loss and kmeans targets -------------------------------

// Mean over masked frames of -log softmax(logits_t)[target_t]. Unmasked
// frames contribute nothing, bit-level.
template <typename T>
Tensor<T> masked_predictive_loss(const Tensor<T>& logits, const std::vector<int>& targets,
                                 const MaskSet& mask, Tape<T>* tape = nullptr);

struct KmeansModel {
  Tensor<double> centroids;  // [k x d]
  std::vector<double> inertia_history;

  std::int64_t k() const { return centroids.dim(0); }
  std::int64_t dim() const { return centroids.dim(1); }
};

// Lloyd iterations with kmeans++ seeding; empty clusters re-seed to the
// farthest point. Inertia history is non-increasing.
KmeansModel kmeans_fit(const Tensor<double>& features, std::int64_t k, std::int64_t iters,
                       std::uint64_t seed);

// Nearest centroid by squared euclidean distance; ties pick the lowest index.
std::vector<int> kmeans_assign(const Tensor<double>& features, const KmeansModel& model);

// ---- CTC ---------------------------------------------------------------------

// log_probs is [T x (V+1)] with the blank in the last column; rows are
// expected to be log-softmax normalized. Differentiable via the
// forward-backward recursion in log space.
template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& log_probs, const std::vector<int>& labels,
                   Tape<T>* tape = nullptr);

}  // namespace s3l
