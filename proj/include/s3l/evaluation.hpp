#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "s3l/encoder.hpp"
#include "s3l/tensor.hpp"

namespace s3l {

struct EvalPair {
  std::vector<int> hyp;
  std::vector<int> ref;
};

std::int64_t levenshtein(std::span<const int> hyp, std::span<const int> ref);

// sum(edit distance) / sum(|ref|); unbounded above.
double token_error_rate(const std::vector<EvalPair>& pairs);

// Fraction of utterances with any mismatch (exact-match 0/1 per pair).
double utterance_error_rate(const std::vector<EvalPair>& pairs);

// Per-frame argmax (ties to the lower index), collapse adjacent repeats,
// drop blanks. The blank is the last column, matching ctc_loss.
template <typename T>
std::vector<int> greedy_ctc_decode(const Tensor<T>& log_probs);

enum class AbxDistance { Angular, Kl };

struct AbxInstance {
  Tensor<double> a, b, x;  // [T x d] representation sequences
  int cat_a = 0;           // category of a and x
  int cat_b = 1;           // category of b, distinct from cat_a
};

// Cost of the best DTW alignment averaged over its path length.
double dtw_distance(const Tensor<double>& s1, const Tensor<double>& s2, AbxDistance kind);

// Fraction of instances with d(a, x) < d(b, x); exact ties count 0.5.
double abx_score(const std::vector<AbxInstance>& instances,
                 AbxDistance kind = AbxDistance::Angular);

// Frame-level probe input: one aggregation set (encoder layers) plus frame
// labels per utterance; -1 labels are skipped.
struct ProbeData {
  std::vector<std::vector<Tensor<double>>> layer_sets;
  std::vector<std::vector<int>> labels;
};

// Trains aggregation logits + a softmax classifier on an 80/20 by-utterance
// split and returns held-out frame accuracy. Deterministic per seed.
double train_softmax_probe(const ProbeData& data, int n_classes, std::uint64_t seed,
                           std::int64_t epochs = 40, double lr = 0.05);

// Majority label over each output frame's stride window; ties to the lower
// class id, unlabeled windows get -1.
std::vector<int> pool_labels(const std::vector<int>& frame_labels, std::int64_t t_out,
                             std::int64_t downsample);

// Frozen-encoder linear probe on frame-level phone classes.
template <typename T>
double linear_probe_eval(Encoder<T>& encoder, const std::vector<MelSpectrogram>& dataset,
                         int n_classes, AggregateMode mode, std::uint64_t seed);

struct RunMetrics {
  double wall_ms_total = 0.0;
  std::int64_t frames_total = 0;
  std::int64_t steps = 0;
};

struct EfficiencyReport {
  std::int64_t trainable_params = 0;
  std::int64_t checkpoint_bytes = 0;
  double wall_ms_total = 0.0;
  std::int64_t frames_total = 0;
  std::int64_t steps = 0;
  std::vector<MacEstimate> per_layer;  // for a 100-frame input
  std::int64_t macs_total = 0;
  double macs_per_frame = 0.0;
};

template <typename T>
EfficiencyReport efficiency_report(Encoder<T>& encoder, const RunMetrics& metrics,
                                   const std::string& checkpoint_path = "");

}  // namespace s3l
