#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "s3l/config.hpp"
#include "s3l/encoder.hpp"
#include "s3l/objectives.hpp"

namespace s3l {

// ---- EMA -----------------------------------------------------------------

// theta_t <- alpha * theta_t + (1 - alpha) * theta_s, elementwise.
template <typename T>
void ema_update(std::vector<Tensor<T>>& teacher, const std::vector<Tensor<T>>& student, T alpha);
template <typename T>
void ema_update(Encoder<T>& teacher, Encoder<T>& student, T alpha);

// ---- Batch planning --------------------------------------------------------

struct Batch {
  std::vector<std::int64_t> utterances;  // indices into the manifest/corpus
  std::vector<std::int64_t> frames;      // per-utterance frame counts (trimmed)
};

struct BatchPlan {
  std::vector<Batch> batches;
  std::int64_t frame_budget = 0;

  std::int64_t total_frames() const;
  std::int64_t padded_frames() const;  // sum of batch_size * max_frames
  double padding_waste() const;        // (padded - real) / padded
};

// Seeded shuffle, then length-sorted first-fit-decreasing packing within
// windows of 64 utterances. Over-budget utterances count as trimmed to the
// budget. Every utterance lands in exactly one batch.
BatchPlan plan_batches(const std::vector<std::int64_t>& frame_counts, std::int64_t frame_budget,
                       std::uint64_t seed);

// Naive fixed-count batching over the same shuffle, for the waste comparison
// and the batching-off ablation.
BatchPlan plan_fixed(const std::vector<std::int64_t>& frame_counts, std::int64_t per_batch,
                     std::uint64_t seed);

// ---- LR schedule -----------------------------------------------------------

struct ScheduleConfig {
  enum class Kind { Cosine, TriPhase };
  Kind kind = Kind::Cosine;
  double base_lr = 3e-4;
  std::int64_t total_steps = 1;
  double warm_frac = 0.1;
  double hold_frac = 0.8;
};

// cosine: base * (1 + cos(pi * step / total)) / 2.
// tri_phase: linear warmup, hold at base, exponential decay to base * 0.01.
double lr_at(const ScheduleConfig& s, std::int64_t step);

// ---- Checkpoints -----------------------------------------------------------

struct CheckpointMeta {
  std::uint32_t version = 1;
  std::int64_t step = 0;
  std::int64_t adam_t = 0;
  double alpha = 0.999;
  std::uint64_t seed = 0;
  std::string objective = "contrastive";
  std::string head = "none";  // none | frame | ctc
  int n_classes = 0;
  int kmeans_stage = 0;
  std::string encoder_text;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

// On-disk layout, little-endian: "S3LD", u32 version, u32 length + config
// text (key=value block, then an [encoder] grammar section), u32 array
// count, then named f32 arrays with shape headers, and a trailing u64
// FNV-1a checksum so a corrupted byte is detected rather than loaded.
struct Checkpoint {
  CheckpointMeta meta;
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---- Corpus ----------------------------------------------------------------

struct CorpusItem {
  std::string id;
  Waveform wave;            // trimmed to the frame budget
  MelSpectrogram clean_mel; // cached teacher-branch features
};

struct Corpus {
  std::vector<CorpusItem> items;

  std::vector<std::int64_t> frame_counts() const;
  static Corpus load(const Manifest& manifest, const RunConfig& cfg);
};

// ---- Step records ----------------------------------------------------------

struct StepRecord {
  std::int64_t step = 0;
  std::string phase;
  double loss = 0.0;
  double lr = 0.0;
  std::int64_t frames = 0;
  double wall_ms = 0.0;
};

using StepCallback = std::function<void(const StepRecord&)>;

// ---- Pretraining -----------------------------------------------------------

// Owns the student/teacher pair and the optimizer; one optimizer step per
// step_once() accumulates cfg.accum microbatches, then applies Adam and the
// EMA teacher update. All randomness is derived from (seed, utterance,
// microbatch index), so resuming from a checkpoint replays identically.
template <typename T>
class PretrainRun {
 public:
  PretrainRun(const RunConfig& cfg, Corpus corpus);

  void restore(const Checkpoint& ckpt);
  Checkpoint snapshot();

  StepRecord step_once();
  // Runs to cfg.steps; checkpoints into <out>/checkpoint.s3ld per
  // cfg.checkpoint_every when out_dir is non-empty.
  void run(const StepCallback& on_step);

  Encoder<T>& student() { return student_; }
  Encoder<T>& teacher() { return teacher_; }
  const Corpus& corpus() const { return corpus_; }
  std::int64_t step() const { return step_; }
  const EncoderConfig& encoder_config() const { return enc_cfg_; }

 private:
  Batch batch_for(std::int64_t micro_index);
  Tensor<T> utterance_loss(std::int64_t utt, std::uint64_t micro, Tape<T>& tape);
  void refit_kmeans(int stage);
  void rebuild_targets(int stage);

  RunConfig cfg_;
  EncoderConfig enc_cfg_;
  Corpus corpus_;
  Encoder<T> student_;
  Encoder<T> teacher_;  // contrastive objective only
  Tensor<T> pred_head_w_, pred_head_b_;  // predictive objective only
  std::vector<Tensor<T>> params_;
  AdamState<T> opt_;
  ScheduleConfig schedule_;
  std::int64_t step_ = 0;
  int kmeans_stage_ = 0;
  std::optional<KmeansModel> kmeans_;
  std::vector<std::vector<int>> target_cache_;  // per utterance, at output rate

  std::vector<std::int64_t> epoch_batch_counts_;
  std::vector<BatchPlan> epoch_plans_;
};

// ---- Finetuning ------------------------------------------------------------

template <typename T>
struct FinetuneResult {
  Encoder<T> encoder;
  Tensor<T> head_w, head_b;
  std::string head_kind;
  int n_classes = 0;
};

// Trains the selected head (frame classifier or CTC) on top of a frozen or
// trainable encoder with the tri-phase schedule. Returns the trained head;
// aggregation logits live inside the encoder.
template <typename T>
FinetuneResult<T> finetune(const RunConfig& cfg, Encoder<T> encoder, const Corpus& corpus,
                           const StepCallback& on_step);

// Checkpoint <-> run state helpers shared by the CLI.
template <typename T>
Checkpoint encoder_to_checkpoint(Encoder<T>& encoder, const CheckpointMeta& meta);
template <typename T>
Encoder<T> encoder_from_checkpoint(const Checkpoint& ckpt, Role role);

}  // namespace s3l
