#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s3l/augment.hpp"
#include "s3l/dsp.hpp"

namespace s3l {

struct ManifestEntry {
  std::string id;
  std::string source;  // WAV path or "synth:<seed>"
  double duration_s = 0.0;
  bool labeled = false;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  void validate() const;  // unique ids, positive durations
};

// Line-delimited JSON records, one entry per line.
void write_manifest(const std::string& path, const Manifest& m);
Manifest read_manifest(const std::string& path);

// Flat key=value run configuration with dotted namespaces. Every module's
// knobs live here; unknown keys are rejected by name.
struct RunConfig {
  std::uint64_t seed = 42;
  std::string out_dir = "out";
  std::string manifest_path;

  DspConfig dsp;
  SynthSpec synth;
  std::int64_t synth_n = 200;
  bool synth_write_wavs = false;

  AugmentPolicy augment;
  std::string noise_kind = "white";  // white | babble

  std::string encoder_preset = "tiny";  // paper | tiny
  std::string encoder_file;             // grammar file path; overrides the preset
  double encoder_dropout = 0.0;
  std::string aggregate = "top";  // top | all

  std::string objective = "contrastive";  // contrastive | predictive
  double tau = 0.1;
  std::string distractors = "all";  // all | k
  std::int64_t distractor_k = 32;
  double mask_start_prob = 0.08;
  std::int64_t mask_span = 10;
  std::int64_t kmeans_k = 16;
  std::int64_t kmeans_iters = 20;
  std::int64_t stage2_layer = -1;  // attention ordinal; -1 = last layer of the first stage

  std::int64_t steps = 300;
  std::int64_t frame_budget = 7200;  // ~72 s of 10 ms frames
  std::int64_t accum = 4;
  double lr = 3e-4;
  std::string schedule = "cosine";  // cosine | tri_phase
  double warm_frac = 0.1;
  double hold_frac = 0.8;
  double alpha = 0.999;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  std::int64_t checkpoint_every = 100;
  bool augment_enabled = true;  // noise + SpecAugment (student branch)
  bool shift_enabled = true;    // positional shift (teacher branch)
  std::string batching = "dynamic";  // dynamic | fixed
  std::int64_t fixed_batch_size = 8;

  std::string head = "frame";  // frame | ctc
  bool train_encoder = false;
  std::int64_t finetune_steps = 200;
  double finetune_lr = 3e-4;
  bool no_pretrain = false;

  bool eval_abx = false;
  std::int64_t probe_epochs = 40;
  std::int64_t abx_instances = 200;

  void validate() const;
};

// file values < overrides; both reject unknown keys with the key name.
RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides);
RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::pair<std::string, std::string>>& overrides);
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Full resolved key=value echo; parsing it back reproduces the config.
std::string echo_config(const RunConfig& cfg);

}  // namespace s3l
