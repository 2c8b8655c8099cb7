#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "s3l/evaluation.hpp"
#include "s3l/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace s3l;

namespace {

// Exit codes: 0 ok, 2 usage/config, 3 divergence, 4 IO/version.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;  // raw key=value overrides
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key=value config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "master run seed");
  cmd->add_option("--set", args.sets, "extra config override key=value (repeatable)");
}

RunConfig resolve_config(const CommonArgs& args,
                         std::vector<std::pair<std::string, std::string>> overrides) {
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) overrides.emplace_back("seed", std::to_string(*args.seed));
  if (!args.out_dir.empty()) overrides.emplace_back("out", args.out_dir);
  return load_config(args.config_path, overrides);
}

std::uint64_t corpus_item_seed(const RunConfig& cfg, std::int64_t index) {
  return derive_seed(cfg.seed, "corpus", static_cast<std::uint64_t>(index));
}

Manifest implicit_manifest(const RunConfig& cfg) {
  Manifest m;
  for (std::int64_t i = 0; i < cfg.synth_n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "utt%04lld", static_cast<long long>(i));
    m.entries.push_back({id, "synth:" + std::to_string(corpus_item_seed(cfg, i)), 1.0, true});
  }
  return m;
}

Manifest manifest_for(const RunConfig& cfg) {
  if (!cfg.manifest_path.empty()) return read_manifest(cfg.manifest_path);
  if (cfg.synth_n < 1) throw ConfigError("config: synth.n must be positive for an implicit corpus");
  return implicit_manifest(cfg);
}

class MetricsLog {
 public:
  MetricsLog(const std::string& dir, const std::string& name, const RunConfig& cfg) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    path_ = dir + "/" + name;
    out_.open(path_);
    if (!out_) throw IoError("cannot write metrics log: " + path_);
    out_ << json{{"event", "config"}, {"text", echo_config(cfg)}}.dump() << "\n";
  }

  void step(const StepRecord& rec) {
    if (!out_.is_open()) return;
    out_ << json{{"step", rec.step}, {"phase", rec.phase}, {"loss", rec.loss},
                 {"lr", rec.lr},     {"frames", rec.frames}, {"wall_ms", rec.wall_ms}}
               .dump()
        << "\n";
    out_.flush();
  }

  void record(const json& j) {
    if (!out_.is_open()) return;
    out_ << j.dump() << "\n";
    out_.flush();
  }

  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

int cmd_synth_data(const CommonArgs& common, bool write_wavs, std::optional<std::int64_t> n) {
  std::vector<std::pair<std::string, std::string>> overrides;
  if (n) overrides.emplace_back("synth.n", std::to_string(*n));
  if (write_wavs) overrides.emplace_back("synth.write_wavs", "true");
  RunConfig cfg = resolve_config(common, std::move(overrides));
  if (cfg.synth_n < 1) throw ConfigError("synth-data: --n must be positive");

  fs::create_directories(cfg.out_dir);
  Manifest m;
  for (std::int64_t i = 0; i < cfg.synth_n; ++i) {
    const std::uint64_t seed = corpus_item_seed(cfg, i);
    const Waveform w = synth_utterance(cfg.synth, seed);
    char id[32];
    std::snprintf(id, sizeof id, "utt%04lld", static_cast<long long>(i));
    m.entries.push_back({id, "synth:" + std::to_string(seed),
                         static_cast<double>(w.size()) / w.sample_rate, true});
    if (cfg.synth_write_wavs) {
      fs::create_directories(cfg.out_dir + "/wav");
      write_wav(cfg.out_dir + "/wav/" + id + ".wav", w);
    }
  }
  write_manifest(cfg.out_dir + "/manifest.jsonl", m);
  std::printf("wrote %lld utterances to %s/manifest.jsonl\n",
              static_cast<long long>(cfg.synth_n), cfg.out_dir.c_str());
  return kExitOk;
}

int cmd_pretrain(const CommonArgs& common,
                 std::vector<std::pair<std::string, std::string>> overrides,
                 const std::string& resume_path) {
  RunConfig cfg = resolve_config(common, std::move(overrides));
  Corpus corpus = Corpus::load(manifest_for(cfg), cfg);

  MetricsLog log(cfg.out_dir, "metrics.jsonl", cfg);
  PretrainRun<float> run(cfg, std::move(corpus));
  if (!resume_path.empty()) run.restore(load_checkpoint(resume_path));

  run.run([&](const StepRecord& rec) {
    log.step(rec);
    if (rec.step % 10 == 0 || rec.step == cfg.steps)
      std::printf("step %lld/%lld  loss %.4f  lr %.2e\n", static_cast<long long>(rec.step),
                  static_cast<long long>(cfg.steps), rec.loss, rec.lr);
  });
  std::printf("checkpoint: %s/checkpoint.s3ld\n", cfg.out_dir.c_str());
  return kExitOk;
}

int cmd_finetune(const CommonArgs& common,
                 std::vector<std::pair<std::string, std::string>> overrides,
                 const std::string& checkpoint_path) {
  RunConfig cfg = resolve_config(common, std::move(overrides));
  Corpus corpus = Corpus::load(manifest_for(cfg), cfg);

  Encoder<float> encoder;
  if (cfg.no_pretrain) {
    EncoderConfig enc_cfg = cfg.encoder_file.empty() ? encoder_preset(cfg.encoder_preset)
                                                     : parse_encoder_config(cfg.encoder_file);
    encoder = init_encoder<float>(enc_cfg, Role::Student, cfg.seed);
  } else {
    if (checkpoint_path.empty())
      throw ConfigError("finetune: --checkpoint is required (or pass --no-pretrain)");
    encoder = encoder_from_checkpoint<float>(load_checkpoint(checkpoint_path), Role::Student);
  }

  MetricsLog log(cfg.out_dir, "metrics.jsonl", cfg);
  auto result = finetune(cfg, std::move(encoder), corpus, [&](const StepRecord& rec) {
    log.step(rec);
    if (rec.step % 20 == 0 || rec.step == cfg.finetune_steps)
      std::printf("step %lld/%lld  loss %.4f\n", static_cast<long long>(rec.step),
                  static_cast<long long>(cfg.finetune_steps), rec.loss);
  });

  CheckpointMeta meta;
  meta.seed = cfg.seed;
  meta.objective = "finetune";
  meta.head = result.head_kind;
  meta.n_classes = result.n_classes;
  Checkpoint ckpt = encoder_to_checkpoint(result.encoder, meta);
  {
    NamedArray w;
    w.name = "head.w";
    w.shape = result.head_w.shape();
    for (std::int64_t i = 0; i < result.head_w.numel(); ++i)
      w.data.push_back(result.head_w.at(i));
    ckpt.arrays.push_back(std::move(w));
    NamedArray b;
    b.name = "head.b";
    b.shape = result.head_b.shape();
    for (std::int64_t i = 0; i < result.head_b.numel(); ++i)
      b.data.push_back(result.head_b.at(i));
    ckpt.arrays.push_back(std::move(b));
  }
  fs::create_directories(cfg.out_dir);
  const std::string out = cfg.out_dir + "/finetuned.s3ld";
  save_checkpoint(out, ckpt);
  std::printf("finetuned checkpoint: %s\n", out.c_str());
  return kExitOk;
}

// Per-class segment features at the encoder output rate, for ABX triples.
std::vector<std::vector<Tensor<double>>> segment_features(Encoder<float>& encoder,
                                                          const Corpus& corpus,
                                                          AggregateMode mode, int n_classes) {
  std::vector<std::vector<Tensor<double>>> by_class(static_cast<std::size_t>(n_classes));
  const std::int64_t ds = encoder.cfg.downsample();
  for (const auto& item : corpus.items) {
    if (item.clean_mel.frame_labels.empty()) continue;
    auto r = encode(encoder, item.clean_mel);
    auto layers = aggregation_set(encoder, r, mode);
    auto agg = aggregate_layers(layers, encoder.agg_logits);
    const auto pooled = pool_labels(item.clean_mel.frame_labels, agg.dim(0), ds);
    std::int64_t t = 0;
    while (t < agg.dim(0)) {
      const int cls = pooled[static_cast<std::size_t>(t)];
      std::int64_t end = t;
      while (end < agg.dim(0) && pooled[static_cast<std::size_t>(end)] == cls) ++end;
      if (cls >= 0 && cls < n_classes) {
        Tensor<double> seg({end - t, agg.dim(1)});
        for (std::int64_t i = t; i < end; ++i)
          for (std::int64_t c = 0; c < agg.dim(1); ++c)
            seg.at(i - t, c) = static_cast<double>(agg.at(i, c));
        by_class[static_cast<std::size_t>(cls)].push_back(std::move(seg));
      }
      t = end;
    }
  }
  return by_class;
}

int cmd_eval(const CommonArgs& common, std::vector<std::pair<std::string, std::string>> overrides,
             const std::string& checkpoint_path) {
  RunConfig cfg = resolve_config(common, std::move(overrides));
  Corpus corpus = Corpus::load(manifest_for(cfg), cfg);

  Encoder<float> encoder;
  std::string head_kind = "none";
  Tensor<float> head_w, head_b;
  if (cfg.no_pretrain || checkpoint_path.empty()) {
    EncoderConfig enc_cfg = cfg.encoder_file.empty() ? encoder_preset(cfg.encoder_preset)
                                                     : parse_encoder_config(cfg.encoder_file);
    encoder = init_encoder<float>(enc_cfg, Role::Student, cfg.seed);
  } else {
    const Checkpoint ckpt = load_checkpoint(checkpoint_path);
    encoder = encoder_from_checkpoint<float>(ckpt, Role::Student);
    head_kind = ckpt.meta.head;
    if (const NamedArray* w = ckpt.find("head.w")) {
      head_w = Tensor<float>(w->shape, std::vector<float>(w->data));
      const NamedArray* b = ckpt.find("head.b");
      head_b = Tensor<float>(b->shape, std::vector<float>(b->data));
    }
  }
  const AggregateMode mode = cfg.aggregate == "all" ? AggregateMode::All : AggregateMode::TopStage;

  // frame-level probe on the frozen encoder
  std::vector<MelSpectrogram> mels;
  for (const auto& item : corpus.items) mels.push_back(item.clean_mel);
  const double probe_acc =
      linear_probe_eval(encoder, mels, cfg.synth.n_classes, mode, cfg.seed);

  // token metrics via the CTC head (an untrained zero head decodes to chance)
  const std::int64_t d = encoder.cfg.final_width();
  if (!head_w.defined() || head_kind != "ctc") {
    head_w = Tensor<float>({d, static_cast<std::int64_t>(cfg.synth.n_classes + 1)});
    head_b = Tensor<float>({static_cast<std::int64_t>(cfg.synth.n_classes + 1)});
  }
  std::vector<EvalPair> pairs;
  for (const auto& item : corpus.items) {
    if (item.wave.labels.empty()) continue;
    auto r = encode(encoder, item.clean_mel);
    auto agg = aggregate_layers(aggregation_set(encoder, r, mode), encoder.agg_logits);
    auto lp = log_softmax(linear(agg, head_w, head_b), 1);
    EvalPair p;
    p.hyp = greedy_ctc_decode(lp);
    for (const auto& seg : item.wave.labels) p.ref.push_back(seg.cls);
    pairs.push_back(std::move(p));
  }
  const double ter = pairs.empty() ? 0.0 : token_error_rate(pairs);
  const double uer = pairs.empty() ? 0.0 : utterance_error_rate(pairs);

  double abx = -1.0;
  if (cfg.eval_abx) {
    auto by_class = segment_features(encoder, corpus, mode, cfg.synth.n_classes);
    Rng rng(derive_seed(cfg.seed, "abx"));
    std::vector<AbxInstance> instances;
    for (std::int64_t i = 0; i < cfg.abx_instances; ++i) {
      const int ca = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.synth.n_classes)));
      int cb = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.synth.n_classes - 1)));
      if (cb >= ca) ++cb;
      const auto& pool_a = by_class[static_cast<std::size_t>(ca)];
      const auto& pool_b = by_class[static_cast<std::size_t>(cb)];
      if (pool_a.size() < 2 || pool_b.empty()) continue;
      const std::size_t ia = rng.below(pool_a.size());
      std::size_t ix = rng.below(pool_a.size() - 1);
      if (ix >= ia) ++ix;
      AbxInstance inst;
      inst.a = pool_a[ia].clone();
      inst.x = pool_a[ix].clone();
      inst.b = pool_b[rng.below(pool_b.size())].clone();
      inst.cat_a = ca;
      inst.cat_b = cb;
      instances.push_back(std::move(inst));
    }
    if (!instances.empty()) abx = abx_score(instances);
  }

  RunMetrics metrics;  // wall/frames are per-run quantities; eval reports structure only
  auto report = efficiency_report(encoder, metrics, checkpoint_path);

  MetricsLog log(cfg.out_dir, "eval.jsonl", cfg);
  json j{{"event", "eval"},
         {"probe_acc", probe_acc},
         {"ter", ter},
         {"uer_eq7", uer},
         {"abx", abx},
         {"params", report.trainable_params},
         {"checkpoint_bytes", report.checkpoint_bytes},
         {"macs_per_frame", report.macs_per_frame},
         {"head", head_kind}};
  log.record(j);

  std::printf("metric            value\n");
  std::printf("----------------  ----------\n");
  std::printf("probe_acc         %.4f\n", probe_acc);
  std::printf("ter               %.4f\n", ter);
  std::printf("uer_eq7           %.4f\n", uer);
  if (abx >= 0.0) std::printf("abx               %.4f\n", abx);
  std::printf("params            %lld\n", static_cast<long long>(report.trainable_params));
  std::printf("macs_per_frame    %.0f\n", report.macs_per_frame);
  if (report.checkpoint_bytes > 0)
    std::printf("checkpoint_bytes  %lld\n", static_cast<long long>(report.checkpoint_bytes));
  return kExitOk;
}

int cmd_inspect(const std::string& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  std::printf("version      %u\n", ckpt.meta.version);
  std::printf("step         %lld\n", static_cast<long long>(ckpt.meta.step));
  std::printf("objective    %s\n", ckpt.meta.objective.c_str());
  std::printf("head         %s\n", ckpt.meta.head.c_str());
  std::printf("alpha        %g\n", ckpt.meta.alpha);
  std::printf("seed         %llu\n", static_cast<unsigned long long>(ckpt.meta.seed));
  std::int64_t total = 0;
  for (const auto& a : ckpt.arrays) total += static_cast<std::int64_t>(a.data.size());
  std::printf("arrays       %zu (%lld floats)\n", ckpt.arrays.size(), static_cast<long long>(total));
  for (const auto& a : ckpt.arrays)
    std::printf("  %-28s %s\n", a.name.c_str(), shape_str(a.shape).c_str());
  std::printf("[encoder]\n%s", ckpt.meta.encoder_text.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"s3lspeech: teacher-student contrastive speech representation pretraining"};
  app.require_subcommand(1);

  CommonArgs synth_args, pre_args, ft_args, eval_args;
  bool write_wavs = false;
  std::optional<std::int64_t> synth_n;
  auto* synth = app.add_subcommand("synth-data", "generate a synthetic corpus + manifest");
  add_common(synth, synth_args);
  synth->add_option("--n", synth_n, "number of utterances");
  synth->add_flag("--write-wavs", write_wavs, "also write WAV files");

  std::vector<std::pair<std::string, std::string>> pre_over;
  std::string resume_path;
  auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
  add_common(pre, pre_args);
  pre->add_option("--resume", resume_path, "resume from a checkpoint");
  std::string pre_preset, pre_objective, pre_batching, pre_manifest;
  std::optional<std::int64_t> pre_steps, pre_accum, pre_budget;
  std::optional<double> pre_tau, pre_alpha;
  bool no_augment = false, no_shift = false;
  pre->add_option("--preset", pre_preset, "encoder preset (paper|tiny)");
  pre->add_option("--steps", pre_steps, "optimizer steps");
  pre->add_option("--objective", pre_objective, "contrastive|predictive");
  pre->add_option("--tau", pre_tau, "contrastive temperature");
  pre->add_option("--alpha", pre_alpha, "EMA decay");
  pre->add_option("--accum", pre_accum, "gradient accumulation factor");
  pre->add_option("--frame-budget", pre_budget, "frames per microbatch");
  pre->add_option("--batching", pre_batching, "dynamic|fixed");
  pre->add_option("--manifest", pre_manifest, "corpus manifest (jsonl)");
  pre->add_flag("--no-augment", no_augment, "disable noise + SpecAugment");
  pre->add_flag("--no-shift", no_shift, "disable teacher positional shift");

  auto* ft = app.add_subcommand("finetune", "train a downstream head");
  add_common(ft, ft_args);
  std::string ft_checkpoint, ft_head, ft_manifest;
  std::optional<std::int64_t> ft_steps;
  bool ft_train_encoder = false, ft_no_pretrain = false;
  ft->add_option("--checkpoint", ft_checkpoint, "pretrained checkpoint");
  ft->add_option("--head", ft_head, "frame|ctc");
  ft->add_option("--steps", ft_steps, "finetune steps");
  ft->add_option("--manifest", ft_manifest, "corpus manifest (jsonl)");
  ft->add_flag("--train-encoder", ft_train_encoder, "unfreeze the encoder");
  ft->add_flag("--no-pretrain", ft_no_pretrain, "start from random weights");

  auto* ev = app.add_subcommand("eval", "probe accuracy, error rates, ABX, efficiency");
  add_common(ev, eval_args);
  std::string ev_checkpoint, ev_manifest;
  bool ev_abx = false, ev_no_pretrain = false;
  ev->add_option("--checkpoint", ev_checkpoint, "checkpoint to evaluate");
  ev->add_option("--manifest", ev_manifest, "corpus manifest (jsonl)");
  ev->add_flag("--abx", ev_abx, "include the ABX score");
  ev->add_flag("--no-pretrain", ev_no_pretrain, "evaluate a random-init encoder");

  std::string inspect_path;
  auto* ins = app.add_subcommand("inspect-checkpoint", "print checkpoint metadata");
  ins->add_option("path", inspect_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) return cmd_synth_data(synth_args, write_wavs, synth_n);
    if (pre->parsed()) {
      if (!pre_preset.empty()) pre_over.emplace_back("encoder.preset", pre_preset);
      if (pre_steps) pre_over.emplace_back("train.steps", std::to_string(*pre_steps));
      if (!pre_objective.empty()) pre_over.emplace_back("objective.kind", pre_objective);
      if (pre_tau) pre_over.emplace_back("objective.tau", std::to_string(*pre_tau));
      if (pre_alpha) pre_over.emplace_back("train.alpha", std::to_string(*pre_alpha));
      if (pre_accum) pre_over.emplace_back("train.accum", std::to_string(*pre_accum));
      if (pre_budget) pre_over.emplace_back("train.frame_budget", std::to_string(*pre_budget));
      if (!pre_batching.empty()) pre_over.emplace_back("train.batching", pre_batching);
      if (!pre_manifest.empty()) pre_over.emplace_back("data.manifest", pre_manifest);
      if (no_augment) pre_over.emplace_back("train.augment", "false");
      if (no_shift) pre_over.emplace_back("train.shift", "false");
      return cmd_pretrain(pre_args, std::move(pre_over), resume_path);
    }
    if (ft->parsed()) {
      std::vector<std::pair<std::string, std::string>> over;
      if (!ft_head.empty()) over.emplace_back("finetune.head", ft_head);
      if (ft_steps) over.emplace_back("finetune.steps", std::to_string(*ft_steps));
      if (!ft_manifest.empty()) over.emplace_back("data.manifest", ft_manifest);
      if (ft_train_encoder) over.emplace_back("finetune.train_encoder", "true");
      if (ft_no_pretrain) over.emplace_back("finetune.no_pretrain", "true");
      return cmd_finetune(ft_args, std::move(over), ft_checkpoint);
    }
    if (ev->parsed()) {
      std::vector<std::pair<std::string, std::string>> over;
      if (!ev_manifest.empty()) over.emplace_back("data.manifest", ev_manifest);
      if (ev_abx) over.emplace_back("eval.abx", "true");
      if (ev_no_pretrain) over.emplace_back("finetune.no_pretrain", "true");
      return cmd_eval(eval_args, std::move(over), ev_checkpoint);
    }
    if (ins->parsed()) return cmd_inspect(inspect_path);
  } catch (const DivergedError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitDiverged;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const VersionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const CorruptionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return kExitUsage;
}
