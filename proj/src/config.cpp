#include "s3l/config.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include <json.hpp>

namespace s3l {

void Manifest::validate() const {
  std::set<std::string> ids;
  for (const auto& e : entries) {
    if (e.id.empty()) throw ConfigError("manifest: empty id");
    if (!ids.insert(e.id).second) throw ConfigError("manifest: duplicate id '" + e.id + "'");
    if (!(e.duration_s > 0.0)) throw ConfigError("manifest: non-positive duration for '" + e.id + "'");
  }
}

void write_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write manifest: " + path);
  for (const auto& e : m.entries) {
    nlohmann::json j{{"id", e.id}, {"source", e.source}, {"duration_s", e.duration_s}, {"labeled", e.labeled}};
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("short write: " + path);
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read manifest: " + path);
  Manifest m;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw CorruptionError("manifest: bad record in " + path + ": " + e.what());
    }
    ManifestEntry entry;
    entry.id = j.at("id").get<std::string>();
    entry.source = j.at("source").get<std::string>();
    entry.duration_s = j.at("duration_s").get<double>();
    entry.labeled = j.value("labeled", false);
    m.entries.push_back(std::move(entry));
  }
  m.validate();
  return m;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_u64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%" PRIu64, v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t i = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::uint64_t i = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

struct Binding {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

const std::vector<Binding>& bindings() {
  auto dbl = [](const char* key, auto member) {
    return Binding{key, [member](const RunConfig& c) { return fmt_double(c.*member); },
                   [key, member](RunConfig& c, const std::string& v) { c.*member = parse_double(key, v); }};
  };
  auto i64 = [](const char* key, auto member) {
    return Binding{key, [member](const RunConfig& c) { return std::to_string(c.*member); },
                   [key, member](RunConfig& c, const std::string& v) { c.*member = parse_int(key, v); }};
  };
  auto bol = [](const char* key, auto member) {
    return Binding{key, [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
                   [key, member](RunConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
  };
  auto str = [](const char* key, auto member) {
    return Binding{key, [member](const RunConfig& c) { return c.*member; },
                   [member](RunConfig& c, const std::string& v) { c.*member = v; }};
  };

  static const std::vector<Binding> table = {
      {"seed", [](const RunConfig& c) { return fmt_u64(c.seed); },
       [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); }},
      str("out", &RunConfig::out_dir),
      str("data.manifest", &RunConfig::manifest_path),

      {"dsp.sample_rate", [](const RunConfig& c) { return std::to_string(c.dsp.sample_rate); },
       [](RunConfig& c, const std::string& v) { c.dsp.sample_rate = static_cast<int>(parse_int("dsp.sample_rate", v)); }},
      {"dsp.n_fft", [](const RunConfig& c) { return std::to_string(c.dsp.n_fft); },
       [](RunConfig& c, const std::string& v) { c.dsp.n_fft = parse_int("dsp.n_fft", v); }},
      {"dsp.hop", [](const RunConfig& c) { return std::to_string(c.dsp.hop); },
       [](RunConfig& c, const std::string& v) { c.dsp.hop = parse_int("dsp.hop", v); }},
      {"dsp.n_mels", [](const RunConfig& c) { return std::to_string(c.dsp.n_mels); },
       [](RunConfig& c, const std::string& v) { c.dsp.n_mels = parse_int("dsp.n_mels", v); }},
      {"dsp.fmin", [](const RunConfig& c) { return fmt_double(c.dsp.fmin); },
       [](RunConfig& c, const std::string& v) { c.dsp.fmin = parse_double("dsp.fmin", v); }},
      {"dsp.fmax", [](const RunConfig& c) { return fmt_double(c.dsp.fmax); },
       [](RunConfig& c, const std::string& v) { c.dsp.fmax = parse_double("dsp.fmax", v); }},
      {"dsp.window",
       [](const RunConfig& c) { return std::string(c.dsp.window == WindowKind::Hann ? "hann" : "rect"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "hann")
           c.dsp.window = WindowKind::Hann;
         else if (v == "rect")
           c.dsp.window = WindowKind::Rect;
         else
           throw ConfigError("config: dsp.window expects hann or rect");
       }},

      {"synth.seed", [](const RunConfig& c) { return fmt_u64(c.synth.seed); },
       [](RunConfig& c, const std::string& v) { c.synth.seed = parse_u64("synth.seed", v); }},
      {"synth.duration_min_s", [](const RunConfig& c) { return fmt_double(c.synth.duration_min_s); },
       [](RunConfig& c, const std::string& v) { c.synth.duration_min_s = parse_double("synth.duration_min_s", v); }},
      {"synth.duration_max_s", [](const RunConfig& c) { return fmt_double(c.synth.duration_max_s); },
       [](RunConfig& c, const std::string& v) { c.synth.duration_max_s = parse_double("synth.duration_max_s", v); }},
      {"synth.classes", [](const RunConfig& c) { return std::to_string(c.synth.n_classes); },
       [](RunConfig& c, const std::string& v) { c.synth.n_classes = static_cast<int>(parse_int("synth.classes", v)); }},
      {"synth.seg_min_ms", [](const RunConfig& c) { return fmt_double(c.synth.seg_min_ms); },
       [](RunConfig& c, const std::string& v) { c.synth.seg_min_ms = parse_double("synth.seg_min_ms", v); }},
      {"synth.seg_max_ms", [](const RunConfig& c) { return fmt_double(c.synth.seg_max_ms); },
       [](RunConfig& c, const std::string& v) { c.synth.seg_max_ms = parse_double("synth.seg_max_ms", v); }},
      {"synth.amplitude", [](const RunConfig& c) { return fmt_double(c.synth.amplitude); },
       [](RunConfig& c, const std::string& v) { c.synth.amplitude = parse_double("synth.amplitude", v); }},
      i64("synth.n", &RunConfig::synth_n),
      bol("synth.write_wavs", &RunConfig::synth_write_wavs),

      {"augment.snr_db_min", [](const RunConfig& c) { return fmt_double(c.augment.snr_db_min); },
       [](RunConfig& c, const std::string& v) { c.augment.snr_db_min = parse_double("augment.snr_db_min", v); }},
      {"augment.snr_db_max", [](const RunConfig& c) { return fmt_double(c.augment.snr_db_max); },
       [](RunConfig& c, const std::string& v) { c.augment.snr_db_max = parse_double("augment.snr_db_max", v); }},
      {"augment.n_time_masks", [](const RunConfig& c) { return std::to_string(c.augment.n_time_masks); },
       [](RunConfig& c, const std::string& v) { c.augment.n_time_masks = static_cast<int>(parse_int("augment.n_time_masks", v)); }},
      {"augment.max_time_mask_frames", [](const RunConfig& c) { return std::to_string(c.augment.max_time_mask_frames); },
       [](RunConfig& c, const std::string& v) { c.augment.max_time_mask_frames = parse_int("augment.max_time_mask_frames", v); }},
      {"augment.n_freq_masks", [](const RunConfig& c) { return std::to_string(c.augment.n_freq_masks); },
       [](RunConfig& c, const std::string& v) { c.augment.n_freq_masks = static_cast<int>(parse_int("augment.n_freq_masks", v)); }},
      {"augment.max_freq_mask_bins", [](const RunConfig& c) { return std::to_string(c.augment.max_freq_mask_bins); },
       [](RunConfig& c, const std::string& v) { c.augment.max_freq_mask_bins = parse_int("augment.max_freq_mask_bins", v); }},
      {"augment.freq_mask_noise_std", [](const RunConfig& c) { return fmt_double(c.augment.freq_mask_noise_std); },
       [](RunConfig& c, const std::string& v) { c.augment.freq_mask_noise_std = parse_double("augment.freq_mask_noise_std", v); }},
      {"augment.max_shift_frames", [](const RunConfig& c) { return std::to_string(c.augment.max_shift_frames); },
       [](RunConfig& c, const std::string& v) { c.augment.max_shift_frames = parse_int("augment.max_shift_frames", v); }},
      str("augment.noise", &RunConfig::noise_kind),

      str("encoder.preset", &RunConfig::encoder_preset),
      str("encoder.file", &RunConfig::encoder_file),
      dbl("encoder.dropout", &RunConfig::encoder_dropout),
      str("encoder.aggregate", &RunConfig::aggregate),

      str("objective.kind", &RunConfig::objective),
      dbl("objective.tau", &RunConfig::tau),
      str("objective.distractors", &RunConfig::distractors),
      i64("objective.k", &RunConfig::distractor_k),
      dbl("objective.mask_start_prob", &RunConfig::mask_start_prob),
      i64("objective.mask_span", &RunConfig::mask_span),
      i64("objective.kmeans_k", &RunConfig::kmeans_k),
      i64("objective.kmeans_iters", &RunConfig::kmeans_iters),
      i64("objective.stage2_layer", &RunConfig::stage2_layer),

      i64("train.steps", &RunConfig::steps),
      i64("train.frame_budget", &RunConfig::frame_budget),
      i64("train.accum", &RunConfig::accum),
      dbl("train.lr", &RunConfig::lr),
      str("train.schedule", &RunConfig::schedule),
      dbl("train.warm_frac", &RunConfig::warm_frac),
      dbl("train.hold_frac", &RunConfig::hold_frac),
      dbl("train.alpha", &RunConfig::alpha),
      dbl("train.weight_decay", &RunConfig::weight_decay),
      dbl("train.beta1", &RunConfig::beta1),
      dbl("train.beta2", &RunConfig::beta2),
      dbl("train.adam_eps", &RunConfig::adam_eps),
      i64("train.checkpoint_every", &RunConfig::checkpoint_every),
      bol("train.augment", &RunConfig::augment_enabled),
      bol("train.shift", &RunConfig::shift_enabled),
      str("train.batching", &RunConfig::batching),
      i64("train.fixed_batch_size", &RunConfig::fixed_batch_size),

      str("finetune.head", &RunConfig::head),
      bol("finetune.train_encoder", &RunConfig::train_encoder),
      i64("finetune.steps", &RunConfig::finetune_steps),
      dbl("finetune.lr", &RunConfig::finetune_lr),
      bol("finetune.no_pretrain", &RunConfig::no_pretrain),

      bol("eval.abx", &RunConfig::eval_abx),
      i64("eval.probe_epochs", &RunConfig::probe_epochs),
      i64("eval.abx_instances", &RunConfig::abx_instances),
  };
  return table;
}

}  // namespace

void RunConfig::validate() const {
  if (dsp.sample_rate < 1 || dsp.n_fft < 2 || dsp.hop < 1 || dsp.hop > dsp.n_fft)
    throw ConfigError("config: bad dsp window/hop settings");
  if (dsp.n_mels < 2) throw ConfigError("config: dsp.n_mels must be at least 2");
  augment.validate();
  if (noise_kind != "white" && noise_kind != "babble")
    throw ConfigError("config: augment.noise expects white or babble");
  if (encoder_preset != "paper" && encoder_preset != "tiny" && encoder_file.empty())
    throw ConfigError("config: encoder.preset expects paper or tiny (or set encoder.file)");
  if (aggregate != "top" && aggregate != "all")
    throw ConfigError("config: encoder.aggregate expects top or all");
  if (objective != "contrastive" && objective != "predictive")
    throw ConfigError("config: objective.kind expects contrastive or predictive");
  if (!(tau > 0.0)) throw ConfigError("config: objective.tau must be positive");
  if (distractors != "all" && distractors != "k")
    throw ConfigError("config: objective.distractors expects all or k");
  if (steps < 1 || frame_budget < 1 || accum < 1)
    throw ConfigError("config: train.steps, train.frame_budget and train.accum must be positive");
  if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw ConfigError("config: learning rates must be positive");
  if (schedule != "cosine" && schedule != "tri_phase")
    throw ConfigError("config: train.schedule expects cosine or tri_phase");
  if (warm_frac < 0.0 || hold_frac < 0.0 || warm_frac + hold_frac > 1.0)
    throw ConfigError("config: schedule fractions must be non-negative with warm+hold <= 1");
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("config: train.alpha must lie in [0, 1]");
  if (batching != "dynamic" && batching != "fixed")
    throw ConfigError("config: train.batching expects dynamic or fixed");
  if (head != "frame" && head != "ctc") throw ConfigError("config: finetune.head expects frame or ctc");
  if (kmeans_k < 2) throw ConfigError("config: objective.kmeans_k must be at least 2");
}

void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& b : bindings()) {
    if (key == b.key) {
      b.set(cfg, value);
      return;
    }
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

RunConfig parse_config_text(const std::string& text,
                            const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto last = line.find_last_not_of(" \t\r");
    line = line.substr(first, last - first + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config: line " + std::to_string(line_no) + " is not key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string::npos) return std::string();
      const auto b = s.find_last_not_of(" \t");
      return s.substr(a, b - a + 1);
    };
    apply_override(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  for (const auto& [key, value] : overrides) apply_override(cfg, key, value);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::string text;
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read config: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    text = ss.str();
  }
  return parse_config_text(text, overrides);
}

std::string echo_config(const RunConfig& cfg) {
  std::ostringstream out;
  for (const auto& b : bindings()) out << b.key << "=" << b.get(cfg) << "\n";
  return out.str();
}

}  // namespace s3l
