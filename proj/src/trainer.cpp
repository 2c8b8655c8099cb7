#include "s3l/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "s3l/evaluation.hpp"

namespace s3l {

template <typename T>
void ema_update(std::vector<Tensor<T>>& teacher, const std::vector<Tensor<T>>& student, T alpha) {
  if (!(alpha >= T{0} && alpha <= T{1})) throw ConfigError("ema_update: alpha must lie in [0, 1]");
  if (teacher.size() != student.size()) throw ContractError("ema_update: parameter count mismatch");
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (teacher[i].shape() != student[i].shape())
      throw ContractError("ema_update: shape mismatch at parameter " + std::to_string(i));
    const std::int64_t n = teacher[i].numel();
    for (std::int64_t j = 0; j < n; ++j)
      teacher[i].at(j) = alpha * teacher[i].at(j) + (T{1} - alpha) * student[i].at(j);
  }
}

template <typename T>
void ema_update(Encoder<T>& teacher, Encoder<T>& student, T alpha) {
  auto tp = teacher.params();
  const auto sp = student.params();
  ema_update(tp, sp, alpha);
}

std::int64_t BatchPlan::total_frames() const {
  std::int64_t n = 0;
  for (const auto& b : batches)
    for (const auto f : b.frames) n += f;
  return n;
}

std::int64_t BatchPlan::padded_frames() const {
  std::int64_t n = 0;
  for (const auto& b : batches) {
    std::int64_t mx = 0;
    for (const auto f : b.frames) mx = std::max(mx, f);
    n += mx * static_cast<std::int64_t>(b.frames.size());
  }
  return n;
}

double BatchPlan::padding_waste() const {
  const std::int64_t padded = padded_frames();
  if (padded == 0) return 0.0;
  return static_cast<double>(padded - total_frames()) / static_cast<double>(padded);
}

namespace {

std::vector<std::int64_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::int64_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::int64_t>(i);
  Rng rng(derive_seed(seed, "shuffle"));
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

BatchPlan plan_batches(const std::vector<std::int64_t>& frame_counts, std::int64_t frame_budget,
                       std::uint64_t seed) {
  if (frame_counts.empty()) throw ConfigError("plan_batches: empty manifest");
  if (frame_budget < 1) throw ConfigError("plan_batches: frame budget must be positive");

  BatchPlan plan;
  plan.frame_budget = frame_budget;
  const auto order = shuffled_indices(frame_counts.size(), seed);

  constexpr std::size_t kWindow = 64;
  for (std::size_t base = 0; base < order.size(); base += kWindow) {
    const std::size_t end = std::min(order.size(), base + kWindow);
    std::vector<std::int64_t> window(order.begin() + static_cast<std::ptrdiff_t>(base),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
    std::stable_sort(window.begin(), window.end(), [&](std::int64_t a, std::int64_t b) {
      return frame_counts[static_cast<std::size_t>(a)] > frame_counts[static_cast<std::size_t>(b)];
    });

    std::vector<Batch> open;
    std::vector<std::int64_t> open_load;
    for (const auto utt : window) {
      const std::int64_t frames =
          std::min(frame_counts[static_cast<std::size_t>(utt)], frame_budget);  // over-budget: trimmed
      bool placed = false;
      for (std::size_t b = 0; b < open.size(); ++b) {
        if (open_load[b] + frames <= frame_budget) {
          open[b].utterances.push_back(utt);
          open[b].frames.push_back(frames);
          open_load[b] += frames;
          placed = true;
          break;
        }
      }
      if (!placed) {
        open.push_back(Batch{{utt}, {frames}});
        open_load.push_back(frames);
      }
    }
    for (auto& b : open) plan.batches.push_back(std::move(b));
  }
  return plan;
}

BatchPlan plan_fixed(const std::vector<std::int64_t>& frame_counts, std::int64_t per_batch,
                     std::uint64_t seed) {
  if (frame_counts.empty()) throw ConfigError("plan_fixed: empty manifest");
  if (per_batch < 1) throw ConfigError("plan_fixed: per_batch must be positive");
  BatchPlan plan;
  plan.frame_budget = 0;
  const auto order = shuffled_indices(frame_counts.size(), seed);
  for (std::size_t base = 0; base < order.size(); base += static_cast<std::size_t>(per_batch)) {
    Batch b;
    for (std::size_t i = base; i < std::min(order.size(), base + static_cast<std::size_t>(per_batch)); ++i) {
      b.utterances.push_back(order[i]);
      b.frames.push_back(frame_counts[static_cast<std::size_t>(order[i])]);
    }
    plan.batches.push_back(std::move(b));
  }
  return plan;
}

double lr_at(const ScheduleConfig& s, std::int64_t step) {
  if (step < 0 || step > s.total_steps) throw ContractError("lr_at: step outside [0, total]");
  const double progress = s.total_steps == 0 ? 0.0
                                             : static_cast<double>(step) / static_cast<double>(s.total_steps);
  if (s.kind == ScheduleConfig::Kind::Cosine)
    return s.base_lr * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;

  const double warm_end = s.warm_frac;
  const double hold_end = s.warm_frac + s.hold_frac;
  if (progress < warm_end) return s.base_lr * (progress / std::max(warm_end, 1e-12));
  if (progress <= hold_end) return s.base_lr;
  const double tail = (progress - hold_end) / std::max(1.0 - hold_end, 1e-12);
  return s.base_lr * std::pow(0.01, tail);  // exponential decay to base * 0.01
}

// ---- Checkpoint IO -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', '3', 'L', 'D'};

std::uint64_t fnv1a(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const char c : data) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  static_assert(sizeof bits == sizeof v);
  std::memcpy(&bits, &v, sizeof bits);
  put_u32(out, bits);
}

struct Reader {
  const std::string& data;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > data.size()) throw CorruptionError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(data[pos + static_cast<std::size_t>(i)]);
    pos += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data.substr(pos, n);
    pos += n;
    return s;
  }
};

std::string meta_to_text(const CheckpointMeta& meta) {
  std::ostringstream out;
  char alpha_buf[64];
  std::snprintf(alpha_buf, sizeof alpha_buf, "%.17g", meta.alpha);
  out << "step=" << meta.step << "\n";
  out << "adam_t=" << meta.adam_t << "\n";
  out << "alpha=" << alpha_buf << "\n";
  out << "seed=" << meta.seed << "\n";
  out << "objective=" << meta.objective << "\n";
  out << "head=" << meta.head << "\n";
  out << "n_classes=" << meta.n_classes << "\n";
  out << "kmeans_stage=" << meta.kmeans_stage << "\n";
  out << "[encoder]\n";
  out << meta.encoder_text;
  return out.str();
}

CheckpointMeta meta_from_text(const std::string& text, std::uint32_t version) {
  CheckpointMeta meta;
  meta.version = version;
  std::istringstream in(text);
  std::string line;
  bool in_encoder = false;
  std::ostringstream enc;
  while (std::getline(in, line)) {
    if (in_encoder) {
      enc << line << "\n";
      continue;
    }
    if (line == "[encoder]") {
      in_encoder = true;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CorruptionError("checkpoint: malformed meta line '" + line + "'");
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "step")
      meta.step = std::stoll(value);
    else if (key == "adam_t")
      meta.adam_t = std::stoll(value);
    else if (key == "alpha")
      meta.alpha = std::stod(value);
    else if (key == "seed")
      meta.seed = std::stoull(value);
    else if (key == "objective")
      meta.objective = value;
    else if (key == "head")
      meta.head = value;
    else if (key == "n_classes")
      meta.n_classes = std::stoi(value);
    else if (key == "kmeans_stage")
      meta.kmeans_stage = std::stoi(value);
    else
      throw CorruptionError("checkpoint: unknown meta key '" + key + "'");
  }
  meta.encoder_text = enc.str();
  return meta;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, ckpt.meta.version);
  const std::string meta = meta_to_text(ckpt.meta);
  put_u32(out, static_cast<std::uint32_t>(meta.size()));
  out += meta;
  put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const auto& a : ckpt.arrays) {
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (const auto d : a.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (const float v : a.data) put_f32(out, v);
  }
  put_u64(out, fnv1a(out));

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write checkpoint: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short checkpoint write: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read checkpoint: " + path);
  std::string data((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (data.size() < 20) throw CorruptionError("checkpoint: truncated file");
  if (std::memcmp(data.data(), kMagic, 4) != 0)
    throw VersionError("checkpoint: bad magic (not an S3LD file)");

  // verify the trailing checksum before trusting any payload
  const std::string payload = data.substr(0, data.size() - 8);
  Reader tail{data, data.size() - 8};
  if (tail.u64() != fnv1a(payload)) throw CorruptionError("checkpoint: checksum mismatch");

  Reader r{payload, 4};
  Checkpoint ckpt;
  const std::uint32_t version = r.u32();
  if (version != 1) throw VersionError("checkpoint: unsupported version " + std::to_string(version));
  const std::uint32_t meta_len = r.u32();
  ckpt.meta = meta_from_text(r.bytes(meta_len), version);
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const std::uint32_t name_len = r.u32();
    a.name = r.bytes(name_len);
    const std::uint32_t ndim = r.u32();
    std::int64_t numel = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.shape.push_back(static_cast<std::int64_t>(r.u32()));
      numel *= a.shape.back();
    }
    a.data.resize(static_cast<std::size_t>(numel));
    for (auto& v : a.data) v = r.f32();
    ckpt.arrays.push_back(std::move(a));
  }
  if (r.pos != payload.size()) throw CorruptionError("checkpoint: trailing bytes");
  return ckpt;
}

// ---- Corpus -------------------------------------------------------------------

std::vector<std::int64_t> Corpus::frame_counts() const {
  std::vector<std::int64_t> out;
  out.reserve(items.size());
  for (const auto& item : items) out.push_back(item.clean_mel.frames);
  return out;
}

Corpus Corpus::load(const Manifest& manifest, const RunConfig& cfg) {
  manifest.validate();
  if (manifest.entries.empty()) throw ConfigError("corpus: empty manifest");
  Corpus corpus;
  const std::int64_t max_samples = (cfg.frame_budget - 1) * cfg.dsp.hop + cfg.dsp.n_fft;
  for (const auto& entry : manifest.entries) {
    CorpusItem item;
    item.id = entry.id;
    if (entry.source.rfind("synth:", 0) == 0) {
      const std::uint64_t s = std::stoull(entry.source.substr(6));
      item.wave = synth_utterance(cfg.synth, s);
    } else {
      item.wave = read_wav(entry.source);
    }
    if (item.wave.size() > max_samples) {  // trim to the frame budget
      item.wave.samples.resize(static_cast<std::size_t>(max_samples));
      std::vector<LabelSegment> kept;
      for (auto seg : item.wave.labels) {
        if (seg.begin >= max_samples) continue;
        seg.end = std::min(seg.end, max_samples);
        kept.push_back(seg);
      }
      item.wave.labels = std::move(kept);
    }
    item.clean_mel = log_mel(item.wave, cfg.dsp);
    corpus.items.push_back(std::move(item));
  }
  return corpus;
}

// ---- Pretraining ----------------------------------------------------------------

namespace {

EncoderConfig resolve_encoder_config(const RunConfig& cfg) {
  EncoderConfig enc;
  if (!cfg.encoder_file.empty()) {
    std::ifstream f(cfg.encoder_file);
    if (!f) throw IoError("cannot read encoder grammar: " + cfg.encoder_file);
    std::ostringstream ss;
    ss << f.rdbuf();
    enc = parse_encoder_config(ss.str());
    enc.name = cfg.encoder_file;
  } else {
    enc = encoder_preset(cfg.encoder_preset);
  }
  if (enc.n_mels != cfg.dsp.n_mels)
    throw ConfigError("config: encoder expects " + std::to_string(enc.n_mels) +
                      " mels but dsp.n_mels is " + std::to_string(cfg.dsp.n_mels));
  enc.dropout = cfg.encoder_dropout;
  return enc;
}

template <typename T>
Tensor<T> uniform_tensor(Shape shape, std::int64_t fan_in, std::uint64_t seed) {
  Tensor<T> t(std::move(shape));
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
NamedArray to_array(const std::string& name, const Tensor<T>& t) {
  NamedArray a;
  a.name = name;
  a.shape = t.shape();
  a.data.resize(static_cast<std::size_t>(t.numel()));
  for (std::int64_t i = 0; i < t.numel(); ++i) a.data[static_cast<std::size_t>(i)] = static_cast<float>(t.at(i));
  return a;
}

NamedArray vec_to_array(const std::string& name, const std::vector<float>& v) {
  NamedArray a;
  a.name = name;
  a.shape = {static_cast<std::int64_t>(v.size())};
  a.data = v;
  return a;
}

template <typename T>
void load_array_into(const Checkpoint& ckpt, const std::string& name, Tensor<T>& t) {
  const NamedArray* a = ckpt.find(name);
  if (a == nullptr) throw VersionError("checkpoint: missing array '" + name + "'");
  if (a->shape != t.shape())
    throw VersionError("checkpoint: array '" + name + "' has shape " + shape_str(a->shape) +
                       ", expected " + shape_str(t.shape()));
  for (std::int64_t i = 0; i < t.numel(); ++i) t.at(i) = static_cast<T>(a->data[static_cast<std::size_t>(i)]);
}

}  // namespace

template <typename T>
PretrainRun<T>::PretrainRun(const RunConfig& cfg, Corpus corpus)
    : cfg_(cfg), enc_cfg_(resolve_encoder_config(cfg)), corpus_(std::move(corpus)) {
  cfg_.validate();
  if (corpus_.items.empty()) throw ConfigError("pretrain: empty corpus");
  student_ = init_encoder<T>(enc_cfg_, Role::Student, cfg_.seed);
  if (cfg_.objective == "contrastive") {
    teacher_ = make_teacher(student_);
  } else {
    const std::int64_t d = enc_cfg_.final_width();
    pred_head_w_ = uniform_tensor<T>({d, cfg_.kmeans_k}, d, derive_seed(cfg_.seed, "predhead-w"));
    pred_head_b_ = Tensor<T>({cfg_.kmeans_k});
    pred_head_w_.set_requires_grad(true);
    pred_head_b_.set_requires_grad(true);
  }

  params_ = student_.params();
  if (cfg_.objective == "predictive") {
    params_.push_back(pred_head_w_);
    params_.push_back(pred_head_b_);
  }
  opt_.config.lr = static_cast<T>(cfg_.lr);
  opt_.config.beta1 = static_cast<T>(cfg_.beta1);
  opt_.config.beta2 = static_cast<T>(cfg_.beta2);
  opt_.config.eps = static_cast<T>(cfg_.adam_eps);
  opt_.config.weight_decay = static_cast<T>(cfg_.weight_decay);
  opt_.init(params_);

  schedule_.kind = cfg_.schedule == "cosine" ? ScheduleConfig::Kind::Cosine : ScheduleConfig::Kind::TriPhase;
  schedule_.base_lr = cfg_.lr;
  schedule_.total_steps = cfg_.steps;
  schedule_.warm_frac = cfg_.warm_frac;
  schedule_.hold_frac = cfg_.hold_frac;
}

template <typename T>
Batch PretrainRun<T>::batch_for(std::int64_t micro_index) {
  const auto counts = corpus_.frame_counts();
  std::int64_t idx = micro_index;
  std::int64_t epoch = 0;
  for (;;) {
    if (epoch >= static_cast<std::int64_t>(epoch_plans_.size())) {
      const std::uint64_t plan_seed = derive_seed(cfg_.seed, "plan", static_cast<std::uint64_t>(epoch));
      epoch_plans_.push_back(cfg_.batching == "dynamic"
                                 ? plan_batches(counts, cfg_.frame_budget, plan_seed)
                                 : plan_fixed(counts, cfg_.fixed_batch_size, plan_seed));
    }
    const auto& plan = epoch_plans_[static_cast<std::size_t>(epoch)];
    const std::int64_t n = static_cast<std::int64_t>(plan.batches.size());
    if (idx < n) return plan.batches[static_cast<std::size_t>(idx)];
    idx -= n;
    ++epoch;
  }
}

template <typename T>
void PretrainRun<T>::refit_kmeans(int stage) {
  constexpr std::int64_t kMaxPoints = 20000;
  std::vector<std::vector<double>> points;
  std::int64_t dim = 0;

  std::vector<std::vector<int>> raw_labels(corpus_.items.size());
  std::vector<std::int64_t> pool_windows(corpus_.items.size(), 1);

  if (stage == 1) {
    dim = 13;
    for (const auto& item : corpus_.items) {
      auto coeffs = mfcc(item.clean_mel, 13);
      for (std::int64_t t = 0; t < item.clean_mel.frames; ++t) {
        std::vector<double> p(static_cast<std::size_t>(dim));
        for (std::int64_t j = 0; j < dim; ++j) p[static_cast<std::size_t>(j)] = coeffs[static_cast<std::size_t>(j * item.clean_mel.frames + t)];
        points.push_back(std::move(p));
      }
    }
  } else {
    const auto downs = enc_cfg_.attention_downsamples();
    const auto [first, count] = enc_cfg_.top_stage();
    std::int64_t ordinal = cfg_.stage2_layer >= 0 ? cfg_.stage2_layer : std::max<std::int64_t>(first - 1, 0);
    if (ordinal >= static_cast<std::int64_t>(downs.size())) ordinal = static_cast<std::int64_t>(downs.size()) - 1;
    for (const auto& item : corpus_.items) {
      auto r = encode(student_, item.clean_mel);
      const auto& layer = r.layers[static_cast<std::size_t>(ordinal)];
      if (dim == 0) dim = layer.dim(1);
      for (std::int64_t t = 0; t < layer.dim(0); ++t) {
        std::vector<double> p(static_cast<std::size_t>(dim));
        for (std::int64_t j = 0; j < dim; ++j) p[static_cast<std::size_t>(j)] = static_cast<double>(layer.at(t, j));
        points.push_back(std::move(p));
      }
    }
  }

  // seeded subsample to bound the fit
  std::vector<std::int64_t> pick(points.size());
  for (std::size_t i = 0; i < pick.size(); ++i) pick[i] = static_cast<std::int64_t>(i);
  if (static_cast<std::int64_t>(points.size()) > kMaxPoints) {
    Rng rng(derive_seed(cfg_.seed, "kmeans-sample", static_cast<std::uint64_t>(stage)));
    for (std::size_t i = pick.size(); i > 1; --i) std::swap(pick[i - 1], pick[rng.below(i)]);
    pick.resize(static_cast<std::size_t>(kMaxPoints));
  }
  Tensor<double> feats({static_cast<std::int64_t>(pick.size()), dim});
  for (std::size_t i = 0; i < pick.size(); ++i)
    for (std::int64_t j = 0; j < dim; ++j)
      feats.at(static_cast<std::int64_t>(i), j) = points[static_cast<std::size_t>(pick[i])][static_cast<std::size_t>(j)];

  kmeans_ = kmeans_fit(feats, cfg_.kmeans_k, cfg_.kmeans_iters,
                       derive_seed(cfg_.seed, "kmeans-fit", static_cast<std::uint64_t>(stage)));
  kmeans_stage_ = stage;
  rebuild_targets(stage);
}

// Per-utterance targets at the final frame rate, from the current centroids.
template <typename T>
void PretrainRun<T>::rebuild_targets(int stage) {
  target_cache_.assign(corpus_.items.size(), {});
  const std::int64_t ds_final = enc_cfg_.downsample();
  for (std::size_t u = 0; u < corpus_.items.size(); ++u) {
    const auto& item = corpus_.items[u];
    std::vector<int> frame_ids;
    std::int64_t window = 1;
    if (stage == 1) {
      auto coeffs = mfcc(item.clean_mel, 13);
      Tensor<double> pts({item.clean_mel.frames, 13});
      for (std::int64_t t = 0; t < item.clean_mel.frames; ++t)
        for (std::int64_t j = 0; j < 13; ++j)
          pts.at(t, j) = coeffs[static_cast<std::size_t>(j * item.clean_mel.frames + t)];
      frame_ids = kmeans_assign(pts, *kmeans_);
      window = ds_final;
    } else {
      const auto downs = enc_cfg_.attention_downsamples();
      const auto [first, count] = enc_cfg_.top_stage();
      std::int64_t ordinal = cfg_.stage2_layer >= 0 ? cfg_.stage2_layer : std::max<std::int64_t>(first - 1, 0);
      if (ordinal >= static_cast<std::int64_t>(downs.size())) ordinal = static_cast<std::int64_t>(downs.size()) - 1;
      auto r = encode(student_, item.clean_mel);
      const auto& layer = r.layers[static_cast<std::size_t>(ordinal)];
      Tensor<double> pts({layer.dim(0), layer.dim(1)});
      for (std::int64_t i = 0; i < layer.numel(); ++i) pts.at(i) = static_cast<double>(layer.at(i));
      frame_ids = kmeans_assign(pts, *kmeans_);
      window = std::max<std::int64_t>(ds_final / downs[static_cast<std::size_t>(ordinal)], 1);
    }
    const std::int64_t t_out = enc_cfg_.output_frames(item.clean_mel.frames);
    target_cache_[u] = pool_labels(frame_ids, t_out, window);
    for (auto& c : target_cache_[u])
      if (c < 0) c = 0;  // every frame has a kmeans id; -1 only past the end
  }
}

template <typename T>
Tensor<T> PretrainRun<T>::utterance_loss(std::int64_t utt, std::uint64_t micro, Tape<T>& tape) {
  const auto& item = corpus_.items[static_cast<std::size_t>(utt)];
  const std::uint64_t u64utt = static_cast<std::uint64_t>(utt);

  if (cfg_.objective == "predictive") {
    const std::int64_t t_out = enc_cfg_.output_frames(item.clean_mel.frames);
    const std::int64_t span = std::min(cfg_.mask_span, t_out);
    MaskSet m = mask_spans(t_out, cfg_.mask_start_prob, std::max<std::int64_t>(span, 1),
                           derive_seed(cfg_.seed, "mask", u64utt, micro));
    if (m.count() == 0) {  // guarantee at least one masked span
      const std::int64_t t0 = static_cast<std::int64_t>(
          Rng(derive_seed(cfg_.seed, "mask-fallback", u64utt, micro)).below(static_cast<std::uint64_t>(t_out)));
      m.starts.push_back(t0);
      for (std::int64_t u = t0; u < std::min(t_out, t0 + m.span); ++u) m.mask[static_cast<std::size_t>(u)] = true;
    }
    // zero the masked regions of the input (the mask embedding is zero)
    MelSpectrogram masked = item.clean_mel;
    const std::int64_t ds = enc_cfg_.downsample();
    for (std::int64_t t = 0; t < t_out; ++t) {
      if (!m.mask[static_cast<std::size_t>(t)]) continue;
      for (std::int64_t col = t * ds; col < std::min<std::int64_t>((t + 1) * ds, masked.frames); ++col)
        for (std::int64_t mm = 0; mm < masked.n_mels; ++mm) masked.at(mm, col) = 0.0;
    }
    auto r = encode(student_, masked, &tape);
    auto logits = linear(r.final, pred_head_w_, pred_head_b_, &tape);
    return masked_predictive_loss(logits, target_cache_[static_cast<std::size_t>(utt)], m, &tape);
  }

  // contrastive branch
  MelSpectrogram smel;
  if (cfg_.augment_enabled) {
    const NoiseKind kind = cfg_.noise_kind == "babble" ? NoiseKind::Babble : NoiseKind::White;
    const Waveform noise =
        synth_noise(kind, item.wave.size() + 4096, derive_seed(cfg_.seed, "noise", u64utt, micro));
    Rng snr_rng(derive_seed(cfg_.seed, "snr", u64utt, micro));
    const double snr = snr_rng.uniform(cfg_.augment.snr_db_min, cfg_.augment.snr_db_max);
    const Waveform mixed = mix_noise(item.wave, noise, snr, derive_seed(cfg_.seed, "mix", u64utt, micro));
    smel = log_mel(mixed, cfg_.dsp);
    smel = spec_augment(smel, cfg_.augment, derive_seed(cfg_.seed, "spec", u64utt, micro)).first;
  } else {
    smel = item.clean_mel;
  }

  MelSpectrogram tmel = item.clean_mel;
  std::int64_t shift = 0;
  if (cfg_.shift_enabled) {
    auto [shifted, p] = positional_shift(item.clean_mel, cfg_.augment.max_shift_frames,
                                         derive_seed(cfg_.seed, "shift", u64utt, micro));
    tmel = std::move(shifted);
    shift = p;
  }

  auto rs = encode(student_, smel, &tape);
  auto z = predict(student_, project(student_, rs.final, &tape), &tape);
  auto rt = encode(teacher_, tmel);
  auto zt = project(teacher_, rt.final);

  const std::int64_t drop = shift_realign_drop(shift, enc_cfg_.downsample());
  const std::int64_t teacher_rows = zt.dim(0) - drop;
  const std::int64_t common = std::min(z.dim(0), teacher_rows);
  if (common < 1) throw ContractError("pretrain: realignment left no common frames");
  auto z_c = common == z.dim(0) ? z : slice_rows(z, 0, common, &tape);
  auto zt_c = (drop == 0 && common == zt.dim(0)) ? zt : slice_rows(zt, drop, drop + common);

  DistractorPolicy policy;
  if (cfg_.distractors == "all") {
    policy.kind = DistractorPolicy::Kind::InUtteranceAll;
  } else {
    policy.kind = DistractorPolicy::Kind::InUtteranceK;
    policy.k = std::min<std::int64_t>(cfg_.distractor_k, common - 1);
    policy.seed = derive_seed(cfg_.seed, "distractors", u64utt, micro);
  }
  ContrastiveBatch<T> batch{z_c, zt_c, static_cast<T>(cfg_.tau), sample_distractors(common, policy)};
  return contrastive_loss(batch, &tape);
}

template <typename T>
StepRecord PretrainRun<T>::step_once() {
  const auto start = std::chrono::steady_clock::now();
  if (cfg_.objective == "predictive") {
    if (kmeans_stage_ == 0) refit_kmeans(1);
    if (kmeans_stage_ == 1 && step_ >= cfg_.steps / 2 && cfg_.steps > 1) refit_kmeans(2);
  }

  const double lr = lr_at(schedule_, step_);
  for (auto& p : params_) p.zero_grad();

  double loss_sum = 0.0;
  std::int64_t frames = 0;
  for (std::int64_t micro = 0; micro < cfg_.accum; ++micro) {
    const std::int64_t gm = step_ * cfg_.accum + micro;
    const Batch batch = batch_for(gm);
    Tape<T> tape;
    Tensor<T> total;
    for (const auto utt : batch.utterances) {
      auto l = utterance_loss(utt, static_cast<std::uint64_t>(gm), tape);
      total = total.defined() ? add(total, l, &tape) : l;
    }
    for (const auto f : batch.frames) frames += f;
    auto micro_loss = scale(total, static_cast<T>(1.0 / static_cast<double>(batch.utterances.size())), &tape);
    const double value = static_cast<double>(micro_loss.item());
    if (!std::isfinite(value))
      throw DivergedError("pretrain: non-finite loss at step " + std::to_string(step_));
    loss_sum += value;
    tape.backward(scale(micro_loss, static_cast<T>(1.0 / static_cast<double>(cfg_.accum)), &tape));
  }

  adam_step(params_, opt_, static_cast<T>(lr));
  if (cfg_.objective == "contrastive")
    ema_update(teacher_, student_, static_cast<T>(cfg_.alpha));
  step_ += 1;

  StepRecord rec;
  rec.step = step_;
  rec.phase = "pretrain";
  rec.loss = loss_sum / static_cast<double>(cfg_.accum);
  rec.lr = lr;
  rec.frames = frames;
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

template <typename T>
void PretrainRun<T>::run(const StepCallback& on_step) {
  const std::string ckpt_path =
      cfg_.out_dir.empty() ? "" : cfg_.out_dir + "/checkpoint.s3ld";
  while (step_ < cfg_.steps) {
    const StepRecord rec = step_once();
    if (on_step) on_step(rec);
    if (!ckpt_path.empty() &&
        (step_ == cfg_.steps || (cfg_.checkpoint_every > 0 && step_ % cfg_.checkpoint_every == 0)))
      save_checkpoint(ckpt_path, snapshot());
  }
}

template <typename T>
Checkpoint PretrainRun<T>::snapshot() {
  Checkpoint ckpt;
  ckpt.meta.version = 1;
  ckpt.meta.step = step_;
  ckpt.meta.adam_t = opt_.t;
  ckpt.meta.alpha = cfg_.alpha;
  ckpt.meta.seed = cfg_.seed;
  ckpt.meta.objective = cfg_.objective;
  ckpt.meta.head = "none";
  ckpt.meta.kmeans_stage = kmeans_stage_;
  ckpt.meta.encoder_text = enc_cfg_.text;

  std::vector<std::string> names;
  for (auto& [name, t] : student_.named_params()) {
    ckpt.arrays.push_back(to_array("student." + name, t));
    names.push_back(name);
  }
  if (cfg_.objective == "contrastive") {
    for (auto& [name, t] : teacher_.named_params()) ckpt.arrays.push_back(to_array("teacher." + name, t));
  } else {
    ckpt.arrays.push_back(to_array("predhead.w", pred_head_w_));
    ckpt.arrays.push_back(to_array("predhead.b", pred_head_b_));
    names.push_back("predhead.w");
    names.push_back("predhead.b");
    if (kmeans_) ckpt.arrays.push_back(to_array("kmeans.centroids", kmeans_->centroids));
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    std::vector<float> m(opt_.m[i].size()), v(opt_.v[i].size());
    for (std::size_t j = 0; j < m.size(); ++j) {
      m[j] = static_cast<float>(opt_.m[i][j]);
      v[j] = static_cast<float>(opt_.v[i][j]);
    }
    ckpt.arrays.push_back(vec_to_array("adam.m." + names[i], m));
    ckpt.arrays.push_back(vec_to_array("adam.v." + names[i], v));
  }
  return ckpt;
}

template <typename T>
void PretrainRun<T>::restore(const Checkpoint& ckpt) {
  if (ckpt.meta.objective != cfg_.objective)
    throw VersionError("checkpoint: objective '" + ckpt.meta.objective + "' does not match the run");
  if (ckpt.meta.encoder_text != enc_cfg_.text)
    throw VersionError("checkpoint: encoder grammar does not match the run config");

  std::vector<std::string> names;
  for (auto& [name, t] : student_.named_params()) {
    load_array_into(ckpt, "student." + name, t);
    names.push_back(name);
  }
  if (cfg_.objective == "contrastive") {
    for (auto& [name, t] : teacher_.named_params()) load_array_into(ckpt, "teacher." + name, t);
  } else {
    load_array_into(ckpt, "predhead.w", pred_head_w_);
    load_array_into(ckpt, "predhead.b", pred_head_b_);
    names.push_back("predhead.w");
    names.push_back("predhead.b");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const NamedArray* m = ckpt.find("adam.m." + names[i]);
    const NamedArray* v = ckpt.find("adam.v." + names[i]);
    if (m == nullptr || v == nullptr) throw VersionError("checkpoint: missing optimizer state for " + names[i]);
    if (m->data.size() != opt_.m[i].size()) throw VersionError("checkpoint: optimizer shape mismatch");
    for (std::size_t j = 0; j < m->data.size(); ++j) {
      opt_.m[i][j] = static_cast<T>(m->data[j]);
      opt_.v[i][j] = static_cast<T>(v->data[j]);
    }
  }
  opt_.t = ckpt.meta.adam_t;
  step_ = ckpt.meta.step;
  if (cfg_.objective == "predictive" && ckpt.meta.kmeans_stage > 0) {
    const NamedArray* c = ckpt.find("kmeans.centroids");
    if (c == nullptr) throw VersionError("checkpoint: missing kmeans centroids");
    // rebuild targets from the restored centroids at the recorded stage
    KmeansModel model;
    model.centroids = Tensor<double>(c->shape);
    for (std::int64_t i = 0; i < model.centroids.numel(); ++i)
      model.centroids.at(i) = static_cast<double>(c->data[static_cast<std::size_t>(i)]);
    kmeans_ = std::move(model);
    kmeans_stage_ = ckpt.meta.kmeans_stage;
    rebuild_targets(kmeans_stage_);
  }
}

// ---- Finetuning -------------------------------------------------------------------

template <typename T>
FinetuneResult<T> finetune(const RunConfig& cfg, Encoder<T> encoder, const Corpus& corpus,
                           const StepCallback& on_step) {
  if (corpus.items.empty()) throw ConfigError("finetune: empty corpus");
  const EncoderConfig& enc_cfg = encoder.cfg;
  const std::int64_t d = enc_cfg.final_width();
  const int n_classes = cfg.synth.n_classes;
  const bool ctc = cfg.head == "ctc";
  const std::int64_t head_out = ctc ? n_classes + 1 : n_classes;

  FinetuneResult<T> result;
  result.head_kind = cfg.head;
  result.n_classes = n_classes;
  result.head_w = uniform_tensor<T>({d, head_out}, d, derive_seed(cfg.seed, "head-init"));
  result.head_b = Tensor<T>({head_out});
  result.head_w.set_requires_grad(true);
  result.head_b.set_requires_grad(true);

  std::vector<Tensor<T>> trainable{encoder.agg_logits, result.head_w, result.head_b};
  if (cfg.train_encoder)
    for (auto& p : encoder.params()) {
      if (p.id() == encoder.agg_logits.id()) continue;
      trainable.push_back(p);
    }

  AdamState<T> opt;
  opt.config.beta1 = static_cast<T>(cfg.beta1);
  opt.config.beta2 = static_cast<T>(cfg.beta2);
  opt.config.eps = static_cast<T>(cfg.adam_eps);
  opt.config.weight_decay = static_cast<T>(cfg.weight_decay);
  opt.init(trainable);

  ScheduleConfig schedule;
  schedule.kind = ScheduleConfig::Kind::TriPhase;
  schedule.base_lr = cfg.finetune_lr;
  schedule.total_steps = cfg.finetune_steps;
  schedule.warm_frac = cfg.warm_frac;
  schedule.hold_frac = cfg.hold_frac;

  const AggregateMode mode = cfg.aggregate == "all" ? AggregateMode::All : AggregateMode::TopStage;
  const auto counts = corpus.frame_counts();
  std::vector<BatchPlan> plans;
  auto batch_for = [&](std::int64_t index) -> Batch {
    std::int64_t idx = index, epoch = 0;
    for (;;) {
      if (epoch >= static_cast<std::int64_t>(plans.size()))
        plans.push_back(plan_batches(counts, cfg.frame_budget,
                                     derive_seed(cfg.seed, "ft-plan", static_cast<std::uint64_t>(epoch))));
      const auto& plan = plans[static_cast<std::size_t>(epoch)];
      if (idx < static_cast<std::int64_t>(plan.batches.size()))
        return plan.batches[static_cast<std::size_t>(idx)];
      idx -= static_cast<std::int64_t>(plan.batches.size());
      ++epoch;
    }
  };

  const std::int64_t ds = enc_cfg.downsample();
  for (std::int64_t step = 0; step < cfg.finetune_steps; ++step) {
    const auto start = std::chrono::steady_clock::now();
    const double lr = lr_at(schedule, step);
    for (auto& p : trainable) p.zero_grad();

    const Batch batch = batch_for(step);
    Tape<T> tape;
    Tensor<T> total;
    std::int64_t frames = 0, used = 0;
    for (const auto utt : batch.utterances) {
      const auto& item = corpus.items[static_cast<std::size_t>(utt)];
      Tape<T>* enc_tape = cfg.train_encoder ? &tape : nullptr;
      auto r = encode(encoder, item.clean_mel, enc_tape);
      auto layers = aggregation_set(encoder, r, mode, enc_tape);
      auto agg = aggregate_layers(layers, encoder.agg_logits, &tape);
      auto scores = linear(agg, result.head_w, result.head_b, &tape);

      Tensor<T> loss;
      if (ctc) {
        std::vector<int> ref;
        for (const auto& seg : item.wave.labels) ref.push_back(seg.cls);
        std::int64_t repeats = 0;
        for (std::size_t i = 1; i < ref.size(); ++i)
          if (ref[i] == ref[i - 1]) ++repeats;
        if (ref.empty() || static_cast<std::int64_t>(ref.size()) + repeats > scores.dim(0))
          continue;  // infeasible alignment for this utterance
        loss = ctc_loss(log_softmax(scores, 1, &tape), ref, &tape);
      } else {
        const auto pooled = pool_labels(item.clean_mel.frame_labels, scores.dim(0), ds);
        MaskSet labeled;
        labeled.frames = scores.dim(0);
        labeled.span = 1;
        labeled.mask.resize(static_cast<std::size_t>(labeled.frames));
        bool any = false;
        for (std::int64_t t = 0; t < labeled.frames; ++t) {
          labeled.mask[static_cast<std::size_t>(t)] = pooled[static_cast<std::size_t>(t)] >= 0;
          any |= pooled[static_cast<std::size_t>(t)] >= 0;
        }
        if (!any) continue;
        std::vector<int> safe(pooled.begin(), pooled.end());
        for (auto& c : safe)
          if (c < 0) c = 0;
        loss = masked_predictive_loss(scores, safe, labeled, &tape);
      }
      total = total.defined() ? add(total, loss, &tape) : loss;
      frames += item.clean_mel.frames;
      ++used;
    }
    if (!total.defined()) continue;
    auto mean_loss = scale(total, static_cast<T>(1.0 / static_cast<double>(used)), &tape);
    const double value = static_cast<double>(mean_loss.item());
    if (!std::isfinite(value)) throw DivergedError("finetune: non-finite loss at step " + std::to_string(step));
    tape.backward(mean_loss);
    adam_step(trainable, opt, static_cast<T>(lr));

    if (on_step) {
      StepRecord rec;
      rec.step = step + 1;
      rec.phase = ctc ? "finetune-ctc" : "finetune-frame";
      rec.loss = value;
      rec.lr = lr;
      rec.frames = frames;
      rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      on_step(rec);
    }
  }

  result.encoder = std::move(encoder);
  return result;
}

template <typename T>
Checkpoint encoder_to_checkpoint(Encoder<T>& encoder, const CheckpointMeta& meta) {
  Checkpoint ckpt;
  ckpt.meta = meta;
  ckpt.meta.encoder_text = encoder.cfg.text;
  for (auto& [name, t] : encoder.named_params()) ckpt.arrays.push_back(to_array("student." + name, t));
  return ckpt;
}

template <typename T>
Encoder<T> encoder_from_checkpoint(const Checkpoint& ckpt, Role role) {
  EncoderConfig cfg = parse_encoder_config(ckpt.meta.encoder_text);
  Encoder<T> enc = init_encoder<T>(cfg, role, 0);
  for (auto& [name, t] : enc.named_params()) load_array_into(ckpt, "student." + name, t);
  return enc;
}

#define S3L_INSTANTIATE_TRAINER(T)                                                               \
  template void ema_update(std::vector<Tensor<T>>&, const std::vector<Tensor<T>>&, T);           \
  template void ema_update(Encoder<T>&, Encoder<T>&, T);                                         \
  template class PretrainRun<T>;                                                                 \
  template struct FinetuneResult<T>;                                                             \
  template FinetuneResult<T> finetune(const RunConfig&, Encoder<T>, const Corpus&,               \
                                      const StepCallback&);                                      \
  template Checkpoint encoder_to_checkpoint(Encoder<T>&, const CheckpointMeta&);                 \
  template Encoder<T> encoder_from_checkpoint(const Checkpoint&, Role);

S3L_INSTANTIATE_TRAINER(float)
S3L_INSTANTIATE_TRAINER(double)

}  // namespace s3l
