#include "s3l/encoder.hpp"

#include <cmath>
#include <map>
#include <sstream>

namespace s3l {

std::int64_t EncoderConfig::downsample() const {
  std::int64_t d = 1;
  for (const auto& l : layers)
    if (l.kind == LayerKind::Conv) d *= l.conv.stride;
  return d;
}

std::int64_t EncoderConfig::attention_layer_count() const {
  std::int64_t n = 0;
  for (const auto& l : layers) n += l.kind == LayerKind::Attention ? 1 : 0;
  return n;
}

std::pair<std::int64_t, std::int64_t> EncoderConfig::top_stage() const {
  // Last contiguous run of attention layers, as ordinals among attention layers.
  std::int64_t run_start = -1, run_len = 0, ordinal = 0;
  std::int64_t cur_start = -1, cur_len = 0;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Attention) {
      if (cur_len == 0) cur_start = ordinal;
      ++cur_len;
      ++ordinal;
      run_start = cur_start;
      run_len = cur_len;
    } else {
      cur_len = 0;
    }
  }
  return {run_start, run_len};
}

std::int64_t EncoderConfig::final_width() const {
  std::int64_t width = n_mels;
  for (const auto& l : layers)
    width = l.kind == LayerKind::Conv ? l.conv.channels : l.attn.embed_dim;
  return width;
}

std::int64_t EncoderConfig::output_frames(std::int64_t t_in) const {
  std::int64_t t = t_in;
  for (const auto& l : layers) {
    if (l.kind != LayerKind::Conv) continue;
    const std::int64_t pad = l.conv.kernel / 2;
    t = (t + 2 * pad - l.conv.kernel) / l.conv.stride + 1;
    if (t < 1) throw SequenceTooShortError("encoder: input too short for the conv ladder");
  }
  return t;
}

std::vector<std::int64_t> EncoderConfig::attention_downsamples() const {
  std::vector<std::int64_t> out;
  std::int64_t ds = 1;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::Conv)
      ds *= l.conv.stride;
    else
      out.push_back(ds);
  }
  return out;
}

void EncoderConfig::validate() const {
  if (n_mels < 1) throw ConfigError("encoder: n_mels must be positive");
  if (projection_dim < 1) throw ConfigError("encoder: projection dim must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must lie in [0, 1)");
  bool any_conv = false, any_attn = false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    if (l.kind == LayerKind::Conv) {
      any_conv = true;
      if (l.conv.channels < 1 || l.conv.kernel < 1 || l.conv.stride < 1)
        throw ConfigError("encoder: layer " + std::to_string(i) + " has non-positive conv fields");
    } else {
      any_attn = true;
      if (l.attn.embed_dim < 1 || l.attn.ff_dim < 1 || l.attn.n_heads < 1)
        throw ConfigError("encoder: layer " + std::to_string(i) + " has non-positive attention fields");
      if (l.attn.embed_dim % l.attn.n_heads != 0)
        throw ConfigError("encoder: layer " + std::to_string(i) + " embed dim " +
                          std::to_string(l.attn.embed_dim) + " not divisible by " +
                          std::to_string(l.attn.n_heads) + " heads");
    }
  }
  if (!any_conv || !any_attn)
    throw ConfigError("encoder: need at least one conv and one attention layer");
  for (std::size_t i = 0; i < predictor.size(); ++i) {
    const auto& c = predictor[i];
    if (c.channels < 1 || c.kernel < 1) throw ConfigError("encoder: bad predictor layer " + std::to_string(i));
    if (c.stride != 1) throw ConfigError("encoder: predictor layer " + std::to_string(i) + " must have stride 1");
    if (c.kernel % 2 == 0)
      throw ConfigError("encoder: predictor layer " + std::to_string(i) +
                        " needs an odd kernel to preserve length");
  }
  if (!predictor.empty() && predictor.back().channels != projection_dim)
    throw ConfigError("encoder: predictor must end at the projection dim to keep z shapes aligned");
}

EncoderConfig parse_encoder_config(const std::string& text) {
  EncoderConfig cfg;
  cfg.text = text;
  bool kernel_first = false;  // conv triple reading: default {channels, kernel, stride}
  std::istringstream in(text);
  std::string line;
  std::size_t layer_index = 0;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string head;
    if (!(ls >> head)) continue;

    auto read_repeat = [&ls]() -> std::int64_t {
      std::string tok;
      if (!(ls >> tok)) return 1;
      if (tok.size() < 2 || tok[0] != 'x') throw ConfigError("encoder grammar: expected xN, got '" + tok + "'");
      return std::stoll(tok.substr(1));
    };
    auto fail_if_missing = [&](bool ok) {
      if (!ok)
        throw ConfigError("encoder grammar: malformed '" + head + "' line at layer index " +
                          std::to_string(layer_index));
    };

    if (head == "mels") {
      fail_if_missing(static_cast<bool>(ls >> cfg.n_mels));
    } else if (head == "field_order") {
      std::string order;
      fail_if_missing(static_cast<bool>(ls >> order));
      if (order == "cks")
        kernel_first = false;
      else if (order == "kcs")
        kernel_first = true;
      else
        throw ConfigError("encoder grammar: field_order must be cks or kcs");
    } else if (head == "conv" || head == "pred_conv") {
      ConvLayerSpec c;
      std::int64_t a = 0, b = 0, s = 0;
      fail_if_missing(static_cast<bool>(ls >> a >> b >> s));
      c.channels = kernel_first ? b : a;
      c.kernel = kernel_first ? a : b;
      c.stride = s;
      const std::int64_t repeat = read_repeat();
      for (std::int64_t r = 0; r < repeat; ++r) {
        if (head == "conv") {
          LayerSpec l;
          l.kind = LayerKind::Conv;
          l.conv = c;
          cfg.layers.push_back(l);
          ++layer_index;
        } else {
          cfg.predictor.push_back(c);
        }
      }
    } else if (head == "attn") {
      AttentionLayerSpec a;
      fail_if_missing(static_cast<bool>(ls >> a.embed_dim >> a.ff_dim >> a.n_heads));
      const std::int64_t repeat = read_repeat();
      for (std::int64_t r = 0; r < repeat; ++r) {
        LayerSpec l;
        l.kind = LayerKind::Attention;
        l.attn = a;
        cfg.layers.push_back(l);
        ++layer_index;
      }
    } else if (head == "project") {
      fail_if_missing(static_cast<bool>(ls >> cfg.projection_dim));
    } else if (head == "dropout") {
      fail_if_missing(static_cast<bool>(ls >> cfg.dropout));
    } else {
      throw ConfigError("encoder grammar: unknown directive '" + head + "'");
    }
  }
  cfg.validate();
  return cfg;
}

const std::string& encoder_preset_text(const std::string& name) {
  static const std::string paper =
      "mels 40\n"
      "conv 384 5 2\n"
      "conv 512 5 2\n"
      "conv 512 1 1\n"
      "attn 512 2048 8 x2\n"
      "conv 1536 5 2\n"
      "conv 768 1 1\n"
      // Table prints 12 heads here, but 12 does not divide the 512 embed
      // dim; 8 keeps the stage-1 head width of 64.
      "attn 512 3072 8 x2\n"

      "project 256\n"
      "pred_conv 256 5 1 x2\n"
      "pred_conv 256 1 1\n";
  static const std::string tiny =
      "mels 40\n"
      "conv 64 5 2\n"
      "conv 64 5 2\n"
      "conv 64 1 1\n"
      "attn 64 128 2 x2\n"
      "conv 64 5 2\n"
      "conv 64 1 1\n"
      "attn 64 128 2 x2\n"
      "project 64\n"
      "pred_conv 64 5 1 x2\n"
      "pred_conv 64 1 1\n";
  if (name == "paper") return paper;
  if (name == "tiny") return tiny;
  throw ConfigError("unknown encoder preset '" + name + "' (expected paper or tiny)");
}

EncoderConfig encoder_preset(const std::string& name) {
  EncoderConfig cfg = parse_encoder_config(encoder_preset_text(name));
  cfg.name = name;
  return cfg;
}

namespace {

// Attention layers whose incoming width differs from their embed dim get a
// linear bridge. Returns, per layer index, the adapter input width or 0.
std::vector<std::int64_t> plan_adapters(const EncoderConfig& cfg) {
  std::vector<std::int64_t> adapters(cfg.layers.size(), 0);
  std::int64_t width = cfg.n_mels;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    if (l.kind == LayerKind::Conv) {
      width = l.conv.channels;
    } else {
      if (width != l.attn.embed_dim) adapters[i] = width;
      width = l.attn.embed_dim;
    }
  }
  return adapters;
}

template <typename T>
Tensor<T> uniform_init(Shape shape, std::int64_t fan_in, Rng& rng) {
  Tensor<T> t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (std::int64_t i = 0; i < t.numel(); ++i)
    t.at(i) = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
Encoder<T> init_encoder(const EncoderConfig& cfg, Role role, std::uint64_t seed) {
  cfg.validate();
  Encoder<T> e;
  e.cfg = cfg;
  e.role = role;
  Rng rng(derive_seed(seed, "encoder-init"));

  const auto adapters = plan_adapters(cfg);
  std::int64_t width = cfg.n_mels;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    typename Encoder<T>::Step step;
    step.kind = l.kind;
    if (l.kind == LayerKind::Conv) {
      step.conv.w = uniform_init<T>({l.conv.channels, width, l.conv.kernel}, width * l.conv.kernel, rng);
      step.conv.b = Tensor<T>({l.conv.channels});
      step.conv.stride = l.conv.stride;
      step.conv.padding = l.conv.kernel / 2;
      width = l.conv.channels;
    } else {
      const std::int64_t d = l.attn.embed_dim;
      if (adapters[i] != 0) {
        step.has_adapter = true;
        step.adapter.w = uniform_init<T>({adapters[i], d}, adapters[i], rng);
        step.adapter.b = Tensor<T>({d});
      }
      auto& p = step.attn;
      p.wq = uniform_init<T>({d, d}, d, rng);
      p.bq = Tensor<T>({d});
      p.wk = uniform_init<T>({d, d}, d, rng);
      p.wv = uniform_init<T>({d, d}, d, rng);
      p.bv = Tensor<T>({d});
      p.wo = uniform_init<T>({d, d}, d, rng);
      p.bo = Tensor<T>({d});
      p.ln1_gamma = Tensor<T>::full({d}, T{1});
      p.ln1_beta = Tensor<T>({d});
      p.ff_w1 = uniform_init<T>({d, l.attn.ff_dim}, d, rng);
      p.ff_b1 = Tensor<T>({l.attn.ff_dim});
      p.ff_w2 = uniform_init<T>({l.attn.ff_dim, d}, l.attn.ff_dim, rng);
      p.ff_b2 = Tensor<T>({d});
      p.ln2_gamma = Tensor<T>::full({d}, T{1});
      p.ln2_beta = Tensor<T>({d});
      step.n_heads = l.attn.n_heads;
      width = d;
    }
    e.steps.push_back(std::move(step));
  }

  e.projection.w = uniform_init<T>({width, cfg.projection_dim}, width, rng);
  e.projection.b = Tensor<T>({cfg.projection_dim});

  std::int64_t pred_width = cfg.projection_dim;
  for (const auto& c : cfg.predictor) {
    typename Encoder<T>::ConvLayer layer;
    layer.w = uniform_init<T>({c.channels, pred_width, c.kernel}, pred_width * c.kernel, rng);
    layer.b = Tensor<T>({c.channels});
    layer.stride = 1;
    layer.padding = c.kernel / 2;
    e.predictor.push_back(std::move(layer));
    pred_width = c.channels;
  }

  e.agg_logits = Tensor<T>({std::max<std::int64_t>(cfg.top_stage().second, 1)});

  if (role == Role::Student)
    for (auto& [name, t] : e.named_params()) t.set_requires_grad(true);
  return e;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Encoder<T>::named_params() {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    auto& s = steps[i];
    const std::string base = "enc." + std::to_string(i) + ".";
    if (s.kind == LayerKind::Conv) {
      out.emplace_back(base + "conv.w", s.conv.w);
      out.emplace_back(base + "conv.b", s.conv.b);
    } else {
      if (s.has_adapter) {
        out.emplace_back(base + "adapter.w", s.adapter.w);
        out.emplace_back(base + "adapter.b", s.adapter.b);
      }
      static const char* kNames[] = {"wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln1_g", "ln1_b",
                                     "ff_w1", "ff_b1", "ff_w2", "ff_b2", "ln2_g", "ln2_b"};
      auto tensors = s.attn.all();
      for (std::size_t j = 0; j < tensors.size(); ++j)
        out.emplace_back(base + "attn." + kNames[j], *tensors[j]);
    }
  }
  out.emplace_back("proj.w", projection.w);
  out.emplace_back("proj.b", projection.b);
  for (std::size_t i = 0; i < predictor.size(); ++i) {
    out.emplace_back("pred." + std::to_string(i) + ".w", predictor[i].w);
    out.emplace_back("pred." + std::to_string(i) + ".b", predictor[i].b);
  }
  out.emplace_back("agg.logits", agg_logits);
  return out;
}

template <typename T>
std::vector<Tensor<T>> Encoder<T>::params() {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_params()) out.push_back(t);
  return out;
}

template <typename T>
std::int64_t Encoder<T>::param_count() {
  std::int64_t n = 0;
  for (auto& [name, t] : named_params()) n += t.numel();
  return n;
}

template <typename T>
Encoder<T> make_teacher(const Encoder<T>& student) {
  Encoder<T> t = student;  // copies handles
  // deep-copy values and drop gradients
  Encoder<T> out = init_encoder<T>(student.cfg, Role::Teacher, 0);
  auto src = t.named_params();
  auto dst = out.named_params();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].second.values() = src[i].second.values();
  return out;
}

template <typename T>
Tensor<T> mel_to_tensor(const MelSpectrogram& m) {
  std::vector<T> values(m.values.size());
  for (std::size_t i = 0; i < m.values.size(); ++i) values[i] = static_cast<T>(m.values[i]);
  return Tensor<T>({m.n_mels, m.frames}, std::move(values));
}

template <typename T>
EncodeResult<T> encode(Encoder<T>& e, const Tensor<T>& mel, Tape<T>* tape, Rng* dropout_rng) {
  if (e.role == Role::Teacher && tape != nullptr)
    throw ContractError("encode: teacher forward must not record the tape");
  if (mel.rank() != 2 || mel.dim(0) != e.cfg.n_mels)
    throw DimensionError("encode: expected [" + std::to_string(e.cfg.n_mels) + " x T] input");

  EncodeResult<T> result;
  Tensor<T> x = mel;
  bool time_first = false;
  for (auto& step : e.steps) {
    if (step.kind == LayerKind::Conv) {
      if (time_first) {
        x = transpose(x, tape);
        time_first = false;
      }
      x = activation(conv1d(x, step.conv.w, step.conv.b, step.conv.stride, step.conv.padding, tape),
                     Activation::Relu, tape);
    } else {
      if (!time_first) {
        x = transpose(x, tape);
        time_first = true;
      }
      if (step.has_adapter) x = linear(x, step.adapter.w, step.adapter.b, tape);
      x = multi_head_attention(x, step.attn, step.n_heads, Activation::Gelu, tape);
      if (e.cfg.dropout > 0.0 && dropout_rng != nullptr)
        x = dropout(x, static_cast<T>(e.cfg.dropout), *dropout_rng, tape);
      result.layers.push_back(x);
    }
  }
  if (!time_first) x = transpose(x, tape);
  result.final = x;
  return result;
}

template <typename T>
EncodeResult<T> encode(Encoder<T>& e, const MelSpectrogram& m, Tape<T>* tape, Rng* dropout_rng) {
  return encode(e, mel_to_tensor<T>(m), tape, dropout_rng);
}

template <typename T>
Tensor<T> project(Encoder<T>& e, const Tensor<T>& final, Tape<T>* tape) {
  return linear(final, e.projection.w, e.projection.b, tape);
}

template <typename T>
Tensor<T> predict(Encoder<T>& e, const Tensor<T>& projected, Tape<T>* tape) {
  if (e.role != Role::Student) throw RoleError("predict: predictor exists on the student only");
  if (e.predictor.empty()) return projected;
  Tensor<T> x = transpose(projected, tape);
  for (std::size_t i = 0; i < e.predictor.size(); ++i) {
    auto& layer = e.predictor[i];
    x = conv1d(x, layer.w, layer.b, layer.stride, layer.padding, tape);
    if (i + 1 < e.predictor.size()) x = activation(x, Activation::Relu, tape);
  }
  return transpose(x, tape);
}

template <typename T>
Tensor<T> aggregate_layers(const std::vector<Tensor<T>>& layers, const Tensor<T>& logits,
                           Tape<T>* tape) {
  if (layers.empty()) throw ContractError("aggregate_layers: no layers");
  if (logits.rank() != 1 || logits.numel() != static_cast<std::int64_t>(layers.size()))
    throw ContractError("aggregate_layers: logits length " + std::to_string(logits.numel()) +
                        " does not match " + std::to_string(layers.size()) + " layers");
  const Shape shape = layers[0].shape();
  for (const auto& l : layers)
    if (l.shape() != shape) throw ContractError("aggregate_layers: layer shapes differ");

  const std::int64_t n_layers = logits.numel();
  const std::int64_t n = layers[0].numel();

  // softmax over the logits (max-subtracted)
  std::vector<T> w(static_cast<std::size_t>(n_layers));
  T mx = logits.at(0);
  for (std::int64_t i = 1; i < n_layers; ++i) mx = std::max(mx, logits.at(i));
  T denom{0};
  for (std::int64_t i = 0; i < n_layers; ++i) {
    w[static_cast<std::size_t>(i)] = std::exp(logits.at(i) - mx);
    denom += w[static_cast<std::size_t>(i)];
  }
  for (auto& v : w) v /= denom;

  Tensor<T> out(shape);
  for (std::int64_t l = 0; l < n_layers; ++l) {
    const T wl = w[static_cast<std::size_t>(l)];
    for (std::int64_t i = 0; i < n; ++i) out.at(i) += wl * layers[static_cast<std::size_t>(l)].at(i);
  }

  bool any_grad = tape != nullptr && logits.requires_grad();
  if (tape != nullptr)
    for (const auto& l : layers) any_grad |= l.requires_grad();
  if (any_grad) {
    std::vector<Tensor<T>> inputs = layers;
    inputs.push_back(logits);
    out.set_requires_grad(true);
    tape->record("aggregate_layers", inputs, out,
                 [layers = layers, logits = logits, out = out, w = w, n = n, n_layers = n_layers]() mutable {
                   std::vector<T> dw(static_cast<std::size_t>(n_layers), T{0});
                   for (std::int64_t l = 0; l < n_layers; ++l) {
                     auto& layer = layers[static_cast<std::size_t>(l)];
                     const T wl = w[static_cast<std::size_t>(l)];
                     T acc{0};
                     for (std::int64_t i = 0; i < n; ++i) {
                       acc += out.grad()[i] * layer.at(i);
                       if (layer.requires_grad()) layer.grad()[i] += wl * out.grad()[i];
                     }
                     dw[static_cast<std::size_t>(l)] = acc;
                   }
                   if (logits.requires_grad()) {
                     T dot{0};
                     for (std::int64_t l = 0; l < n_layers; ++l) dot += dw[static_cast<std::size_t>(l)] * w[static_cast<std::size_t>(l)];
                     for (std::int64_t l = 0; l < n_layers; ++l)
                       logits.grad()[l] += (dw[static_cast<std::size_t>(l)] - dot) * w[static_cast<std::size_t>(l)];
                   }
                 });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> aggregation_set(const Encoder<T>& e, const EncodeResult<T>& r,
                                       AggregateMode mode, Tape<T>* tape) {
  const auto [first, count] = e.cfg.top_stage();
  if (first < 0 || count < 1) throw ContractError("aggregation_set: no attention layers");
  if (mode == AggregateMode::TopStage) {
    std::vector<Tensor<T>> out;
    for (std::int64_t i = first; i < first + count; ++i)
      out.push_back(r.layers[static_cast<std::size_t>(i)]);
    return out;
  }

  // All: duplicate-sample every layer onto the final stage's frame count.
  const std::int64_t t_out = r.layers.back().dim(0);
  const std::int64_t d = r.layers.back().dim(1);
  std::vector<Tensor<T>> out;
  for (const auto& layer : r.layers) {
    if (layer.dim(1) != d)
      throw ContractError("aggregation_set: attention dims differ across stages; aggregate=all needs equal dims");
    if (layer.dim(0) == t_out) {
      out.push_back(layer);
      continue;
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(t_out));
    for (std::int64_t t = 0; t < t_out; ++t)
      idx[static_cast<std::size_t>(t)] = std::min(layer.dim(0) - 1, t * layer.dim(0) / t_out);
    out.push_back(gather_rows(layer, idx, tape));
  }
  return out;
}

std::vector<MacEstimate> mac_estimate(const EncoderConfig& cfg, std::int64_t t_in) {
  std::vector<MacEstimate> out;
  const auto adapters = plan_adapters(cfg);
  std::int64_t width = cfg.n_mels;
  std::int64_t t = t_in;
  for (std::size_t i = 0; i < cfg.layers.size(); ++i) {
    const auto& l = cfg.layers[i];
    if (l.kind == LayerKind::Conv) {
      const std::int64_t pad = l.conv.kernel / 2;
      const std::int64_t t_out = (t + 2 * pad - l.conv.kernel) / l.conv.stride + 1;
      out.push_back({"conv" + std::to_string(i),
                     l.conv.channels * width * l.conv.kernel * t_out});
      width = l.conv.channels;
      t = t_out;
    } else {
      const std::int64_t d = l.attn.embed_dim;
      if (adapters[i] != 0) out.push_back({"adapter" + std::to_string(i), t * adapters[i] * d});
      const std::int64_t macs = 4 * t * d * d + 2 * t * t * d + 2 * t * d * l.attn.ff_dim;
      out.push_back({"attn" + std::to_string(i), macs});
      width = d;
    }
  }
  out.push_back({"proj", t * width * cfg.projection_dim});
  std::int64_t pw = cfg.projection_dim;
  for (std::size_t i = 0; i < cfg.predictor.size(); ++i) {
    out.push_back({"pred" + std::to_string(i), cfg.predictor[i].channels * pw * cfg.predictor[i].kernel * t});
    pw = cfg.predictor[i].channels;
  }
  return out;
}

#define S3L_INSTANTIATE_ENCODER(T)                                                              \
  template struct Encoder<T>;                                                                   \
  template Encoder<T> init_encoder(const EncoderConfig&, Role, std::uint64_t);                  \
  template Encoder<T> make_teacher(const Encoder<T>&);                                          \
  template Tensor<T> mel_to_tensor(const MelSpectrogram&);                                      \
  template EncodeResult<T> encode(Encoder<T>&, const Tensor<T>&, Tape<T>*, Rng*);               \
  template EncodeResult<T> encode(Encoder<T>&, const MelSpectrogram&, Tape<T>*, Rng*);          \
  template Tensor<T> project(Encoder<T>&, const Tensor<T>&, Tape<T>*);                          \
  template Tensor<T> predict(Encoder<T>&, const Tensor<T>&, Tape<T>*);                          \
  template Tensor<T> aggregate_layers(const std::vector<Tensor<T>>&, const Tensor<T>&, Tape<T>*); \
  template std::vector<Tensor<T>> aggregation_set(const Encoder<T>&, const EncodeResult<T>&,    \
                                                  AggregateMode, Tape<T>*);

S3L_INSTANTIATE_ENCODER(float)
S3L_INSTANTIATE_ENCODER(double)

}  // namespace s3l
