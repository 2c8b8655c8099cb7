#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "s3l/dsp.hpp"
#include "s3l/tensor.hpp"

namespace s3l {

enum class LayerKind { Conv, Attention };

struct ConvLayerSpec {
  std::int64_t channels = 0;
  std::int64_t kernel = 0;
  std::int64_t stride = 1;
};

struct AttentionLayerSpec {
  std::int64_t embed_dim = 0;
  std::int64_t ff_dim = 0;
  std::int64_t n_heads = 1;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  ConvLayerSpec conv;
  AttentionLayerSpec attn;
};

// Parsed layer grammar. Lines:
//   mels <n>                input mel bins (default 40)
//   conv <c> <k> <s> [xN]   encoder conv layer(s)
//   attn <d> <ff> <h> [xN]  encoder attention layer(s)
//   project <d>             projection head output size
//   pred_conv <c> <k> <s> [xN]  predictor conv layer(s), stride 1, odd kernel
//   field_order cks|kcs     conv triple reading (default cks = channels,kernel,stride)
//   dropout <p>             attention dropout probability (default 0)
// '#' starts a comment.
struct EncoderConfig {
  std::int64_t n_mels = 40;
  std::vector<LayerSpec> layers;  // repeats unrolled
  std::int64_t projection_dim = 256;
  std::vector<ConvLayerSpec> predictor;
  double dropout = 0.0;
  std::string name = "custom";
  std::string text;  // normalized grammar, round-trips through checkpoints

  std::int64_t downsample() const;
  std::int64_t attention_layer_count() const;
  // Index range [first, count] of the trailing attention group among the
  // unrolled attention layers (the default aggregation set).
  std::pair<std::int64_t, std::int64_t> top_stage() const;
  // Output width after the last layer.
  std::int64_t final_width() const;
  // Frame count after the conv ladder (padding = kernel/2) for a T-frame input.
  std::int64_t output_frames(std::int64_t t_in) const;
  // Cumulative conv downsample in front of each attention layer, per ordinal.
  std::vector<std::int64_t> attention_downsamples() const;
  void validate() const;
};

EncoderConfig parse_encoder_config(const std::string& text);
// Shipped presets: "paper" (Table-1 scale) and "tiny" (desk scale).
const std::string& encoder_preset_text(const std::string& name);
EncoderConfig encoder_preset(const std::string& name);

enum class Role { Student, Teacher };

// Instantiated parameter set. Teacher and student share the same shape
// signature; teacher parameters never require grad, so its forward records
// no tape nodes.
template <typename T>
struct Encoder {
  struct ConvLayer {
    Tensor<T> w, b;
    std::int64_t stride = 1, padding = 0;
  };
  struct LinearLayer {
    Tensor<T> w, b;
  };
  struct Step {
    LayerKind kind = LayerKind::Conv;
    bool has_adapter = false;       // linear bridge inserted before an attention layer
    LinearLayer adapter;
    ConvLayer conv;
    AttentionParams<T> attn;
    std::int64_t n_heads = 0;
  };

  EncoderConfig cfg;
  Role role = Role::Student;
  std::vector<Step> steps;
  LinearLayer projection;
  std::vector<ConvLayer> predictor;
  Tensor<T> agg_logits;  // one per top-stage attention layer; trainable in finetuning

  // All trainable tensors in a stable order, names matching checkpoints.
  std::vector<std::pair<std::string, Tensor<T>>> named_params();
  std::vector<Tensor<T>> params();
  std::int64_t param_count();
};

// Fresh encoder with uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights drawn
// from the run seed; layer-norm gains start at 1, biases and logits at 0.
template <typename T>
Encoder<T> init_encoder(const EncoderConfig& cfg, Role role, std::uint64_t seed);

// Teacher copy: same values, gradients disabled.
template <typename T>
Encoder<T> make_teacher(const Encoder<T>& student);

template <typename T>
struct EncodeResult {
  Tensor<T> final;                 // [T_out x D]
  std::vector<Tensor<T>> layers;   // one per attention layer, at that stage's rate
};

template <typename T>
Tensor<T> mel_to_tensor(const MelSpectrogram& m);

// Forward through the interleaved conv/attention stack. Teacher encoders
// must be called with a null tape.
template <typename T>
EncodeResult<T> encode(Encoder<T>& e, const MelSpectrogram& m, Tape<T>* tape = nullptr,
                       Rng* dropout_rng = nullptr);
template <typename T>
EncodeResult<T> encode(Encoder<T>& e, const Tensor<T>& mel, Tape<T>* tape = nullptr,
                       Rng* dropout_rng = nullptr);

template <typename T>
Tensor<T> project(Encoder<T>& e, const Tensor<T>& final, Tape<T>* tape = nullptr);

// Student-only predictor stack (stride-1 same-padding convs over time).
template <typename T>
Tensor<T> predict(Encoder<T>& e, const Tensor<T>& projected, Tape<T>* tape = nullptr);

// softmax(logits)-weighted sum of layers; all layers must share [T x D].
template <typename T>
Tensor<T> aggregate_layers(const std::vector<Tensor<T>>& layers, const Tensor<T>& logits,
                           Tape<T>* tape = nullptr);

enum class AggregateMode { TopStage, All };

// Aggregation set selection; All resamples earlier-stage layers onto the
// final frame rate by index duplication before the weighted sum.
template <typename T>
std::vector<Tensor<T>> aggregation_set(const Encoder<T>& e, const EncodeResult<T>& r,
                                       AggregateMode mode, Tape<T>* tape = nullptr);

// Analytic forward multiply-add estimate per layer for a T-frame input.
struct MacEstimate {
  std::string layer;
  std::int64_t macs = 0;
};
std::vector<MacEstimate> mac_estimate(const EncoderConfig& cfg, std::int64_t t_in);

}  // namespace s3l
