#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "s3l/errors.hpp"
#include "s3l/rng.hpp"

namespace s3l {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor with an optional gradient buffer. Copies share
// storage; forward ops always allocate fresh outputs, so a tensor's values
// are immutable once it has been consumed by an op. T is float in training
// mode and double in oracle/gradient-check mode.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value) { return Tensor({1}, {value}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T value);

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return d_->shape; }
  std::size_t rank() const { return d_->shape.size(); }
  std::int64_t dim(std::size_t i) const { return d_->shape[i]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(d_->values.size()); }

  T* data() { return d_->values.data(); }
  const T* data() const { return d_->values.data(); }
  std::vector<T>& values() { return d_->values; }
  const std::vector<T>& values() const { return d_->values; }

  T& at(std::int64_t i) { return d_->values[static_cast<std::size_t>(i)]; }
  T at(std::int64_t i) const { return d_->values[static_cast<std::size_t>(i)]; }
  // 2-d accessors (row-major).
  T& at(std::int64_t r, std::int64_t c) { return d_->values[static_cast<std::size_t>(r * d_->shape[1] + c)]; }
  T at(std::int64_t r, std::int64_t c) const { return d_->values[static_cast<std::size_t>(r * d_->shape[1] + c)]; }

  // Value of a scalar tensor (ContractError otherwise).
  T item() const;

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  // Gradient buffer; allocated as zeros when requires_grad is set.
  std::vector<T>& grad() { return d_->grad; }
  const std::vector<T>& grad() const { return d_->grad; }
  void zero_grad();

  bool all_finite() const;

  // Identity of the underlying storage, used by the tape and checkpoints.
  const void* id() const { return d_.get(); }
  Tensor clone() const;

 private:
  struct Data {
    Shape shape;
    std::vector<T> values;
    std::vector<T> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Data> d_;
};

// Reverse-mode tape. Nodes are recorded in forward order, which is a
// topological order by construction; backward() replays them once in
// reverse. Ops that receive a null tape run inference-only (the teacher
// path) and record nothing.
template <typename T>
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<Tensor<T>> inputs;
    Tensor<T> output;
    std::function<void()> backward;
  };

  void record(const char* op, std::vector<Tensor<T>> inputs, Tensor<T> output,
              std::function<void()> backward_fn);

  // Seeds d(loss) = 1 and accumulates gradients into every recorded tensor
  // with requires_grad. Parameters never touched by the graph keep their
  // zeroed gradient buffers.
  void backward(const Tensor<T>& loss);

  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

template <typename T>
bool wants_grad(const Tape<T>* tape, std::initializer_list<Tensor<T>> inputs) {
  if (tape == nullptr) return false;
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

// ---- Elementwise / structural ops ----------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape = nullptr);

// y = x + row (row broadcast over the last axis of a 2-d tensor).
template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, Tape<T>* tape = nullptr);

// Rows [r0, r1) of a 2-d tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t r0, std::int64_t r1, Tape<T>* tape = nullptr);
// Row gather: out[i] = x[indices[i]] (indices may repeat).
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& indices,
                      Tape<T>* tape = nullptr);
// Columns [c0, c1) of a 2-d tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t c1, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape = nullptr);
template <typename T>
Tensor<T> mean(const Tensor<T>& x, Tape<T>* tape = nullptr);

// ---- Core numerical ops ---------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape = nullptr);

// y = x * w + b for x [n x in], w [in x out], b [out] (b may be undefined).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b,
                 Tape<T>* tape = nullptr);

// Cross-correlation over time: x [C_in x T], w [C_out x C_in x K], bias [C_out].
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::int64_t stride, std::int64_t padding, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis, Tape<T>* tape = nullptr);

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis, Tape<T>* tape = nullptr);

enum class Activation { Relu, Gelu };

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind, Tape<T>* tape = nullptr);

// Zeroes elements with probability p (scaling survivors by 1/(1-p)).
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng, Tape<T>* tape = nullptr);

// Parameters of one attention block: self-attention with residual + layer
// norm followed by a position-wise feed-forward with residual + layer norm.
// The key projection carries no bias: a per-row constant added to the
// attention logits cancels in the softmax, so it would be dead weight.
template <typename T>
struct AttentionParams {
  Tensor<T> wq, bq, wk, wv, bv, wo, bo;
  Tensor<T> ln1_gamma, ln1_beta;
  Tensor<T> ff_w1, ff_b1, ff_w2, ff_b2;
  Tensor<T> ln2_gamma, ln2_beta;

  std::vector<Tensor<T>*> all();
  std::vector<const Tensor<T>*> all() const;
};

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                               std::int64_t n_heads, Activation ff_activation,
                               Tape<T>* tape = nullptr);

// ---- Verification harness --------------------------------------------------

// Central finite differences on every requires_grad input of f. f must build
// its graph on the provided tape from `inputs` and return a scalar loss.
// Returns the max relative error between analytic and numeric gradients,
// with denominator max(|a|, |b|, 1e-8).
template <typename T>
double finite_diff_check(const std::function<Tensor<T>(Tape<T>&)>& f,
                         const std::vector<Tensor<T>>& inputs, T eps);

// ---- Optimizer --------------------------------------------------------------

template <typename T>
struct AdamConfig {
  T lr = static_cast<T>(3e-4);
  T beta1 = static_cast<T>(0.9);
  T beta2 = static_cast<T>(0.98);
  T eps = static_cast<T>(1e-8);
  T weight_decay = static_cast<T>(0);
};

// First/second moment buffers for a fixed parameter list; t advances by one
// per step and is shared by all parameters.
template <typename T>
struct AdamState {
  AdamConfig<T> config;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;

  void init(const std::vector<Tensor<T>>& params);
};

// One Adam step with bias correction and decoupled weight decay, reading
// gradients from each parameter's grad buffer. lr overrides config.lr for
// schedule-driven training. Throws DivergedError on non-finite gradients.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr);

}  // namespace s3l
