#include <cmath>
#include <utility>

#include "s3l/tensor.hpp"

namespace s3l {

namespace {

template <typename T>
void finish(Tape<T>* tape, const char* op, std::vector<Tensor<T>> inputs, Tensor<T>& out,
            std::function<void()> backward_fn) {
  out.set_requires_grad(true);
  tape->record(op, std::move(inputs), out, std::move(backward_fn));
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out({m, n});
  {
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (std::int64_t i = 0; i < m; ++i) {
      const T* arow = pa + i * k;
      T* orow = po + i * n;
      for (std::int64_t p = 0; p < k; ++p) {
        const T av = arow[p];
        if (av == T{0}) continue;
        const T* brow = pb + p * n;
        for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (wants_grad(tape, {a, b})) {
    finish(tape, "matmul", {a, b}, out, [a = a, b = b, out = out, m = m, k = k, n = n]() mutable {
      const T* pb = b.data();
      const T* pa = a.data();
      const T* pg = out.grad().data();
      if (a.requires_grad()) {
        // dA = dY * B^T
        T* ga = a.grad().data();
        for (std::int64_t i = 0; i < m; ++i) {
          const T* grow = pg + i * n;
          T* garow = ga + i * k;
          for (std::int64_t p = 0; p < k; ++p) {
            const T* brow = pb + p * n;
            T acc{0};
            for (std::int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            garow[p] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        // dB = A^T * dY
        T* gb = b.grad().data();
        for (std::int64_t p = 0; p < k; ++p) {
          T* gbrow = gb + p * n;
          for (std::int64_t i = 0; i < m; ++i) {
            const T av = pa[i * k + p];
            if (av == T{0}) continue;
            const T* grow = pg + i * n;
            for (std::int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, Tape<T>* tape) {
  Tensor<T> y = matmul(x, w, tape);
  if (!b.defined()) return y;
  return add_row(y, b, tape);
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::int64_t stride, std::int64_t padding, Tape<T>* tape) {
  if (x.rank() != 2 || w.rank() != 3)
    throw DimensionError("conv1d: expected x [C_in x T], w [C_out x C_in x K]");
  const std::int64_t c_in = x.dim(0), t_in = x.dim(1);
  const std::int64_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in)
    throw DimensionError("conv1d: weight expects " + std::to_string(w.dim(1)) +
                         " input channels, got " + std::to_string(c_in));
  if (k < 1 || stride < 1 || padding < 0) throw ConfigError("conv1d: need K >= 1, stride >= 1, padding >= 0");
  if (bias.defined() && bias.numel() != c_out) throw DimensionError("conv1d: bias size mismatch");
  const std::int64_t t_out = (t_in + 2 * padding - k) / stride + 1;
  if (t_in + 2 * padding < k || t_out < 1)
    throw SequenceTooShortError("conv1d: input of " + std::to_string(t_in) +
                                " frames too short for kernel " + std::to_string(k));

  Tensor<T> out({c_out, t_out});
  {
    const T* px = x.data();
    const T* pw = w.data();
    T* po = out.data();
    for (std::int64_t co = 0; co < c_out; ++co) {
      const T b = bias.defined() ? bias.at(co) : T{0};
      T* orow = po + co * t_out;
      for (std::int64_t t = 0; t < t_out; ++t) {
        T acc = b;
        const std::int64_t base = t * stride - padding;
        const std::int64_t j0 = std::max<std::int64_t>(0, -base);
        const std::int64_t j1 = std::min<std::int64_t>(k, t_in - base);
        for (std::int64_t ci = 0; ci < c_in; ++ci) {
          const T* xrow = px + ci * t_in + base;
          const T* wrow = pw + (co * c_in + ci) * k;
          for (std::int64_t j = j0; j < j1; ++j) acc += xrow[j] * wrow[j];
        }
        orow[t] = acc;
      }
    }
  }

  if (wants_grad(tape, {x, w, bias.defined() ? bias : Tensor<T>::scalar(T{0})})) {
    finish(tape, "conv1d", {x, w, bias}, out,
           [x = x, w = w, bias = bias, out = out, c_in = c_in, c_out = c_out, t_in = t_in, t_out = t_out, k = k, stride = stride, padding = padding]() mutable {
             const T* pg = out.grad().data();
             const T* px = x.data();
             const T* pw = w.data();
             T* gx = x.requires_grad() ? x.grad().data() : nullptr;
             T* gw = w.requires_grad() ? w.grad().data() : nullptr;
             T* gb = bias.defined() && bias.requires_grad() ? bias.grad().data() : nullptr;
             for (std::int64_t co = 0; co < c_out; ++co)
               for (std::int64_t t = 0; t < t_out; ++t) {
                 const T g = pg[co * t_out + t];
                 if (g == T{0}) continue;
                 if (gb != nullptr) gb[co] += g;
                 const std::int64_t base = t * stride - padding;
                 const std::int64_t j0 = std::max<std::int64_t>(0, -base);
                 const std::int64_t j1 = std::min<std::int64_t>(k, t_in - base);
                 for (std::int64_t ci = 0; ci < c_in; ++ci) {
                   const std::int64_t xoff = ci * t_in + base;
                   const std::int64_t woff = (co * c_in + ci) * k;
                   if (gx != nullptr)
                     for (std::int64_t j = j0; j < j1; ++j) gx[xoff + j] += g * pw[woff + j];
                   if (gw != nullptr)
                     for (std::int64_t j = j0; j < j1; ++j) gw[woff + j] += g * px[xoff + j];
                 }
               }
           });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps,
                     Tape<T>* tape) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank-0 input");
  const std::int64_t d = x.dim(x.rank() - 1);
  if (gamma.numel() != d || beta.numel() != d)
    throw DimensionError("layer_norm: gamma/beta must have the feature size " + std::to_string(d));
  if (!(eps > T{0})) throw ConfigError("layer_norm: eps must be positive");
  const std::int64_t rows = x.numel() / d;

  Tensor<T> out(x.shape());
  std::vector<T> inv_std(static_cast<std::size_t>(rows));
  std::vector<T> mu(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    T m{0};
    for (std::int64_t c = 0; c < d; ++c) m += x.at(r * d + c);
    m /= static_cast<T>(d);
    T var{0};
    for (std::int64_t c = 0; c < d; ++c) {
      const T dv = x.at(r * d + c) - m;
      var += dv * dv;
    }
    var /= static_cast<T>(d);
    const T is = T{1} / std::sqrt(var + eps);
    mu[static_cast<std::size_t>(r)] = m;
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t c = 0; c < d; ++c)
      out.at(r * d + c) = gamma.at(c) * (x.at(r * d + c) - m) * is + beta.at(c);
  }

  if (wants_grad(tape, {x, gamma, beta})) {
    finish(tape, "layer_norm", {x, gamma, beta}, out,
           [x = x, gamma = gamma, beta = beta, out = out, rows = rows, d = d, mu = mu, inv_std = inv_std]() mutable {
             for (std::int64_t r = 0; r < rows; ++r) {
               const T m = mu[static_cast<std::size_t>(r)];
               const T is = inv_std[static_cast<std::size_t>(r)];
               T sum_dxhat{0}, sum_dxhat_xhat{0};
               for (std::int64_t c = 0; c < d; ++c) {
                 const T xhat = (x.at(r * d + c) - m) * is;
                 const T dy = out.grad()[r * d + c];
                 const T dxhat = dy * gamma.at(c);
                 sum_dxhat += dxhat;
                 sum_dxhat_xhat += dxhat * xhat;
                 if (gamma.requires_grad()) gamma.grad()[c] += dy * xhat;
                 if (beta.requires_grad()) beta.grad()[c] += dy;
               }
               if (x.requires_grad()) {
                 const T inv_d = T{1} / static_cast<T>(d);
                 for (std::int64_t c = 0; c < d; ++c) {
                   const T xhat = (x.at(r * d + c) - m) * is;
                   const T dxhat = out.grad()[r * d + c] * gamma.at(c);
                   x.grad()[r * d + c] +=
                       is * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
                 }
               }
             }
           });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis, Tape<T>* tape) {
  if (x.rank() > 2) throw DimensionError("softmax: only rank 1 and 2 supported");
  if (axis < 0 || axis >= static_cast<int>(x.rank())) throw DimensionError("softmax: axis out of range");

  // View as [slices x len] with the softmax axis contiguous: for axis==rank-1
  // that is the natural layout, otherwise we walk with a stride.
  const bool last = axis == static_cast<int>(x.rank()) - 1;
  const std::int64_t len = x.dim(axis);
  const std::int64_t slices = x.numel() / len;
  const std::int64_t stride = last ? 1 : x.dim(1);
  auto index = [last, len, stride](std::int64_t s, std::int64_t i) {
    return last ? s * len + i : i * stride + s;
  };

  Tensor<T> out(x.shape());
  for (std::int64_t s = 0; s < slices; ++s) {
    T mx = x.at(index(s, 0));
    for (std::int64_t i = 1; i < len; ++i) mx = std::max(mx, x.at(index(s, i)));
    T denom{0};
    for (std::int64_t i = 0; i < len; ++i) {
      const T e = std::exp(x.at(index(s, i)) - mx);
      out.at(index(s, i)) = e;
      denom += e;
    }
    for (std::int64_t i = 0; i < len; ++i) out.at(index(s, i)) /= denom;
  }

  if (wants_grad(tape, {x})) {
    finish(tape, "softmax", {x}, out, [x = x, out = out, slices = slices, len = len, index = index]() mutable {
      for (std::int64_t s = 0; s < slices; ++s) {
        T dot{0};
        for (std::int64_t i = 0; i < len; ++i)
          dot += out.grad()[index(s, i)] * out.at(index(s, i));
        for (std::int64_t i = 0; i < len; ++i)
          x.grad()[index(s, i)] += (out.grad()[index(s, i)] - dot) * out.at(index(s, i));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, int axis, Tape<T>* tape) {
  if (x.rank() > 2) throw DimensionError("log_softmax: only rank 1 and 2 supported");
  if (axis < 0 || axis >= static_cast<int>(x.rank()))
    throw DimensionError("log_softmax: axis out of range");
  const bool last = axis == static_cast<int>(x.rank()) - 1;
  const std::int64_t len = x.dim(axis);
  const std::int64_t slices = x.numel() / len;
  const std::int64_t stride = last ? 1 : x.dim(1);
  auto index = [last, len, stride](std::int64_t s, std::int64_t i) {
    return last ? s * len + i : i * stride + s;
  };

  Tensor<T> out(x.shape());
  for (std::int64_t s = 0; s < slices; ++s) {
    T mx = x.at(index(s, 0));
    for (std::int64_t i = 1; i < len; ++i) mx = std::max(mx, x.at(index(s, i)));
    T acc{0};
    for (std::int64_t i = 0; i < len; ++i) acc += std::exp(x.at(index(s, i)) - mx);
    const T lse = mx + std::log(acc);
    for (std::int64_t i = 0; i < len; ++i) out.at(index(s, i)) = x.at(index(s, i)) - lse;
  }

  if (wants_grad(tape, {x})) {
    finish(tape, "log_softmax", {x}, out, [x = x, out = out, slices = slices, len = len, index = index]() mutable {
      for (std::int64_t s = 0; s < slices; ++s) {
        T gsum{0};
        for (std::int64_t i = 0; i < len; ++i) gsum += out.grad()[index(s, i)];
        for (std::int64_t i = 0; i < len; ++i)
          x.grad()[index(s, i)] += out.grad()[index(s, i)] - std::exp(out.at(index(s, i))) * gsum;
      }
    });
  }
  return out;
}

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

template <typename T>
T gelu_value(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
  return static_cast<T>(0.5) * x * (T{1} + std::tanh(u));
}

template <typename T>
T gelu_grad(T x) {
  const T u = static_cast<T>(kGeluC) * (x + static_cast<T>(kGeluA) * x * x * x);
  const T th = std::tanh(u);
  const T du = static_cast<T>(kGeluC) * (T{1} + T{3} * static_cast<T>(kGeluA) * x * x);
  return static_cast<T>(0.5) * (T{1} + th) + static_cast<T>(0.5) * x * (T{1} - th * th) * du;
}

}  // namespace

template <typename T>
Tensor<T> activation(const Tensor<T>& x, Activation kind, Tape<T>* tape) {
  Tensor<T> out(x.shape());
  const std::int64_t n = x.numel();
  if (kind == Activation::Relu)
    for (std::int64_t i = 0; i < n; ++i) out.at(i) = x.at(i) > T{0} ? x.at(i) : T{0};
  else
    for (std::int64_t i = 0; i < n; ++i) out.at(i) = gelu_value(x.at(i));

  if (wants_grad(tape, {x})) {
    finish(tape, kind == Activation::Relu ? "relu" : "gelu", {x}, out, [x = x, out = out, kind = kind]() mutable {
      const std::int64_t m = x.numel();
      if (kind == Activation::Relu) {
        for (std::int64_t i = 0; i < m; ++i)
          if (x.at(i) > T{0}) x.grad()[i] += out.grad()[i];
      } else {
        for (std::int64_t i = 0; i < m; ++i) x.grad()[i] += out.grad()[i] * gelu_grad(x.at(i));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, Rng& rng, Tape<T>* tape) {
  if (p <= T{0}) return x;
  if (p >= T{1}) throw ConfigError("dropout: p must be in [0, 1)");
  const T keep_scale = T{1} / (T{1} - p);
  const std::int64_t n = x.numel();
  std::vector<T> mask(static_cast<std::size_t>(n));
  Tensor<T> out(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const bool keep = rng.uniform() >= static_cast<double>(p);
    mask[static_cast<std::size_t>(i)] = keep ? keep_scale : T{0};
    out.at(i) = x.at(i) * mask[static_cast<std::size_t>(i)];
  }
  if (wants_grad(tape, {x})) {
    finish(tape, "dropout", {x}, out, [x = x, out = out, mask = mask]() mutable {
      const std::int64_t m = x.numel();
      for (std::int64_t i = 0; i < m; ++i)
        x.grad()[i] += out.grad()[i] * mask[static_cast<std::size_t>(i)];
    });
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>*> AttentionParams<T>::all() {
  return {&wq, &bq, &wk, &wv, &bv, &wo, &bo, &ln1_gamma, &ln1_beta,
          &ff_w1, &ff_b1, &ff_w2, &ff_b2, &ln2_gamma, &ln2_beta};
}

template <typename T>
std::vector<const Tensor<T>*> AttentionParams<T>::all() const {
  return {&wq, &bq, &wk, &wv, &bv, &wo, &bo, &ln1_gamma, &ln1_beta,
          &ff_w1, &ff_b1, &ff_w2, &ff_b2, &ln2_gamma, &ln2_beta};
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& x, const AttentionParams<T>& params,
                               std::int64_t n_heads, Activation ff_activation, Tape<T>* tape) {
  if (x.rank() != 2) throw DimensionError("attention: expected x [T x D]");
  const std::int64_t d = x.dim(1);
  if (n_heads < 1 || d % n_heads != 0)
    throw ConfigError("attention: embed dim " + std::to_string(d) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  const std::int64_t dh = d / n_heads;
  const T att_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  const Tensor<T> q = linear(x, params.wq, params.bq, tape);
  const Tensor<T> k = linear(x, params.wk, Tensor<T>{}, tape);
  const Tensor<T> v = linear(x, params.wv, params.bv, tape);

  std::vector<Tensor<T>> heads;
  heads.reserve(static_cast<std::size_t>(n_heads));
  for (std::int64_t h = 0; h < n_heads; ++h) {
    const std::int64_t c0 = h * dh, c1 = (h + 1) * dh;
    const Tensor<T> qh = slice_cols(q, c0, c1, tape);
    const Tensor<T> kh = slice_cols(k, c0, c1, tape);
    const Tensor<T> vh = slice_cols(v, c0, c1, tape);
    const Tensor<T> scores = scale(matmul(qh, transpose(kh, tape), tape), att_scale, tape);
    const Tensor<T> weights = softmax(scores, 1, tape);
    heads.push_back(matmul(weights, vh, tape));
  }
  const Tensor<T> attn = linear(concat_cols(heads, tape), params.wo, params.bo, tape);
  const Tensor<T> h1 =
      layer_norm(add(x, attn, tape), params.ln1_gamma, params.ln1_beta, static_cast<T>(1e-5), tape);
  const Tensor<T> ff = linear(
      activation(linear(h1, params.ff_w1, params.ff_b1, tape), ff_activation, tape),
      params.ff_w2, params.ff_b2, tape);
  return layer_norm(add(h1, ff, tape), params.ln2_gamma, params.ln2_beta, static_cast<T>(1e-5),
                    tape);
}

template <typename T>
double finite_diff_check(const std::function<Tensor<T>(Tape<T>&)>& f,
                         const std::vector<Tensor<T>>& inputs, T eps) {
  if (!(eps >= static_cast<T>(1e-7) && eps <= static_cast<T>(1e-3)))
    throw ContractError("finite_diff_check: eps must lie in [1e-7, 1e-3]");

  std::vector<Tensor<T>> tracked;
  for (const auto& t : inputs)
    if (t.requires_grad()) tracked.push_back(t);
  for (auto& t : tracked) t.zero_grad();

  Tape<T> tape;
  const Tensor<T> loss = f(tape);
  tape.backward(loss);
  std::vector<std::vector<T>> analytic;
  analytic.reserve(tracked.size());
  for (const auto& t : tracked) analytic.push_back(t.grad());

  auto eval = [&]() -> double {
    Tape<T> scratch;
    return static_cast<double>(f(scratch).item());
  };

  double max_rel = 0.0;
  for (std::size_t ti = 0; ti < tracked.size(); ++ti) {
    Tensor<T>& t = tracked[ti];
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      const T saved = t.at(i);
      t.at(i) = saved + eps;
      const double f_plus = eval();
      t.at(i) = saved - eps;
      const double f_minus = eval();
      t.at(i) = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * static_cast<double>(eps));
      const double a = static_cast<double>(analytic[ti][static_cast<std::size_t>(i)]);
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
    }
  }
  return max_rel;
}

template <typename T>
void AdamState<T>::init(const std::vector<Tensor<T>>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(static_cast<std::size_t>(p.numel()), T{0});
    v.emplace_back(static_cast<std::size_t>(p.numel()), T{0});
  }
  t = 0;
}

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, T lr) {
  // lr == 0 is a valid warmup step: moments and t still advance.
  if (!(lr >= T{0})) throw ConfigError("adam: lr must be non-negative");
  if (state.m.size() != params.size())
    throw ContractError("adam: state tracks " + std::to_string(state.m.size()) +
                        " parameters, got " + std::to_string(params.size()));
  state.t += 1;
  const auto& cfg = state.config;
  const T bc1 = T{1} - static_cast<T>(std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.t)));
  const T bc2 = T{1} - static_cast<T>(std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.t)));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<T>& p = params[pi];
    auto& m = state.m[pi];
    auto& v = state.v[pi];
    if (m.size() != p.grad().size()) throw ContractError("adam: parameter/state shape mismatch");
    for (std::size_t i = 0; i < m.size(); ++i) {
      const T g = p.grad()[i];
      if (!std::isfinite(static_cast<double>(g)))
        throw DivergedError("adam: non-finite gradient at step " + std::to_string(state.t));
      m[i] = cfg.beta1 * m[i] + (T{1} - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (T{1} - cfg.beta2) * g * g;
      const T mhat = m[i] / bc1;
      const T vhat = v[i] / bc2;
      p.at(static_cast<std::int64_t>(i)) -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
      if (cfg.weight_decay > T{0})
        p.at(static_cast<std::int64_t>(i)) -= lr * cfg.weight_decay * p.at(static_cast<std::int64_t>(i));
    }
  }
}

#define S3L_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                        \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tape<T>*);      \
  template Tensor<T> conv1d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::int64_t,   \
                            std::int64_t, Tape<T>*);                                              \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,          \
                                Tape<T>*);                                                        \
  template Tensor<T> softmax(const Tensor<T>&, int, Tape<T>*);                                    \
  template Tensor<T> log_softmax(const Tensor<T>&, int, Tape<T>*);                                \
  template Tensor<T> activation(const Tensor<T>&, Activation, Tape<T>*);                          \
  template Tensor<T> dropout(const Tensor<T>&, T, Rng&, Tape<T>*);                                \
  template struct AttentionParams<T>;                                                             \
  template Tensor<T> multi_head_attention(const Tensor<T>&, const AttentionParams<T>&,            \
                                          std::int64_t, Activation, Tape<T>*);                    \
  template double finite_diff_check(const std::function<Tensor<T>(Tape<T>&)>&,                    \
                                    const std::vector<Tensor<T>>&, T);                            \
  template struct AdamState<T>;                                                                   \
  template void adam_step(std::vector<Tensor<T>>&, AdamState<T>&, T);

S3L_INSTANTIATE_OPS(float)
S3L_INSTANTIATE_OPS(double)

}  // namespace s3l
