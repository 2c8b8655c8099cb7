#include "s3l/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace s3l {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

template <typename T>
Tensor<T>::Tensor(Shape shape) : d_(std::make_shared<Data>()) {
  for (const auto d : shape)
    if (d <= 0) throw DimensionError("tensor dimension must be positive, got " + shape_str(shape));
  d_->shape = std::move(shape);
  d_->values.assign(static_cast<std::size_t>(shape_numel(d_->shape)), T{0});
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values) : Tensor(std::move(shape)) {
  if (static_cast<std::int64_t>(values.size()) != shape_numel(d_->shape))
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(d_->shape));
  d_->values = std::move(values);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value) {
  Tensor t(std::move(shape));
  for (auto& v : t.d_->values) v = value;
  return t;
}

template <typename T>
T Tensor<T>::item() const {
  if (!d_ || d_->values.size() != 1) throw ContractError("item() requires a scalar tensor");
  return d_->values[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  d_->requires_grad = flag;
  if (flag)
    d_->grad.assign(d_->values.size(), T{0});
  else
    d_->grad.clear();
  return *this;
}

template <typename T>
void Tensor<T>::zero_grad() {
  if (d_->requires_grad) d_->grad.assign(d_->values.size(), T{0});
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (const T v : d_->values)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor t(d_->shape, d_->values);
  if (d_->requires_grad) {
    t.set_requires_grad(true);
    t.d_->grad = d_->grad;
  }
  return t;
}

template <typename T>
void Tape<T>::record(const char* op, std::vector<Tensor<T>> inputs, Tensor<T> output,
                     std::function<void()> backward_fn) {
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(backward_fn)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (nodes_.empty()) throw ContractError("backward on an empty tape");
  if (!loss.defined() || loss.numel() != 1) throw ContractError("backward requires a scalar loss");
  if (!loss.requires_grad()) throw ContractError("loss is not connected to the tape");
  Tensor<T> seed = loss;  // handle copy, shared storage
  seed.grad()[0] += T{1};
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
}

namespace {

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// Marks `out` as a graph tensor and records the node when grads are wanted.
template <typename T>
void finish(Tape<T>* tape, const char* op, std::vector<Tensor<T>> inputs, Tensor<T>& out,
            std::function<void()> backward_fn) {
  out.set_requires_grad(true);
  tape->record(op, std::move(inputs), out, std::move(backward_fn));
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  if (wants_grad(tape, {a, b})) {
    finish(tape, "add", {a, b}, out, [a = a, b = b, out = out]() mutable {
      const std::int64_t m = out.numel();
      if (a.requires_grad())
        for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i];
      if (b.requires_grad())
        for (std::int64_t i = 0; i < m; ++i) b.grad()[i] += out.grad()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) - b.at(i);
  if (wants_grad(tape, {a, b})) {
    finish(tape, "sub", {a, b}, out, [a = a, b = b, out = out]() mutable {
      const std::int64_t m = out.numel();
      if (a.requires_grad())
        for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i];
      if (b.requires_grad())
        for (std::int64_t i = 0; i < m; ++i) b.grad()[i] -= out.grad()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b, Tape<T>* tape) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  if (wants_grad(tape, {a, b})) {
    finish(tape, "mul", {a, b}, out, [a = a, b = b, out = out]() mutable {
      const std::int64_t m = out.numel();
      if (a.requires_grad())
        for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i] * b.at(i);
      if (b.requires_grad())
        for (std::int64_t i = 0; i < m; ++i) b.grad()[i] += out.grad()[i] * a.at(i);
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor, Tape<T>* tape) {
  Tensor<T> out(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.at(i) = a.at(i) * factor;
  if (wants_grad(tape, {a})) {
    finish(tape, "scale", {a}, out, [a = a, out = out, factor = factor]() mutable {
      const std::int64_t m = out.numel();
      for (std::int64_t i = 0; i < m; ++i) a.grad()[i] += out.grad()[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& x, const Tensor<T>& row, Tape<T>* tape) {
  if (x.rank() != 2 || row.rank() != 1 || row.dim(0) != x.dim(1))
    throw DimensionError("add_row: expected [n x d] + [d], got " + shape_str(x.shape()) + " + " +
                         shape_str(row.shape()));
  const std::int64_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < d; ++c) out.at(r, c) = x.at(r, c) + row.at(c);
  if (wants_grad(tape, {x, row})) {
    finish(tape, "add_row", {x, row}, out, [x = x, row = row, out = out, n = n, d = d]() mutable {
      if (x.requires_grad())
        for (std::int64_t i = 0; i < n * d; ++i) x.grad()[i] += out.grad()[i];
      if (row.requires_grad())
        for (std::int64_t r = 0; r < n; ++r)
          for (std::int64_t c = 0; c < d; ++c) row.grad()[c] += out.grad()[r * d + c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, Tape<T>* tape) {
  if (x.rank() != 2) throw DimensionError("transpose: expected a 2-d tensor");
  const std::int64_t n = x.dim(0), d = x.dim(1);
  Tensor<T> out({d, n});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < d; ++c) out.at(c, r) = x.at(r, c);
  if (wants_grad(tape, {x})) {
    finish(tape, "transpose", {x}, out, [x = x, out = out, n = n, d = d]() mutable {
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < d; ++c) x.grad()[r * d + c] += out.grad()[c * n + r];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::int64_t r0, std::int64_t r1, Tape<T>* tape) {
  if (x.rank() != 2) throw DimensionError("slice_rows: expected a 2-d tensor");
  if (r0 < 0 || r1 > x.dim(0) || r0 >= r1) throw DimensionError("slice_rows: bad range");
  const std::int64_t d = x.dim(1);
  Tensor<T> out({r1 - r0, d});
  for (std::int64_t r = r0; r < r1; ++r)
    for (std::int64_t c = 0; c < d; ++c) out.at(r - r0, c) = x.at(r, c);
  if (wants_grad(tape, {x})) {
    finish(tape, "slice_rows", {x}, out, [x = x, out = out, r0 = r0, d = d]() mutable {
      const std::int64_t rows = out.dim(0);
      for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < d; ++c) x.grad()[(r + r0) * d + c] += out.grad()[r * d + c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<std::int64_t>& indices, Tape<T>* tape) {
  if (x.rank() != 2) throw DimensionError("gather_rows: expected a 2-d tensor");
  const std::int64_t d = x.dim(1);
  for (const auto r : indices)
    if (r < 0 || r >= x.dim(0)) throw DimensionError("gather_rows: index out of range");
  Tensor<T> out({static_cast<std::int64_t>(indices.size()), d});
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::int64_t c = 0; c < d; ++c)
      out.at(static_cast<std::int64_t>(i), c) = x.at(indices[i], c);
  if (wants_grad(tape, {x})) {
    finish(tape, "gather_rows", {x}, out, [x = x, out = out, indices = indices, d = d]() mutable {
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (std::int64_t c = 0; c < d; ++c)
          x.grad()[indices[i] * d + c] += out.grad()[static_cast<std::int64_t>(i) * d + c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, std::int64_t c0, std::int64_t c1, Tape<T>* tape) {
  if (x.rank() != 2) throw DimensionError("slice_cols: expected a 2-d tensor");
  if (c0 < 0 || c1 > x.dim(1) || c0 >= c1) throw DimensionError("slice_cols: bad range");
  const std::int64_t n = x.dim(0), d = x.dim(1), w = c1 - c0;
  Tensor<T> out({n, w});
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = 0; c < w; ++c) out.at(r, c) = x.at(r, c0 + c);
  if (wants_grad(tape, {x})) {
    finish(tape, "slice_cols", {x}, out, [x = x, out = out, c0 = c0, d = d, n = n, w = w]() mutable {
      for (std::int64_t r = 0; r < n; ++r)
        for (std::int64_t c = 0; c < w; ++c) x.grad()[r * d + c0 + c] += out.grad()[r * w + c];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts, Tape<T>* tape) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::int64_t n = parts[0].dim(0);
  std::int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != n) throw DimensionError("concat_cols: row count mismatch");
    total += p.dim(1);
  }
  Tensor<T> out({n, total});
  std::int64_t off = 0;
  for (const auto& p : parts) {
    const std::int64_t w = p.dim(1);
    for (std::int64_t r = 0; r < n; ++r)
      for (std::int64_t c = 0; c < w; ++c) out.at(r, off + c) = p.at(r, c);
    off += w;
  }
  bool any_grad = tape != nullptr;
  if (any_grad) {
    any_grad = false;
    for (const auto& p : parts) any_grad |= p.requires_grad();
  }
  if (any_grad) {
    finish(tape, "concat_cols", parts, out, [parts = parts, out = out, n = n, total = total]() mutable {
      std::int64_t off2 = 0;
      for (auto& p : parts) {
        const std::int64_t w = p.dim(1);
        if (p.requires_grad())
          for (std::int64_t r = 0; r < n; ++r)
            for (std::int64_t c = 0; c < w; ++c)
              p.grad()[r * w + c] += out.grad()[r * total + off2 + c];
        off2 += w;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x, Tape<T>* tape) {
  T acc{0};
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) acc += x.at(i);
  Tensor<T> out = Tensor<T>::scalar(acc);
  if (wants_grad(tape, {x})) {
    finish(tape, "sum", {x}, out, [x = x, out = out]() mutable {
      const T g = out.grad()[0];
      const std::int64_t m = x.numel();
      for (std::int64_t i = 0; i < m; ++i) x.grad()[i] += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, Tape<T>* tape) {
  return scale(sum(x, tape), static_cast<T>(1.0 / static_cast<double>(x.numel())), tape);
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;

#define S3L_INSTANTIATE_ELEMENTWISE(T)                                                       \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                      \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                      \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                      \
  template Tensor<T> scale(const Tensor<T>&, T, Tape<T>*);                                   \
  template Tensor<T> add_row(const Tensor<T>&, const Tensor<T>&, Tape<T>*);                  \
  template Tensor<T> transpose(const Tensor<T>&, Tape<T>*);                                  \
  template Tensor<T> slice_rows(const Tensor<T>&, std::int64_t, std::int64_t, Tape<T>*);     \
  template Tensor<T> gather_rows(const Tensor<T>&, const std::vector<std::int64_t>&, Tape<T>*); \
  template Tensor<T> slice_cols(const Tensor<T>&, std::int64_t, std::int64_t, Tape<T>*);     \
  template Tensor<T> concat_cols(const std::vector<Tensor<T>>&, Tape<T>*);                   \
  template Tensor<T> sum(const Tensor<T>&, Tape<T>*);                                        \
  template Tensor<T> mean(const Tensor<T>&, Tape<T>*);

S3L_INSTANTIATE_ELEMENTWISE(float)
S3L_INSTANTIATE_ELEMENTWISE(double)

}  // namespace s3l
