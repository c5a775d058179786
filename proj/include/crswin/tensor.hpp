#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "crswin/rng.hpp"

namespace crswin {

using real = double;
using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

// Thrown on any extent mismatch; the message names both shapes involved.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Dense n-dimensional value with an optional gradient buffer. Value-semantic
// handle to a shared node; ops executed on tensors record the computation
// graph as they run, and backward() walks it in reverse topological order.
//
// Data is immutable after the tensor is consumed by an op; only gradient
// buffers mutate afterwards. A graph and its tensors belong to one thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<real> data, bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, real stddev = 1.0, bool requires_grad = false);
  static Tensor trunc_normal(Shape shape, Rng& rng, real stddev, bool requires_grad = false);
  static Tensor scalar(real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t rank() const { return static_cast<std::int64_t>(shape().size()); }
  std::int64_t numel() const;
  std::int64_t extent(std::int64_t axis) const;

  std::span<const real> data() const;
  // Direct writes are only safe before the tensor enters a graph.
  std::span<real> mutable_data();

  real item() const;  // requires numel() == 1
  real at(const std::vector<std::int64_t>& index) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);

  bool has_grad() const;
  std::span<const real> grad() const;
  std::span<real> mutable_grad();
  void zero_grad();

  // Gradient as a fresh constant tensor (empty grad reads as zeros).
  Tensor grad_tensor() const;
  // Same data, no graph linkage, requires_grad off.
  Tensor detach() const;

  TensorImpl* impl() const { return impl_.get(); }
  TensorImplPtr impl_ptr() const { return impl_; }

  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

 private:
  TensorImplPtr impl_;
};

struct TensorImpl {
  Shape shape;
  std::vector<real> data;
  std::vector<real> grad;  // empty until first accumulation
  bool requires_grad = false;  // leaf flag
  bool needs_grad = false;     // requires_grad, or some input needs it
  const char* op = "leaf";
  std::vector<TensorImplPtr> inputs;
  // Reads this node's grad, accumulates into the inputs' grads.
  std::function<void(TensorImpl&)> backward_fn;

  void ensure_grad();
  bool is_leaf() const { return !backward_fn; }
};

// ---- graph ----

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
// calls; non-leaf gradients are scratch and reset on every call.
void backward(const Tensor& loss);
// Zeroes the gradients of every tensor in `params`.
void zero_grad(const std::vector<Tensor>& params);

// ---- elementwise / arithmetic ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& t, real v);
Tensor mul_scalar(const Tensor& t, real v);
Tensor gelu(const Tensor& t);
Tensor log(const Tensor& t);
Tensor clamp(const Tensor& t, real lo, real hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- contractions / normalization ----

// Batched contraction. Leading (batch) extents must match exactly, or one
// operand may be rank-2 and is then shared across the other's batches.
Tensor matmul(const Tensor& a, const Tensor& b);
// x: (..., C_in), weight: (C_in, C_out), bias: (C_out) or undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor softmax(const Tensor& t, std::int64_t axis);
// Normalizes over the last axis; gamma/beta extent must equal it.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps = 1e-5);

// ---- shape ops (bijections on elements) ----

Tensor reshape(const Tensor& t, Shape shape);
Tensor permute(const Tensor& t, const std::vector<std::int64_t>& axes);
Tensor slice(const Tensor& t, std::int64_t axis, std::int64_t start, std::int64_t len);
Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis);
// Right-aligned broadcast to `shape`, materialized. Backward sums over the
// broadcast axes; this is the explicit substitute for implicit broadcasting.
Tensor expand(const Tensor& t, Shape shape);
// Toroidal roll; offsets.size() == rank().
Tensor roll(const Tensor& t, const std::vector<std::int64_t>& offsets);
Tensor pad(const Tensor& t, const std::vector<std::int64_t>& lo, const std::vector<std::int64_t>& hi);
Tensor crop(const Tensor& t, const std::vector<std::int64_t>& lo, const Shape& extents);

// table: (rows, cols); returns (indices.size(), cols). Backward scatter-adds
// into the gathered rows, so repeated indices accumulate.
Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& indices);

// ---- reductions ----

Tensor sum_all(const Tensor& t);   // shape {1}
Tensor mean_all(const Tensor& t);  // shape {1}
Tensor sum_axis(const Tensor& t, std::int64_t axis);

// ---- convolution ----

// grid: (D, H, W, C), weight: (C, k, k, k) with odd k; one kernel per
// channel, zero padding, stride 1.
Tensor depthwise_conv3d(const Tensor& grid, const Tensor& weight);

}  // namespace crswin
