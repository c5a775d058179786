#include "crswin/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>
#include <unordered_set>

namespace crswin {

namespace {

Shape strides_of(const Shape& s) {
  Shape st(s.size());
  std::int64_t acc = 1;
  for (std::int64_t d = static_cast<std::int64_t>(s.size()) - 1; d >= 0; --d) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

TensorImplPtr alloc_impl(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<std::size_t>(shape_numel(impl->shape)), 0.0);
  return impl;
}

// Creates the output node for an op. Graph linkage (inputs + backward rule)
// is only recorded when some input needs a gradient.
Tensor make_node(Shape shape, const char* op, std::vector<Tensor> inputs,
                 std::function<void(TensorImpl&)> backward_fn) {
  auto impl = alloc_impl(std::move(shape));
  impl->op = op;
  bool needs = false;
  for (const auto& in : inputs) needs = needs || in.impl()->needs_grad;
  impl->needs_grad = needs;
  if (needs) {
    impl->inputs.reserve(inputs.size());
    for (auto& in : inputs) impl->inputs.push_back(in.impl_ptr());
    impl->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(impl));
}

real* grad_of(TensorImpl& impl) {
  impl.ensure_grad();
  return impl.grad.data();
}

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << ")";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

void TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0);
}

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto impl = alloc_impl(std::move(shape));
  impl->requires_grad = requires_grad;
  impl->needs_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.impl()->data.begin(), t.impl()->data.end(), value);
  return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<real> data, bool requires_grad) {
  require(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
          "from_data: " + shape_str(shape) + " does not hold " + std::to_string(data.size()) +
              " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  impl->needs_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, real stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl()->data) v = rng.normal(0.0, stddev);
  return t;
}

Tensor Tensor::trunc_normal(Shape shape, Rng& rng, real stddev, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (auto& v : t.impl()->data) v = rng.truncated_normal(stddev);
  return t;
}

Tensor Tensor::scalar(real value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::int64_t Tensor::extent(std::int64_t axis) const {
  const auto r = rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, "extent: axis out of range for " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

std::span<const real> Tensor::data() const { return impl_->data; }
std::span<real> Tensor::mutable_data() { return impl_->data; }

real Tensor::item() const {
  require(numel() == 1, "item: tensor " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

real Tensor::at(const std::vector<std::int64_t>& index) const {
  const auto st = strides_of(impl_->shape);
  require(index.size() == st.size(), "at: index rank mismatch for " + shape_str(shape()));
  std::int64_t flat = 0;
  for (std::size_t d = 0; d < index.size(); ++d) flat += index[d] * st[d];
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

void Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  impl_->needs_grad = v || !impl_->is_leaf();
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }

std::span<const real> Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

std::span<real> Tensor::mutable_grad() {
  impl_->ensure_grad();
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::grad_tensor() const {
  impl_->ensure_grad();
  return from_data(impl_->shape, impl_->grad, false);
}

Tensor Tensor::detach() const {
  return from_data(impl_->shape, impl_->data, false);
}

// ---- graph ----

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a defined scalar tensor, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("null")));
  }
  // Iterative post-order DFS over the needs-grad subgraph.
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> seen;
  struct Frame {
    TensorImpl* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  if (loss.impl()->needs_grad) {
    stack.push_back({loss.impl(), 0});
    seen.insert(loss.impl());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->inputs.size()) {
      TensorImpl* child = f.node->inputs[f.next_child++].get();
      if (child->needs_grad && !seen.count(child)) {
        seen.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      topo.push_back(f.node);
      stack.pop_back();
    }
  }
  // Non-leaf grads are scratch for this sweep; leaf grads persist so
  // repeated sweeps accumulate.
  for (auto* node : topo) {
    if (!node->is_leaf()) {
      node->grad.assign(node->data.size(), 0.0);
    }
  }
  loss.impl()->ensure_grad();
  loss.impl()->grad[0] += 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backward_fn) node->backward_fn(*node);
  }
}

void zero_grad(const std::vector<Tensor>& params) {
  for (auto p : params) p.zero_grad();  // handle copy, same storage
}

// ---- elementwise ----

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* op, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, op);
  Tensor out = make_node(a.shape(), op, {a, b}, [bwd](TensorImpl& self) {
    TensorImpl& ia = *self.inputs[0];
    TensorImpl& ib = *self.inputs[1];
    const real* g = self.grad.data();
    real* ga = ia.needs_grad ? grad_of(ia) : nullptr;
    real* gb = ib.needs_grad ? grad_of(ib) : nullptr;
    const std::size_t n = self.data.size();
    for (std::size_t i = 0; i < n; ++i) {
      bwd(g[i], ia.data[i], ib.data[i], ga ? ga + i : nullptr, gb ? gb + i : nullptr);
    }
  });
  const std::size_t n = out.impl()->data.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.impl()->data[i] = fwd(a.impl()->data[i], b.impl()->data[i]);
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "add", [](real x, real y) { return x + y; },
      [](real g, real, real, real* ga, real* gb) {
        if (ga) *ga += g;
        if (gb) *gb += g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "sub", [](real x, real y) { return x - y; },
      [](real g, real, real, real* ga, real* gb) {
        if (ga) *ga += g;
        if (gb) *gb -= g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "mul", [](real x, real y) { return x * y; },
      [](real g, real x, real y, real* ga, real* gb) {
        if (ga) *ga += g * y;
        if (gb) *gb += g * x;
      });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_elementwise(
      a, b, "div", [](real x, real y) { return x / y; },
      [](real g, real x, real y, real* ga, real* gb) {
        if (ga) *ga += g / y;
        if (gb) *gb -= g * x / (y * y);
      });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const Tensor& t, const char* op, Fwd fwd, Bwd bwd) {
  Tensor out = make_node(t.shape(), op, {t}, [bwd](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    const real* g = self.grad.data();
    real* gi = grad_of(in);
    const std::size_t n = self.data.size();
    for (std::size_t i = 0; i < n; ++i) gi[i] += g[i] * bwd(in.data[i]);
  });
  const std::size_t n = out.impl()->data.size();
  for (std::size_t i = 0; i < n; ++i) out.impl()->data[i] = fwd(t.impl()->data[i]);
  return out;
}

}  // namespace

Tensor add_scalar(const Tensor& t, real v) {
  return unary_elementwise(
      t, "add_scalar", [v](real x) { return x + v; }, [](real) { return 1.0; });
}

Tensor mul_scalar(const Tensor& t, real v) {
  return unary_elementwise(
      t, "mul_scalar", [v](real x) { return x * v; }, [v](real) { return v; });
}

Tensor gelu(const Tensor& t) {
  // Exact form x * Phi(x); derivative Phi(x) + x * phi(x).
  constexpr real inv_sqrt2 = std::numbers::sqrt2 / 2.0;
  constexpr real inv_sqrt2pi = 0.3989422804014327;
  return unary_elementwise(
      t, "gelu",
      [](real x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [](real x) {
        const real cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const real pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
        return cdf + x * pdf;
      });
}

Tensor log(const Tensor& t) {
  return unary_elementwise(
      t, "log", [](real x) { return std::log(x); }, [](real x) { return 1.0 / x; });
}

Tensor clamp(const Tensor& t, real lo, real hi) {
  return unary_elementwise(
      t, "clamp",
      [lo, hi](real x) { return std::min(std::max(x, lo), hi); },
      [lo, hi](real x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// ---- matmul / linear ----

namespace {

struct MatmulDims {
  std::int64_t batch;  // number of matrix products
  std::int64_t m, k, n;
  bool a_batched, b_batched;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  require(sa.size() >= 2 && sb.size() >= 2,
          "matmul: operands must be rank >= 2, got " + shape_str(sa) + " and " + shape_str(sb));
  MatmulDims d;
  d.m = sa[sa.size() - 2];
  d.k = sa[sa.size() - 1];
  const std::int64_t bk = sb[sb.size() - 2];
  d.n = sb[sb.size() - 1];
  require(d.k == bk,
          "matmul: inner extents differ, " + shape_str(sa) + " x " + shape_str(sb));
  Shape ab(sa.begin(), sa.end() - 2);
  Shape bb(sb.begin(), sb.end() - 2);
  d.a_batched = !ab.empty();
  d.b_batched = !bb.empty();
  if (d.a_batched && d.b_batched) {
    require(ab == bb, "matmul: batch extents differ, " + shape_str(sa) + " x " + shape_str(sb));
  }
  d.batch = d.a_batched ? shape_numel(ab) : (d.b_batched ? shape_numel(bb) : 1);
  return d;
}

void matmul_kernel(const real* a, const real* b, real* c, std::int64_t m, std::int64_t k,
                   std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    real* crow = c + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const real av = a[i * k + p];
      if (av == 0.0) continue;
      const real* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  const MatmulDims d = matmul_dims(a, b);
  Shape out_shape;
  if (d.a_batched) {
    out_shape.assign(a.shape().begin(), a.shape().end() - 2);
  } else if (d.b_batched) {
    out_shape.assign(b.shape().begin(), b.shape().end() - 2);
  }
  out_shape.push_back(d.m);
  out_shape.push_back(d.n);

  Tensor out = make_node(std::move(out_shape), "matmul", {a, b}, [d](TensorImpl& self) {
    TensorImpl& ia = *self.inputs[0];
    TensorImpl& ib = *self.inputs[1];
    const real* g = self.grad.data();
    real* ga = ia.needs_grad ? grad_of(ia) : nullptr;
    real* gb = ib.needs_grad ? grad_of(ib) : nullptr;
    const std::int64_t asz = d.m * d.k, bsz = d.k * d.n, csz = d.m * d.n;
    for (std::int64_t t = 0; t < d.batch; ++t) {
      const real* at = ia.data.data() + (d.a_batched ? t * asz : 0);
      const real* bt = ib.data.data() + (d.b_batched ? t * bsz : 0);
      const real* gt = g + t * csz;
      if (ga) {
        real* gat = ga + (d.a_batched ? t * asz : 0);
        for (std::int64_t i = 0; i < d.m; ++i) {
          for (std::int64_t p = 0; p < d.k; ++p) {
            real acc = 0.0;
            const real* grow = gt + i * d.n;
            const real* brow = bt + p * d.n;
            for (std::int64_t j = 0; j < d.n; ++j) acc += grow[j] * brow[j];
            gat[i * d.k + p] += acc;
          }
        }
      }
      if (gb) {
        real* gbt = gb + (d.b_batched ? t * bsz : 0);
        for (std::int64_t i = 0; i < d.m; ++i) {
          const real* arow = at + i * d.k;
          const real* grow = gt + i * d.n;
          for (std::int64_t p = 0; p < d.k; ++p) {
            const real av = arow[p];
            if (av == 0.0) continue;
            real* gbrow = gbt + p * d.n;
            for (std::int64_t j = 0; j < d.n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    }
  });

  const std::int64_t asz = d.m * d.k, bsz = d.k * d.n, csz = d.m * d.n;
  for (std::int64_t t = 0; t < d.batch; ++t) {
    matmul_kernel(a.impl()->data.data() + (d.a_batched ? t * asz : 0),
                  b.impl()->data.data() + (d.b_batched ? t * bsz : 0),
                  out.impl()->data.data() + t * csz, d.m, d.k, d.n);
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  const auto& sx = x.shape();
  const auto& sw = weight.shape();
  require(sw.size() == 2, "linear: weight must be rank 2, got " + shape_str(sw));
  require(!sx.empty() && sx.back() == sw[0],
          "linear: input " + shape_str(sx) + " does not match weight " + shape_str(sw));
  const std::int64_t cin = sw[0], cout = sw[1];
  const std::int64_t rows = x.numel() / cin;
  if (bias.defined()) {
    require(bias.shape() == Shape{cout},
            "linear: bias " + shape_str(bias.shape()) + " does not match weight " + shape_str(sw));
  }
  Shape out_shape(sx.begin(), sx.end() - 1);
  out_shape.push_back(cout);

  std::vector<Tensor> inputs = {x, weight};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();

  Tensor out = make_node(std::move(out_shape), "linear", std::move(inputs),
                         [rows, cin, cout, has_bias](TensorImpl& self) {
    TensorImpl& ix = *self.inputs[0];
    TensorImpl& iw = *self.inputs[1];
    const real* g = self.grad.data();
    if (ix.needs_grad) {
      real* gx = grad_of(ix);
      for (std::int64_t i = 0; i < rows; ++i) {
        const real* grow = g + i * cout;
        real* gxrow = gx + i * cin;
        for (std::int64_t p = 0; p < cin; ++p) {
          real acc = 0.0;
          const real* wrow = iw.data.data() + p * cout;
          for (std::int64_t j = 0; j < cout; ++j) acc += grow[j] * wrow[j];
          gxrow[p] += acc;
        }
      }
    }
    if (iw.needs_grad) {
      real* gw = grad_of(iw);
      for (std::int64_t i = 0; i < rows; ++i) {
        const real* xrow = ix.data.data() + i * cin;
        const real* grow = g + i * cout;
        for (std::int64_t p = 0; p < cin; ++p) {
          const real xv = xrow[p];
          if (xv == 0.0) continue;
          real* gwrow = gw + p * cout;
          for (std::int64_t j = 0; j < cout; ++j) gwrow[j] += xv * grow[j];
        }
      }
    }
    if (has_bias) {
      TensorImpl& ibias = *self.inputs[2];
      if (ibias.needs_grad) {
        real* gbv = grad_of(ibias);
        for (std::int64_t i = 0; i < rows; ++i) {
          const real* grow = g + i * cout;
          for (std::int64_t j = 0; j < cout; ++j) gbv[j] += grow[j];
        }
      }
    }
  });

  real* o = out.impl()->data.data();
  matmul_kernel(x.impl()->data.data(), weight.impl()->data.data(), o, rows, cin, cout);
  if (has_bias) {
    const real* bv = bias.impl()->data.data();
    for (std::int64_t i = 0; i < rows; ++i) {
      real* orow = o + i * cout;
      for (std::int64_t j = 0; j < cout; ++j) orow[j] += bv[j];
    }
  }
  return out;
}

// ---- softmax / layer_norm ----

namespace {

struct AxisSplit {
  std::int64_t outer, n, inner;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit sp{1, s[static_cast<std::size_t>(axis)], 1};
  for (std::int64_t d = 0; d < axis; ++d) sp.outer *= s[static_cast<std::size_t>(d)];
  for (std::int64_t d = axis + 1; d < static_cast<std::int64_t>(s.size()); ++d) {
    sp.inner *= s[static_cast<std::size_t>(d)];
  }
  return sp;
}

std::int64_t normalize_axis(const Tensor& t, std::int64_t axis, const char* op) {
  const auto r = t.rank();
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r,
          std::string(op) + ": axis out of range for " + shape_str(t.shape()));
  return axis;
}

}  // namespace

Tensor softmax(const Tensor& t, std::int64_t axis) {
  axis = normalize_axis(t, axis, "softmax");
  const AxisSplit sp = split_at(t.shape(), axis);
  Tensor out = make_node(t.shape(), "softmax", {t}, [sp](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    const real* y = self.data.data();
    const real* g = self.grad.data();
    real* gi = grad_of(in);
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t c = 0; c < sp.inner; ++c) {
        const std::int64_t base = o * sp.n * sp.inner + c;
        real dot = 0.0;
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t ix = base + i * sp.inner;
          dot += g[ix] * y[ix];
        }
        for (std::int64_t i = 0; i < sp.n; ++i) {
          const std::int64_t ix = base + i * sp.inner;
          gi[ix] += y[ix] * (g[ix] - dot);
        }
      }
    }
  });
  const real* x = t.impl()->data.data();
  real* y = out.impl()->data.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    for (std::int64_t c = 0; c < sp.inner; ++c) {
      const std::int64_t base = o * sp.n * sp.inner + c;
      real mx = x[base];
      for (std::int64_t i = 1; i < sp.n; ++i) mx = std::max(mx, x[base + i * sp.inner]);
      real sum = 0.0;
      for (std::int64_t i = 0; i < sp.n; ++i) {
        const real e = std::exp(x[base + i * sp.inner] - mx);
        y[base + i * sp.inner] = e;
        sum += e;
      }
      const real inv = 1.0 / sum;
      for (std::int64_t i = 0; i < sp.n; ++i) y[base + i * sp.inner] *= inv;
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  const auto& s = x.shape();
  require(!s.empty(), "layer_norm: input must have rank >= 1");
  const std::int64_t c = s.back();
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
          "layer_norm: affine shapes " + shape_str(gamma.shape()) + "/" +
              shape_str(beta.shape()) + " do not match last axis of " + shape_str(s));
  const std::int64_t rows = x.numel() / c;

  Tensor out = make_node(s, "layer_norm", {x, gamma, beta}, [rows, c, eps](TensorImpl& self) {
    TensorImpl& ix = *self.inputs[0];
    TensorImpl& ig = *self.inputs[1];
    TensorImpl& ib = *self.inputs[2];
    const real* g = self.grad.data();
    real* gx = ix.needs_grad ? grad_of(ix) : nullptr;
    real* gg = ig.needs_grad ? grad_of(ig) : nullptr;
    real* gb = ib.needs_grad ? grad_of(ib) : nullptr;
    std::vector<real> xhat(static_cast<std::size_t>(c));
    for (std::int64_t r = 0; r < rows; ++r) {
      const real* xrow = ix.data.data() + r * c;
      const real* grow = g + r * c;
      real mean = 0.0;
      for (std::int64_t j = 0; j < c; ++j) mean += xrow[j];
      mean /= static_cast<real>(c);
      real var = 0.0;
      for (std::int64_t j = 0; j < c; ++j) {
        const real d = xrow[j] - mean;
        var += d * d;
      }
      var /= static_cast<real>(c);
      const real inv_std = 1.0 / std::sqrt(var + eps);
      for (std::int64_t j = 0; j < c; ++j) xhat[j] = (xrow[j] - mean) * inv_std;
      if (gg || gb) {
        for (std::int64_t j = 0; j < c; ++j) {
          if (gg) gg[j] += grow[j] * xhat[j];
          if (gb) gb[j] += grow[j];
        }
      }
      if (gx) {
        // d xhat = gamma * g; dx via the standard LN backward.
        real sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (std::int64_t j = 0; j < c; ++j) {
          const real dy = grow[j] * ig.data[j];
          sum_dy += dy;
          sum_dy_xhat += dy * xhat[j];
        }
        const real inv_c = 1.0 / static_cast<real>(c);
        real* gxrow = gx + r * c;
        for (std::int64_t j = 0; j < c; ++j) {
          const real dy = grow[j] * ig.data[j];
          gxrow[j] += (dy - sum_dy * inv_c - xhat[j] * sum_dy_xhat * inv_c) * inv_std;
        }
      }
    }
  });

  const real* xin = x.impl()->data.data();
  const real* gv = gamma.impl()->data.data();
  const real* bv = beta.impl()->data.data();
  real* o = out.impl()->data.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const real* xrow = xin + r * c;
    real* orow = o + r * c;
    real mean = 0.0;
    for (std::int64_t j = 0; j < c; ++j) mean += xrow[j];
    mean /= static_cast<real>(c);
    real var = 0.0;
    for (std::int64_t j = 0; j < c; ++j) {
      const real d = xrow[j] - mean;
      var += d * d;
    }
    var /= static_cast<real>(c);
    const real inv_std = 1.0 / std::sqrt(var + eps);
    for (std::int64_t j = 0; j < c; ++j) orow[j] = (xrow[j] - mean) * inv_std * gv[j] + bv[j];
  }
  return out;
}

// ---- shape ops ----

Tensor reshape(const Tensor& t, Shape shape) {
  require(shape_numel(shape) == t.numel(),
          "reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
  Tensor out = make_node(shape, "reshape", {t}, [](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real* g = self.grad.data();
    for (std::size_t i = 0; i < self.data.size(); ++i) gi[i] += g[i];
  });
  out.impl()->data = t.impl()->data;
  return out;
}

Tensor permute(const Tensor& t, const std::vector<std::int64_t>& axes) {
  const auto r = t.rank();
  require(static_cast<std::int64_t>(axes.size()) == r,
          "permute: axes count " + std::to_string(axes.size()) + " != rank of " +
              shape_str(t.shape()));
  std::vector<bool> used(static_cast<std::size_t>(r), false);
  for (auto a : axes) {
    require(a >= 0 && a < r && !used[static_cast<std::size_t>(a)],
            "permute: invalid axes for " + shape_str(t.shape()));
    used[static_cast<std::size_t>(a)] = true;
  }
  const Shape& in_shape = t.shape();
  Shape out_shape(axes.size());
  for (std::size_t d = 0; d < axes.size(); ++d) {
    out_shape[d] = in_shape[static_cast<std::size_t>(axes[d])];
  }
  const Shape in_strides = strides_of(in_shape);
  Shape walk(axes.size());
  for (std::size_t d = 0; d < axes.size(); ++d) {
    walk[d] = in_strides[static_cast<std::size_t>(axes[d])];
  }

  auto scatter = [](const real* src, real* dst, const Shape& shape, const Shape& stride,
                    bool accumulate) {
    // Walks dst (or src) in permuted stride order while reading (writing)
    // linearly.
    const std::int64_t n = shape_numel(shape);
    const auto r2 = shape.size();
    std::vector<std::int64_t> idx(r2, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      if (accumulate) {
        dst[off] += src[i];
      } else {
        dst[i] = src[off];
      }
      for (std::int64_t d = static_cast<std::int64_t>(r2) - 1; d >= 0; --d) {
        idx[d]++;
        off += stride[static_cast<std::size_t>(d)];
        if (idx[d] < shape[static_cast<std::size_t>(d)]) break;
        idx[d] = 0;
        off -= shape[static_cast<std::size_t>(d)] * stride[static_cast<std::size_t>(d)];
      }
    }
  };

  Tensor out = make_node(out_shape, "permute", {t},
                         [out_shape, walk, scatter](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    scatter(self.grad.data(), grad_of(in), out_shape, walk, /*accumulate=*/true);
  });
  scatter(t.impl()->data.data(), out.impl()->data.data(), out_shape, walk, /*accumulate=*/false);
  return out;
}

Tensor slice(const Tensor& t, std::int64_t axis, std::int64_t start, std::int64_t len) {
  axis = normalize_axis(t, axis, "slice");
  const auto& s = t.shape();
  require(start >= 0 && len >= 1 && start + len <= s[static_cast<std::size_t>(axis)],
          "slice: range [" + std::to_string(start) + "," + std::to_string(start + len) +
              ") invalid for axis " + std::to_string(axis) + " of " + shape_str(s));
  Shape out_shape = s;
  out_shape[static_cast<std::size_t>(axis)] = len;
  const AxisSplit sp = split_at(s, axis);

  Tensor out = make_node(out_shape, "slice", {t}, [sp, start, len](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real* g = self.grad.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      const real* gsrc = g + o * len * sp.inner;
      real* gdst = gi + (o * sp.n + start) * sp.inner;
      for (std::int64_t i = 0; i < len * sp.inner; ++i) gdst[i] += gsrc[i];
    }
  });
  const real* x = t.impl()->data.data();
  real* y = out.impl()->data.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    std::memcpy(y + o * len * sp.inner, x + (o * sp.n + start) * sp.inner,
                static_cast<std::size_t>(len * sp.inner) * sizeof(real));
  }
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  require(!parts.empty(), "concat: no inputs");
  axis = normalize_axis(parts[0], axis, "concat");
  const Shape& s0 = parts[0].shape();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    const auto& sp = p.shape();
    require(sp.size() == s0.size(), "concat: rank mismatch " + shape_str(sp) + " vs " +
                                        shape_str(s0));
    for (std::size_t d = 0; d < s0.size(); ++d) {
      if (static_cast<std::int64_t>(d) == axis) continue;
      require(sp[d] == s0[d],
              "concat: shape mismatch " + shape_str(sp) + " vs " + shape_str(s0));
    }
    total += sp[static_cast<std::size_t>(axis)];
  }
  Shape out_shape = s0;
  out_shape[static_cast<std::size_t>(axis)] = total;
  const AxisSplit sp_out = split_at(out_shape, axis);

  std::vector<std::int64_t> extents;
  for (const auto& p : parts) extents.push_back(p.extent(axis));

  std::vector<Tensor> inputs = parts;
  Tensor out = make_node(out_shape, "concat", std::move(inputs),
                         [sp_out, extents](TensorImpl& self) {
    const real* g = self.grad.data();
    std::int64_t offset = 0;
    for (std::size_t pi = 0; pi < self.inputs.size(); ++pi) {
      TensorImpl& in = *self.inputs[pi];
      const std::int64_t e = extents[pi];
      if (in.needs_grad) {
        real* gi = grad_of(in);
        for (std::int64_t o = 0; o < sp_out.outer; ++o) {
          const real* gsrc = g + (o * sp_out.n + offset) * sp_out.inner;
          real* gdst = gi + o * e * sp_out.inner;
          for (std::int64_t i = 0; i < e * sp_out.inner; ++i) gdst[i] += gsrc[i];
        }
      }
      offset += e;
    }
  });

  real* y = out.impl()->data.data();
  std::int64_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const real* x = parts[pi].impl()->data.data();
    const std::int64_t e = extents[pi];
    for (std::int64_t o = 0; o < sp_out.outer; ++o) {
      std::memcpy(y + (o * sp_out.n + offset) * sp_out.inner, x + o * e * sp_out.inner,
                  static_cast<std::size_t>(e * sp_out.inner) * sizeof(real));
    }
    offset += e;
  }
  return out;
}

Tensor expand(const Tensor& t, Shape shape) {
  const auto& in_shape = t.shape();
  require(in_shape.size() <= shape.size(),
          "expand: cannot expand " + shape_str(in_shape) + " to " + shape_str(shape));
  const std::size_t lead = shape.size() - in_shape.size();
  // Per output axis: input stride, or 0 where broadcast.
  const Shape in_strides = strides_of(in_shape);
  Shape walk(shape.size(), 0);
  for (std::size_t d = 0; d < shape.size(); ++d) {
    if (d < lead) continue;
    const std::int64_t ie = in_shape[d - lead];
    if (ie == shape[d]) {
      walk[d] = in_strides[d - lead];
    } else {
      require(ie == 1, "expand: axis " + std::to_string(d) + " of " + shape_str(in_shape) +
                           " incompatible with " + shape_str(shape));
    }
  }
  const Shape out_shape = shape;

  Tensor out = make_node(shape, "expand", {t}, [out_shape, walk](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real* g = self.grad.data();
    const std::int64_t n = shape_numel(out_shape);
    const auto r2 = out_shape.size();
    std::vector<std::int64_t> idx(r2, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      gi[off] += g[i];
      for (std::int64_t d = static_cast<std::int64_t>(r2) - 1; d >= 0; --d) {
        idx[d]++;
        off += walk[static_cast<std::size_t>(d)];
        if (idx[d] < out_shape[static_cast<std::size_t>(d)]) break;
        idx[d] = 0;
        off -= out_shape[static_cast<std::size_t>(d)] * walk[static_cast<std::size_t>(d)];
      }
    }
  });

  const real* x = t.impl()->data.data();
  real* y = out.impl()->data.data();
  const std::int64_t n = shape_numel(out_shape);
  const auto r2 = out_shape.size();
  std::vector<std::int64_t> idx(r2, 0);
  std::int64_t off = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    y[i] = x[off];
    for (std::int64_t d = static_cast<std::int64_t>(r2) - 1; d >= 0; --d) {
      idx[d]++;
      off += walk[static_cast<std::size_t>(d)];
      if (idx[d] < out_shape[static_cast<std::size_t>(d)]) break;
      idx[d] = 0;
      off -= out_shape[static_cast<std::size_t>(d)] * walk[static_cast<std::size_t>(d)];
    }
  }
  return out;
}

Tensor roll(const Tensor& t, const std::vector<std::int64_t>& offsets) {
  const auto r = t.rank();
  require(static_cast<std::int64_t>(offsets.size()) == r,
          "roll: offsets count " + std::to_string(offsets.size()) + " != rank of " +
              shape_str(t.shape()));
  const Shape& s = t.shape();
  // Per axis, source index for each destination index.
  std::vector<std::vector<std::int64_t>> src_of(static_cast<std::size_t>(r));
  for (std::int64_t d = 0; d < r; ++d) {
    const std::int64_t e = s[static_cast<std::size_t>(d)];
    std::int64_t off = ((offsets[static_cast<std::size_t>(d)] % e) + e) % e;
    auto& m = src_of[static_cast<std::size_t>(d)];
    m.resize(static_cast<std::size_t>(e));
    for (std::int64_t i = 0; i < e; ++i) m[static_cast<std::size_t>(i)] = (i - off + e) % e;
  }
  const Shape strides = strides_of(s);

  auto apply = [s, strides, src_of](const real* src, real* dst, bool accumulate) {
    const std::int64_t n = shape_numel(s);
    const auto r2 = s.size();
    std::vector<std::int64_t> idx(r2, 0);
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t off = 0;
      for (std::size_t d = 0; d < r2; ++d) {
        off += src_of[d][static_cast<std::size_t>(idx[d])] * strides[d];
      }
      if (accumulate) {
        dst[off] += src[i];  // dst indexed by source: inverse roll
      } else {
        dst[i] = src[off];
      }
      for (std::int64_t d = static_cast<std::int64_t>(r2) - 1; d >= 0; --d) {
        idx[d]++;
        if (idx[d] < s[static_cast<std::size_t>(d)]) break;
        idx[d] = 0;
      }
    }
  };

  Tensor out = make_node(s, "roll", {t}, [apply](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    apply(self.grad.data(), grad_of(in), /*accumulate=*/true);
  });
  apply(t.impl()->data.data(), out.impl()->data.data(), /*accumulate=*/false);
  return out;
}

Tensor pad(const Tensor& t, const std::vector<std::int64_t>& lo,
           const std::vector<std::int64_t>& hi) {
  const auto r = t.rank();
  require(static_cast<std::int64_t>(lo.size()) == r && static_cast<std::int64_t>(hi.size()) == r,
          "pad: bounds count mismatch for " + shape_str(t.shape()));
  const Shape& s = t.shape();
  Shape out_shape(s.size());
  for (std::size_t d = 0; d < s.size(); ++d) {
    require(lo[d] >= 0 && hi[d] >= 0, "pad: negative padding for " + shape_str(s));
    out_shape[d] = s[d] + lo[d] + hi[d];
  }
  const Shape out_strides = strides_of(out_shape);
  std::int64_t base = 0;
  for (std::size_t d = 0; d < s.size(); ++d) base += lo[d] * out_strides[d];

  auto copy_region = [s, out_strides, base](const real* src, real* dst, bool accumulate) {
    // Iterates the input block; inner axis is contiguous in both.
    const std::int64_t n = shape_numel(s);
    const auto r2 = s.size();
    std::vector<std::int64_t> idx(r2, 0);
    std::int64_t off = base;
    for (std::int64_t i = 0; i < n; ++i) {
      if (accumulate) {
        dst[i] += src[off];
      } else {
        dst[off] = src[i];
      }
      for (std::int64_t d = static_cast<std::int64_t>(r2) - 1; d >= 0; --d) {
        idx[d]++;
        off += out_strides[d];
        if (idx[d] < s[static_cast<std::size_t>(d)]) break;
        idx[d] = 0;
        off -= s[static_cast<std::size_t>(d)] * out_strides[d];
      }
    }
  };

  Tensor out = make_node(out_shape, "pad", {t}, [copy_region](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    copy_region(self.grad.data(), grad_of(in), /*accumulate=*/true);
  });
  copy_region(t.impl()->data.data(), out.impl()->data.data(), /*accumulate=*/false);
  return out;
}

Tensor crop(const Tensor& t, const std::vector<std::int64_t>& lo, const Shape& extents) {
  const auto r = t.rank();
  require(static_cast<std::int64_t>(lo.size()) == r &&
              static_cast<std::int64_t>(extents.size()) == r,
          "crop: bounds count mismatch for " + shape_str(t.shape()));
  const Shape& s = t.shape();
  for (std::size_t d = 0; d < s.size(); ++d) {
    require(lo[d] >= 0 && extents[d] >= 1 && lo[d] + extents[d] <= s[d],
            "crop: region invalid for " + shape_str(s) + " at axis " + std::to_string(d));
  }
  const Shape in_strides = strides_of(s);
  std::int64_t base = 0;
  for (std::size_t d = 0; d < s.size(); ++d) base += lo[d] * in_strides[d];

  auto copy_region = [extents, in_strides, base](const real* src, real* dst, bool accumulate) {
    const std::int64_t n = shape_numel(extents);
    const auto r2 = extents.size();
    std::vector<std::int64_t> idx(r2, 0);
    std::int64_t off = base;
    for (std::int64_t i = 0; i < n; ++i) {
      if (accumulate) {
        dst[off] += src[i];
      } else {
        dst[i] = src[off];
      }
      for (std::int64_t d = static_cast<std::int64_t>(r2) - 1; d >= 0; --d) {
        idx[d]++;
        off += in_strides[d];
        if (idx[d] < extents[static_cast<std::size_t>(d)]) break;
        idx[d] = 0;
        off -= extents[static_cast<std::size_t>(d)] * in_strides[d];
      }
    }
  };

  Tensor out = make_node(extents, "crop", {t}, [copy_region](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    copy_region(self.grad.data(), grad_of(in), /*accumulate=*/true);
  });
  copy_region(t.impl()->data.data(), out.impl()->data.data(), /*accumulate=*/false);
  return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<std::int64_t>& indices) {
  const auto& s = table.shape();
  require(s.size() == 2, "gather_rows: table must be rank-2, got " + shape_str(s));
  const std::int64_t rows = s[0];
  const std::int64_t cols = s[1];
  for (std::int64_t idx : indices) {
    require(idx >= 0 && idx < rows,
            "gather_rows: index " + std::to_string(idx) + " out of range for " + shape_str(s));
  }
  const std::int64_t n = static_cast<std::int64_t>(indices.size());
  require(n >= 1, "gather_rows: empty index list");

  Tensor out = make_node({n, cols}, "gather_rows", {table}, [indices, cols](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real* g = self.grad.data();
    for (std::size_t i = 0; i < indices.size(); ++i) {
      real* dst = gi + indices[i] * cols;
      const real* src = g + static_cast<std::int64_t>(i) * cols;
      for (std::int64_t c = 0; c < cols; ++c) dst[c] += src[c];
    }
  });
  const real* x = table.impl()->data.data();
  real* y = out.impl()->data.data();
  for (std::int64_t i = 0; i < n; ++i) {
    const real* src = x + indices[static_cast<std::size_t>(i)] * cols;
    std::copy(src, src + cols, y + i * cols);
  }
  return out;
}

// ---- reductions ----

Tensor sum_all(const Tensor& t) {
  Tensor out = make_node({1}, "sum_all", {t}, [](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real g = self.grad[0];
    for (std::size_t i = 0; i < in.data.size(); ++i) gi[i] += g;
  });
  real acc = 0.0;
  for (real v : t.impl()->data) acc += v;
  out.impl()->data[0] = acc;
  return out;
}

Tensor mean_all(const Tensor& t) {
  const real inv = 1.0 / static_cast<real>(t.numel());
  Tensor out = make_node({1}, "mean_all", {t}, [inv](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real g = self.grad[0] * inv;
    for (std::size_t i = 0; i < in.data.size(); ++i) gi[i] += g;
  });
  real acc = 0.0;
  for (real v : t.impl()->data) acc += v;
  out.impl()->data[0] = acc * inv;
  return out;
}

Tensor sum_axis(const Tensor& t, std::int64_t axis) {
  axis = normalize_axis(t, axis, "sum_axis");
  const auto& s = t.shape();
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape;
  for (std::size_t d = 0; d < s.size(); ++d) {
    if (static_cast<std::int64_t>(d) != axis) out_shape.push_back(s[d]);
  }
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor out = make_node(out_shape, "sum_axis", {t}, [sp](TensorImpl& self) {
    TensorImpl& in = *self.inputs[0];
    if (!in.needs_grad) return;
    real* gi = grad_of(in);
    const real* g = self.grad.data();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t i = 0; i < sp.n; ++i) {
        const real* gsrc = g + o * sp.inner;
        real* gdst = gi + (o * sp.n + i) * sp.inner;
        for (std::int64_t c = 0; c < sp.inner; ++c) gdst[c] += gsrc[c];
      }
    }
  });
  const real* x = t.impl()->data.data();
  real* y = out.impl()->data.data();
  for (std::int64_t o = 0; o < sp.outer; ++o) {
    real* yrow = y + o * sp.inner;
    for (std::int64_t i = 0; i < sp.n; ++i) {
      const real* xrow = x + (o * sp.n + i) * sp.inner;
      for (std::int64_t c = 0; c < sp.inner; ++c) yrow[c] += xrow[c];
    }
  }
  return out;
}

// ---- convolution ----

Tensor depthwise_conv3d(const Tensor& grid, const Tensor& weight) {
  const auto& s = grid.shape();
  const auto& ws = weight.shape();
  require(s.size() == 4, "depthwise_conv3d: grid must be (D,H,W,C), got " + shape_str(s));
  require(ws.size() == 4 && ws[1] == ws[2] && ws[2] == ws[3] && ws[1] % 2 == 1,
          "depthwise_conv3d: weight must be (C,k,k,k) with odd k, got " + shape_str(ws));
  require(ws[0] == s[3], "depthwise_conv3d: channel mismatch, grid " + shape_str(s) +
                             " vs weight " + shape_str(ws));
  const std::int64_t D = s[0], H = s[1], W = s[2], C = s[3];
  const std::int64_t k = ws[1], p = k / 2;

  Tensor out = make_node(s, "depthwise_conv3d", {grid, weight},
                         [D, H, W, C, k, p](TensorImpl& self) {
    TensorImpl& iv = *self.inputs[0];
    TensorImpl& iw = *self.inputs[1];
    const real* g = self.grad.data();
    real* gv = iv.needs_grad ? grad_of(iv) : nullptr;
    real* gw = iw.needs_grad ? grad_of(iw) : nullptr;
    if (!gv && !gw) return;
    auto vidx = [H, W, C](std::int64_t d, std::int64_t h, std::int64_t w) {
      return ((d * H + h) * W + w) * C;
    };
    for (std::int64_t d = 0; d < D; ++d) {
      for (std::int64_t h = 0; h < H; ++h) {
        for (std::int64_t w = 0; w < W; ++w) {
          const real* grow = g + vidx(d, h, w);
          for (std::int64_t kz = 0; kz < k; ++kz) {
            const std::int64_t sd = d + kz - p;
            if (sd < 0 || sd >= D) continue;
            for (std::int64_t ky = 0; ky < k; ++ky) {
              const std::int64_t sh = h + ky - p;
              if (sh < 0 || sh >= H) continue;
              for (std::int64_t kx = 0; kx < k; ++kx) {
                const std::int64_t sw = w + kx - p;
                if (sw < 0 || sw >= W) continue;
                const std::int64_t voff = vidx(sd, sh, sw);
                const std::int64_t woff = (kz * k + ky) * k + kx;
                for (std::int64_t c = 0; c < C; ++c) {
                  const real wv = iw.data[static_cast<std::size_t>(c * k * k * k + woff)];
                  if (gv) gv[voff + c] += grow[c] * wv;
                  if (gw) {
                    gw[c * k * k * k + woff] +=
                        grow[c] * iv.data[static_cast<std::size_t>(voff + c)];
                  }
                }
              }
            }
          }
        }
      }
    }
  });

  const real* v = grid.impl()->data.data();
  const real* wv = weight.impl()->data.data();
  real* o = out.impl()->data.data();
  auto vidx = [H, W, C](std::int64_t d, std::int64_t h, std::int64_t w) {
    return ((d * H + h) * W + w) * C;
  };
  for (std::int64_t d = 0; d < D; ++d) {
    for (std::int64_t h = 0; h < H; ++h) {
      for (std::int64_t w = 0; w < W; ++w) {
        real* orow = o + vidx(d, h, w);
        for (std::int64_t kz = 0; kz < k; ++kz) {
          const std::int64_t sd = d + kz - p;
          if (sd < 0 || sd >= D) continue;
          for (std::int64_t ky = 0; ky < k; ++ky) {
            const std::int64_t sh = h + ky - p;
            if (sh < 0 || sh >= H) continue;
            for (std::int64_t kx = 0; kx < k; ++kx) {
              const std::int64_t sw = w + kx - p;
              if (sw < 0 || sw >= W) continue;
              const real* vrow = v + vidx(sd, sh, sw);
              const std::int64_t woff = (kz * k + ky) * k + kx;
              for (std::int64_t c = 0; c < C; ++c) {
                orow[c] += vrow[c] * wv[c * k * k * k + woff];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace crswin
