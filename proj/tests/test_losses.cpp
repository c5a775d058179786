#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "crswin/losses.hpp"
#include "crswin/model.hpp"
#include "support/testutil.hpp"

using namespace crswin;
using testutil::check_gradients;
using testutil::max_abs_diff;
using testutil::rand_tensor;

namespace {

// logits[k, ...] = sum_c w[k, c] * x[c, ...]
ModelFn linear_model(const Tensor& w) {
  return [w](const Tensor& x) {
    const std::int64_t c = x.extent(0);
    const std::int64_t v = x.numel() / c;
    Shape out = x.shape();
    out[0] = w.extent(0);
    return reshape(matmul(w, reshape(x, {c, v})), out);
  };
}

Tensor random_onehot(Shape shape, Rng& rng) {
  Tensor y = Tensor::zeros(shape);
  const std::int64_t k = shape[0];
  const std::int64_t v = y.numel() / k;
  auto buf = y.mutable_data();
  for (std::int64_t i = 0; i < v; ++i) {
    buf[static_cast<std::size_t>(rng.uniform_int(0, k - 1) * v + i)] = 1.0;
  }
  return y;
}

std::vector<real> unit_normal_draws(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<real> d(n);
  for (auto& v : d) v = rng.normal();
  double norm = 0.0;
  for (real v : d) norm += v * v;
  norm = std::sqrt(norm);
  for (auto& v : d) v /= static_cast<real>(norm);
  return d;
}

double cosine(std::span<const real> a, std::span<const real> b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

}  // namespace

TEST_CASE("dice loss hand values") {
  Tensor y = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(dice_loss(y, y, 0.0).item() == doctest::Approx(-1.0));
  Tensor flipped = Tensor::from_data({2, 2}, {0, 1, 1, 0});
  CHECK(dice_loss(flipped, y, 0.0).item() == doctest::Approx(0.0));
  Tensor uniform = Tensor::full({2, 2}, 0.5);
  CHECK(dice_loss(uniform, y, 0.0).item() == doctest::Approx(-0.5));
  // smoothing keeps an absent class well-defined
  Tensor empty = Tensor::zeros({2, 2});
  Tensor none = Tensor::from_data({2, 2}, {1, 1, 0, 0});
  CHECK(std::isfinite(dice_loss(empty, none).item()));
  CHECK_THROWS_AS(dice_loss(y, Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("dice loss stays in [-1, 0] and rewards overlap monotonically") {
  Rng rng(601);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor probs = softmax(rand_tensor({3, 2, 2, 2}, rng, 2.0, false), 0);
    Tensor y = random_onehot({3, 2, 2, 2}, rng);
    const real v = dice_loss(probs, y, 0.0).item();
    CHECK(v <= 1e-12);
    CHECK(v >= -1.0 - 1e-12);
  }
  // class 1 true on voxels 0..3; predicting more of them never hurts
  Tensor y = Tensor::from_data({2, 8}, {0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0});
  Tensor small = Tensor::from_data({2, 8}, {1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 1, 1, 0, 0, 0, 0});
  Tensor big = Tensor::from_data({2, 8}, {0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0});
  CHECK(dice_loss(big, y).item() < dice_loss(small, y).item());
}

TEST_CASE("dice loss gradcheck through softmax") {
  Rng rng(602);
  Tensor logits = rand_tensor({3, 4}, rng);
  Tensor y = random_onehot({3, 4}, rng);
  auto res = check_gradients([&] { return dice_loss(softmax(logits, 0), y); }, {logits});
  CHECK(res.max_err < 1e-6);
  CHECK(res.checked == 12);
}

TEST_CASE("cross entropy hand values and clamping") {
  Tensor y = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  CHECK(ce_loss(y, y).item() == doctest::Approx(0.0));
  Tensor uniform4 = Tensor::full({4, 2}, 0.25);
  Rng pick(603);
  Tensor y4 = random_onehot({4, 2}, pick);
  CHECK(ce_loss(uniform4, y4).item() == doctest::Approx(std::log(4.0)));
  // exact zero probability on the true class stays finite through the clamp
  Tensor wrong = Tensor::from_data({2, 2}, {0, 1, 1, 0});
  const real v = ce_loss(wrong, y).item();
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(1e-12)));
  CHECK_THROWS_AS(ce_loss(y, Tensor::zeros({2, 3})), ShapeError);
}

TEST_CASE("cross entropy gradcheck") {
  Rng rng(604);
  Tensor logits = rand_tensor({4, 5}, rng);
  Tensor y = random_onehot({4, 5}, rng);
  auto res = check_gradients([&] { return ce_loss(softmax(logits, 0), y); }, {logits});
  CHECK(res.max_err < 1e-6);
}

TEST_CASE("KL divergence identities") {
  Tensor y = Tensor::from_data({2, 1}, {1, 0});
  CHECK(kl_divergence(y, y).item() == doctest::Approx(0.0).epsilon(1e-9));
  Tensor half = Tensor::from_data({2, 1}, {0.5, 0.5});
  CHECK(kl_divergence(y, half).item() == doctest::Approx(std::log(2.0)));
  CHECK(kl_divergence(half, half).item() == doctest::Approx(0.0));

  Rng rng(605);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor t = softmax(rand_tensor({3, 4}, rng, 2.0, false), 0);
    Tensor p = softmax(rand_tensor({3, 4}, rng, 2.0, false), 0);
    CHECK(kl_divergence(t, p).item() >= -1e-12);
  }
  // one-hot target: zero iff the prediction matches on the support
  Tensor off = Tensor::from_data({2, 1}, {0.999, 0.001});
  CHECK(kl_divergence(y, off).item() > 0.0);
}

TEST_CASE("KL gradcheck against a fixed target") {
  Rng rng(606);
  Tensor logits = rand_tensor({3, 4}, rng);
  Tensor target = softmax(rand_tensor({3, 4}, rng, 1.0, false), 0);
  auto res = check_gradients([&] { return kl_divergence(target, softmax(logits, 0)); }, {logits});
  CHECK(res.max_err < 1e-6);
}

TEST_CASE("adversarial direction has norm epsilon and is seed-deterministic") {
  Rng rng(607);
  Tensor w = rand_tensor({3, 2}, rng, 1.0, true);
  Tensor x = rand_tensor({2, 2, 2, 1}, rng, 1.0, false);
  Tensor y = random_onehot({3, 2, 2, 1}, rng);
  VatConfig cfg;
  cfg.epsilon = 2.5;

  Rng search1(99);
  Tensor r1 = vat_perturbation(linear_model(w), x, y, cfg, search1);
  double norm = 0.0;
  for (real v : r1.data()) norm += v * v;
  CHECK(std::sqrt(norm) == doctest::Approx(2.5).epsilon(1e-6));
  CHECK_FALSE(r1.requires_grad());

  Rng search2(99);
  Tensor r2 = vat_perturbation(linear_model(w), x, y, cfg, search2);
  CHECK(max_abs_diff(r1, r2) == doctest::Approx(0.0));

  Rng search3(100);
  Tensor r3 = vat_perturbation(linear_model(w), x, y, cfg, search3);
  CHECK(max_abs_diff(r1, r3) > 1e-9);
}

TEST_CASE("adversarial direction matches the analytic gradient of a linear model") {
  Rng rng(608);
  const std::int64_t k = 3, c = 2, v = 4;
  Tensor w = rand_tensor({k, c}, rng, 1.0, true);
  Tensor x = rand_tensor({c, v}, rng, 1.0, false);
  Tensor y = random_onehot({k, v}, rng);
  VatConfig cfg;

  Rng search(77);
  Tensor r_adv = vat_perturbation(linear_model(w), x, y, cfg, search);

  // one power step from d0: g = xi * W^T (softmax(W(x + xi d0)) - y), per voxel
  const auto d0 = unit_normal_draws(77, static_cast<std::size_t>(c * v));
  const auto wd = w.data();
  const auto xd = x.data();
  const auto yd = y.data();
  std::vector<real> g(static_cast<std::size_t>(c * v), 0.0);
  for (std::int64_t vox = 0; vox < v; ++vox) {
    std::vector<real> logits(static_cast<std::size_t>(k), 0.0);
    for (std::int64_t kk = 0; kk < k; ++kk) {
      for (std::int64_t cc = 0; cc < c; ++cc) {
        logits[kk] += wd[kk * c + cc] * (xd[cc * v + vox] + cfg.xi * d0[cc * v + vox]);
      }
    }
    real mx = logits[0];
    for (real l : logits) mx = std::max(mx, l);
    real z = 0.0;
    for (auto& l : logits) {
      l = std::exp(l - mx);
      z += l;
    }
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const real delta = logits[kk] / z - yd[kk * v + vox];
      for (std::int64_t cc = 0; cc < c; ++cc) {
        g[cc * v + vox] += cfg.xi * wd[kk * c + cc] * delta;
      }
    }
  }
  CHECK(cosine(r_adv.data(), g) > 0.99);
}

TEST_CASE("degenerate zero gradient falls back to the seeded random direction") {
  Tensor w = Tensor::zeros({3, 2}, true);  // constant logits: KL gradient vanishes
  Rng rng(609);
  Tensor x = rand_tensor({2, 5}, rng, 1.0, false);
  Tensor y = random_onehot({3, 5}, rng);
  VatConfig cfg;
  cfg.epsilon = 1.5;

  Rng search(42);
  Tensor r = vat_perturbation(linear_model(w), x, y, cfg, search);
  const auto d0 = unit_normal_draws(42, 10);
  for (std::size_t i = 0; i < d0.size(); ++i) {
    CHECK(r.data()[i] == doctest::Approx(1.5 * d0[i]).epsilon(1e-9));
  }
}

TEST_CASE("vat loss hand values and nonnegativity") {
  Rng rng(610);
  Tensor x = rand_tensor({2, 3}, rng, 1.0, false);
  Tensor y = Tensor::from_data({2, 3}, {1, 1, 0, 0, 0, 1});
  Tensor r = Tensor::zeros({2, 3});

  // logits reproducing the target through softmax
  ModelFn exact = [&](const Tensor&) { return log(clamp(y, 1e-12, 1.0)); };
  CHECK(vat_loss(exact, x, y, r).item() == doctest::Approx(0.0).epsilon(1e-9));

  ModelFn flat = [&](const Tensor& in) { return Tensor::zeros(in.shape()); };
  CHECK(vat_loss(flat, x, y, r).item() == doctest::Approx(std::log(2.0)));

  Tensor w = rand_tensor({2, 2}, rng, 1.0, false);
  Rng search(11);
  Tensor r_adv = vat_perturbation(linear_model(w), x, y, VatConfig{}, search);
  CHECK(vat_loss(linear_model(w), x, y, r_adv).item() >= 0.0);
  CHECK_THROWS_AS(vat_loss(flat, x, y, Tensor::zeros({2, 4})), ShapeError);
}

TEST_CASE("total loss recombines its terms and collapses when VAT is off") {
  Rng rng(611);
  Tensor w = rand_tensor({3, 2}, rng, 1.0, true);
  Tensor x = rand_tensor({2, 2, 2, 2}, rng, 1.0, false);
  Tensor y = random_onehot({3, 2, 2, 2}, rng);

  VatConfig off;
  off.lambda = 0.0;
  Rng s1(7);
  LossReport a = total_loss(linear_model(w), x, y, off, s1);
  CHECK(a.vat == doctest::Approx(0.0));
  CHECK(a.total == doctest::Approx(a.dice + a.ce).epsilon(1e-12));

  VatConfig disabled;
  disabled.enabled = false;
  Rng s2(7);
  LossReport b = total_loss(linear_model(w), x, y, disabled, s2);
  CHECK(b.total == doctest::Approx(a.total));

  VatConfig on;
  on.lambda = 0.7;
  on.anchor = VatAnchor::kPrediction;
  Rng s3(7);
  LossReport c = total_loss(linear_model(w), x, y, on, s3);
  CHECK(std::abs(c.total - c.dice - c.ce - 0.7 * c.vat) < 1e-9);
  CHECK(c.objective.item() == doctest::Approx(c.total));
  CHECK(c.vat >= 0.0);
}

TEST_CASE("one descent step on the full objective reduces it") {
  Rng rng(612);
  Tensor w = rand_tensor({3, 2}, rng, 1.0, true);
  Tensor x = rand_tensor({2, 2, 2, 2}, rng, 1.0, false);
  Tensor y = random_onehot({3, 2, 2, 2}, rng);
  VatConfig cfg;

  Rng s1(13);
  LossReport before = total_loss(linear_model(w), x, y, cfg, s1);
  zero_grad({w});  // the adversarial search left stale parameter gradients
  backward(before.objective);
  auto buf = w.mutable_data();
  const auto g = w.grad();
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] -= 1e-4 * g[i];

  Rng s2(13);
  LossReport after = total_loss(linear_model(w), x, y, cfg, s2);
  CHECK(after.total < before.total);
}

TEST_CASE("objective gradcheck on a tiny full model with frozen perturbation") {
  ModelConfig mc;
  mc.in_channels = 2;
  mc.classes = 2;
  mc.embed_dim = 6;
  mc.kernel = {2, 4};
  mc.depths = {1};
  mc.heads = {3, 3};
  mc.stripes = {1, 1};
  mc.window = 2;
  mc.mlp_ratio = 2;
  ModelParams params = init_params(mc, 71);
  ModelFn model = [&](const Tensor& in) { return forward(in, params); };

  Rng rng(613);
  Tensor vol = rand_tensor({2, 8, 8, 8}, rng, 1.0, false);
  Tensor y = random_onehot({2, 8, 8, 8}, rng);
  VatConfig cfg;
  cfg.epsilon = 0.5;
  Rng search(5);
  Tensor r_adv = vat_perturbation(model, vol, y, cfg, search);

  auto make_loss = [&] {
    Tensor probs = softmax(model(vol), 0);
    Tensor vat = vat_loss(model, vol, y, r_adv);
    return add(add(dice_loss(probs, y), ce_loss(probs, y)), mul_scalar(vat, cfg.lambda));
  };
  auto res = check_gradients(
      make_loss,
      {params.cls_w, params.cls_b, params.embed_b, params.encoder[0].swin[0].ln1.gamma,
       params.encoder[0].swin[0].attn.w_q},
      1e-4);
  CHECK(res.max_err < 1e-3);
  CHECK(res.checked > 50);
}

TEST_CASE("vat config validation") {
  VatConfig bad;
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(validate(bad), ShapeError);
  bad = VatConfig{};
  bad.xi = -1.0;
  CHECK_THROWS_AS(validate(bad), ShapeError);
  bad = VatConfig{};
  bad.n_power = 0;
  CHECK_THROWS_AS(validate(bad), ShapeError);
  bad = VatConfig{};
  bad.lambda = -0.5;
  CHECK_THROWS_AS(validate(bad), ShapeError);
}
