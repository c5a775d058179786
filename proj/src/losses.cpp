#include "crswin/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace crswin {

namespace {

constexpr real kProbFloor = 1e-12;

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

void check_pair(const Tensor& probs, const Tensor& onehot, const char* op) {
  require(probs.defined() && onehot.defined(), std::string(op) + ": undefined tensor");
  require(probs.shape() == onehot.shape(),
          std::string(op) + ": probs " + shape_str(probs.shape()) + " vs target " +
              shape_str(onehot.shape()));
  require(probs.rank() >= 2, std::string(op) + ": need a leading class axis");
}

std::int64_t voxels_per_class(const Tensor& t) { return t.numel() / t.extent(0); }

double l2_norm(std::span<const real> v) {
  double s = 0.0;
  for (real x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

}  // namespace

void validate(const VatConfig& config) {
  require(config.epsilon > 0.0, "VatConfig: epsilon must be positive");
  require(config.xi > 0.0, "VatConfig: xi must be positive");
  require(config.n_power >= 1, "VatConfig: n_power must be at least 1");
  require(config.lambda >= 0.0, "VatConfig: lambda must be nonnegative");
}

Tensor dice_loss(const Tensor& probs, const Tensor& onehot, real smooth,
                 bool include_background) {
  check_pair(probs, onehot, "dice_loss");
  const std::int64_t classes = probs.extent(0);
  const std::int64_t first = include_background ? 0 : 1;
  require(first < classes, "dice_loss: no classes left to average");

  Tensor acc;
  for (std::int64_t k = first; k < classes; ++k) {
    Tensor pk = slice(probs, 0, k, 1);
    Tensor yk = slice(onehot, 0, k, 1);
    Tensor inter = sum_all(mul(pk, yk));
    Tensor mass = add(sum_all(pk), sum_all(yk));
    Tensor dice_k = div(add_scalar(mul_scalar(inter, 2.0), smooth), add_scalar(mass, smooth));
    acc = acc.defined() ? add(acc, dice_k) : dice_k;
  }
  return mul_scalar(acc, -1.0 / static_cast<real>(classes - first));
}

Tensor ce_loss(const Tensor& probs, const Tensor& onehot) {
  check_pair(probs, onehot, "ce_loss");
  Tensor term = mul(onehot.detach(), log(clamp(probs, kProbFloor, 1.0)));
  return mul_scalar(sum_all(term), -1.0 / static_cast<real>(voxels_per_class(probs)));
}

Tensor kl_divergence(const Tensor& target, const Tensor& probs) {
  check_pair(probs, target, "kl_divergence");
  Tensor t = target.detach();
  Tensor log_ratio = sub(log(clamp(t, kProbFloor, 1.0)), log(clamp(probs, kProbFloor, 1.0)));
  return mul_scalar(sum_all(mul(t, log_ratio)), 1.0 / static_cast<real>(voxels_per_class(probs)));
}

Tensor vat_perturbation(const ModelFn& model, const Tensor& x, const Tensor& target,
                        const VatConfig& config, Rng& rng) {
  validate(config);
  require(x.defined() && target.defined(), "vat_perturbation: undefined tensor");
  const std::int64_t n = x.numel();
  const Tensor x_const = x.detach();

  // random unit start, drawn in storage order
  std::vector<real> dir(static_cast<std::size_t>(n));
  for (auto& v : dir) v = rng.normal();
  double norm = l2_norm(dir);
  if (norm < 1e-30) {
    dir.assign(dir.size(), 0.0);
    dir[0] = 1.0;
    norm = 1.0;
  }
  for (auto& v : dir) v /= static_cast<real>(norm);

  for (std::int64_t it = 0; it < config.n_power; ++it) {
    std::vector<real> step(dir);
    for (auto& v : step) v *= config.xi;
    Tensor r = Tensor::from_data(x.shape(), std::move(step), true);
    Tensor probs = softmax(model(add(x_const, r)), 0);
    backward(kl_divergence(target, probs));
    const auto g = r.grad();
    const double gnorm = l2_norm(g);
    if (gnorm < 1e-12) break;  // degenerate: keep the current direction
    for (std::size_t i = 0; i < dir.size(); ++i) dir[i] = g[i] / static_cast<real>(gnorm);
  }

  for (auto& v : dir) v *= config.epsilon;
  return Tensor::from_data(x.shape(), std::move(dir), false);
}

Tensor vat_loss(const ModelFn& model, const Tensor& x, const Tensor& target,
                const Tensor& r_adv) {
  require(x.defined() && r_adv.defined(), "vat_loss: undefined tensor");
  require(x.shape() == r_adv.shape(), "vat_loss: r_adv " + shape_str(r_adv.shape()) +
                                          " does not match input " + shape_str(x.shape()));
  Tensor probs = softmax(model(add(x.detach(), r_adv.detach())), 0);
  return kl_divergence(target, probs);
}

LossReport total_loss(const ModelFn& model, const Tensor& x, const Tensor& onehot,
                      const VatConfig& config, Rng& rng) {
  validate(config);
  Tensor probs = softmax(model(x), 0);
  Tensor dice = dice_loss(probs, onehot);
  Tensor ce = ce_loss(probs, onehot);

  LossReport report;
  report.dice = dice.item();
  report.ce = ce.item();
  report.objective = add(dice, ce);

  if (config.enabled && config.lambda > 0.0) {
    Tensor target = config.anchor == VatAnchor::kLabel ? onehot.detach() : probs.detach();
    Tensor r_adv = vat_perturbation(model, x, target, config, rng);
    Tensor vat = vat_loss(model, x, target, r_adv);
    report.vat = vat.item();
    report.objective = add(report.objective, mul_scalar(vat, config.lambda));
  }
  report.total = report.objective.item();
  return report;
}

}  // namespace crswin
