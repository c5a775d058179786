#pragma once

#include <cstdint>
#include <functional>

#include "crswin/rng.hpp"
#include "crswin/tensor.hpp"

namespace crswin {

// Maps an input volume (Cin, D, H, W) to class logits (K, D, H, W). Any shape
// with the class axis leading works; losses reduce over everything else.
using ModelFn = std::function<Tensor(const Tensor&)>;

enum class VatAnchor { kLabel, kPrediction };

struct VatConfig {
  real lambda = 1.0;
  real epsilon = 2.5;  // perturbation radius, min-max intensity units
  real xi = 10.0;      // finite-difference step inside the power iteration
  std::int64_t n_power = 1;
  bool enabled = true;
  VatAnchor anchor = VatAnchor::kLabel;
};

void validate(const VatConfig& config);

struct LossReport {
  real dice = 0.0;
  real ce = 0.0;
  real vat = 0.0;
  real total = 0.0;
  Tensor objective;  // graph scalar behind `total`; run backward on this
};

// Negative smoothed Dice overlap averaged over classes; in [-1, 0] as
// smooth -> 0. Class axis is axis 0.
Tensor dice_loss(const Tensor& probs, const Tensor& onehot, real smooth = 1e-5,
                 bool include_background = true);

// Mean over voxels of -sum_k Y_k log P_k; probabilities clamped to [1e-12, 1].
Tensor ce_loss(const Tensor& probs, const Tensor& onehot);

// Mean over voxels of sum_k T_k log(T_k / P_k). The target distribution is
// treated as a constant; only `probs` receives gradient.
Tensor kl_divergence(const Tensor& target, const Tensor& probs);

// Power-iteration search for the adversarial direction: d starts as a random
// unit tensor, then n_power times d <- normalize(grad_r KL(T || H(x + xi*r)))
// at r = d. Returns epsilon * d as a constant with L2 norm epsilon. A
// vanishing gradient falls back to the current random direction. Gradients
// the search accumulates into model parameters are stale; zero them before
// running backward on the training objective.
Tensor vat_perturbation(const ModelFn& model, const Tensor& x, const Tensor& target,
                        const VatConfig& config, Rng& rng);

// KL of the perturbed prediction softmax(H(x + r_adv)) against the anchor
// target, with r_adv held fixed.
Tensor vat_loss(const ModelFn& model, const Tensor& x, const Tensor& target,
                const Tensor& r_adv);

// dice + ce + lambda * vat. The adversarial direction is recomputed on every
// call; lambda == 0 or enabled == false skips the search entirely.
LossReport total_loss(const ModelFn& model, const Tensor& x, const Tensor& onehot,
                      const VatConfig& config, Rng& rng);

}  // namespace crswin
