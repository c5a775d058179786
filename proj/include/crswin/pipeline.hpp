#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "crswin/losses.hpp"
#include "crswin/model.hpp"
#include "crswin/volume.hpp"

namespace crswin {

// Training diverged (non-finite loss); mapped to its own process exit code.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Desk-scale model: C=24, two encoder stages, trains on 64-cube crops on a
// CPU. The ModelConfig default constructor stays at full scale.
ModelConfig desk_model();

struct TrainConfig {
  real lr = 1e-4;
  std::int64_t batch = 1;  // the loop is sequential; only 1 is supported
  std::int64_t epochs = 10;
  real poly_power = 0.9;
  std::uint64_t seed = 0;
  real split = 0.8;  // training fraction of the case list
  std::array<std::int64_t, 3> crop = {64, 64, 64};
  std::int64_t checkpoint_every = 0;  // epochs between periodic saves; 0 = best only
  bool clip = true;                   // percentile clipping during preprocessing
  VatConfig vat;
  ModelConfig model = desk_model();
};

void validate(const TrainConfig& config);

// ---- preprocessing ----

// Per-axis [lo, hi) over voxels nonzero in any modality; full extent when the
// volume is identically zero.
std::array<std::array<std::int64_t, 3>, 2> nonzero_bounding_box(const Volume& volume);

// Per modality: clip to the [p0.5, p99.5] percentiles (when `clip`), then
// min-max to [0,1]. A constant modality becomes zeros; its index is appended
// to `constant` when given.
Volume normalize_intensities(const Volume& volume, bool clip = true,
                             std::vector<int>* constant = nullptr);

// Origin of a `size` crop centered on the bounding box, clamped inside the
// volume per axis when it fits; a smaller volume centers inside the crop
// (negative origin = symmetric zero padding).
std::array<std::int64_t, 3> crop_origin(const Volume& volume,
                                        const std::array<std::int64_t, 3>& size);

// Out-of-range source voxels read as zero.
Volume crop_volume(const Volume& volume, const std::array<std::int64_t, 3>& lo,
                   const std::array<std::int64_t, 3>& size);
LabelMask crop_mask(const LabelMask& mask, const std::array<std::int64_t, 3>& lo,
                    const std::array<std::int64_t, 3>& size);

// normalize_intensities then crop at crop_origin (computed on the raw volume).
Volume preprocess(const Volume& volume, const std::array<std::int64_t, 3>& size,
                  bool clip = true);
// Same, with the mask cropped through the identical window.
std::pair<Volume, LabelMask> preprocess_case(const Volume& volume, const LabelMask& mask,
                                             const std::array<std::int64_t, 3>& size,
                                             bool clip = true);

// ---- tensor bridges ----

Tensor volume_to_tensor(const Volume& volume);
// One-hot (K, D, H, W) from internal labels; a label >= classes raises LabelError.
Tensor mask_to_onehot(const LabelMask& internal, std::int64_t classes);
// Argmax over axis 0, lowest class index winning ties; internal labels out.
LabelMask probs_to_mask(const Tensor& probs);

// ---- optimization ----

// base_lr * (1 - step/max_steps)^power
real poly_lr(std::int64_t step, std::int64_t max_steps, real base_lr, real power);

struct AdamState {
  std::vector<Tensor> m;  // first moments, aligned with the parameter list
  std::vector<Tensor> v;  // second moments
  std::int64_t step = 0;
  real beta1 = 0.9;
  real beta2 = 0.999;
  real eps = 1e-8;
};

AdamState make_adam(const std::vector<Tensor>& params);

// Bias-corrected in-place update from each parameter's accumulated gradient.
void adam_step(const std::vector<Tensor>& params, AdamState& state, real lr);

// ---- training ----

struct StepLog {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  real lr = 0.0;
  LossReport loss;
};

struct TrainResult {
  std::vector<StepLog> log;
  real best_dice = -1.0;  // held-out mean WT Dice (training set when no held-out case)
  std::int64_t best_epoch = -1;
  std::filesystem::path best_checkpoint;
};

// Sorted .crsv files directly under `dir`.
std::vector<std::filesystem::path> list_dataset(const std::filesystem::path& dir);

// Seeded split/shuffle, Adam with poly decay, per-step loss rows appended to
// `out_dir`/train_log.csv, best-Dice checkpoint at `out_dir`/best.crck. A
// non-finite loss aborts with NumericError. `progress`, when given, receives
// one line per step and per validation pass.
TrainResult train(const std::vector<std::filesystem::path>& cases, const TrainConfig& config,
                  const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

// ---- inference ----

// Tiled forward passes with stride patch*(1-overlap); per-voxel softmax
// probabilities averaged uniformly over the covering patches, then argmax.
// The volume is zero-padded up to the patch size when smaller; the returned
// mask matches the input grid and uses internal labels.
LabelMask sliding_window_infer(const Volume& volume, const ModelParams& params,
                               const std::array<std::int64_t, 3>& patch, double overlap = 0.5);

// ---- reporting ----

// Grayscale slices of `background_channel` along `axis` with labels blended
// in: NET/NCR blue, ED yellow, ET red (external alphabet). One
// slice_<idx>_pred.ppm per kept slice, plus slice_<idx>_gt.ppm when gt is
// given. `every` keeps each every-th slice.
void export_slices(const Volume& volume, const LabelMask& pred, const LabelMask* gt,
                   std::int64_t axis, const std::filesystem::path& dir, std::int64_t every = 1,
                   std::int64_t background_channel = 0);

// ---- config file ----

// JSON mirroring TrainConfig field names exactly; unknown keys and malformed
// values raise FormatError. Missing keys keep their defaults.
TrainConfig load_train_config(const std::filesystem::path& path);
void save_train_config(const TrainConfig& config, const std::filesystem::path& path);

}  // namespace crswin
