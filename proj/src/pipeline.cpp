#include "crswin/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "crswin/evaluation.hpp"

namespace crswin {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

std::int64_t channel_count(const Volume& v) {
  require(v.grid_size() > 0, "volume: empty grid");
  require(v.voxels.size() % static_cast<std::size_t>(v.grid_size()) == 0,
          "volume: voxel buffer does not tile the grid");
  return static_cast<std::int64_t>(v.voxels.size()) / v.grid_size();
}

real interp_percentile(std::vector<real>& values, real p) {
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const real vlo = values[lo];
  if (lo + 1 >= values.size()) return vlo;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo + 1),
                   values.end());
  return vlo + static_cast<real>(pos - static_cast<double>(lo)) * (values[lo + 1] - vlo);
}

}  // namespace

ModelConfig desk_model() {
  ModelConfig m;
  m.embed_dim = 24;
  m.depths = {2, 2};
  m.heads = {3, 6, 12};
  m.stripes = {1, 2, 4};
  return m;
}

void validate(const TrainConfig& config) {
  require(config.lr > 0.0, "TrainConfig: lr must be positive");
  require(config.batch == 1, "TrainConfig: only batch size 1 is supported");
  require(config.epochs >= 1, "TrainConfig: epochs must be at least 1");
  require(config.poly_power > 0.0, "TrainConfig: poly_power must be positive");
  require(config.split > 0.0 && config.split < 1.0, "TrainConfig: split must be in (0,1)");
  require(config.checkpoint_every >= 0, "TrainConfig: checkpoint_every must be nonnegative");
  validate(config.vat);
  validate(config.model);
  predict_logits_shape(config.model, config.crop);  // crop must divide cleanly
}

// ---- preprocessing ----

std::array<std::array<std::int64_t, 3>, 2> nonzero_bounding_box(const Volume& volume) {
  const std::int64_t channels = channel_count(volume);
  std::array<std::int64_t, 3> lo = {volume.d, volume.h, volume.w};
  std::array<std::int64_t, 3> hi = {0, 0, 0};
  for (std::int64_t z = 0; z < volume.d; ++z) {
    for (std::int64_t y = 0; y < volume.h; ++y) {
      for (std::int64_t x = 0; x < volume.w; ++x) {
        bool any = false;
        for (std::int64_t c = 0; c < channels && !any; ++c) any = volume.at(c, z, y, x) != 0.0;
        if (!any) continue;
        lo = {std::min(lo[0], z), std::min(lo[1], y), std::min(lo[2], x)};
        hi = {std::max(hi[0], z + 1), std::max(hi[1], y + 1), std::max(hi[2], x + 1)};
      }
    }
  }
  if (hi[0] <= lo[0]) return {{{0, 0, 0}, {volume.d, volume.h, volume.w}}};
  return {{lo, hi}};
}

Volume normalize_intensities(const Volume& volume, bool clip, std::vector<int>* constant) {
  const std::int64_t channels = channel_count(volume);
  const std::int64_t grid = volume.grid_size();
  Volume out = volume;
  for (std::int64_t c = 0; c < channels; ++c) {
    const auto base = static_cast<std::size_t>(c * grid);
    real lo_clip = 0.0, hi_clip = 0.0;
    if (clip) {
      std::vector<real> sample(volume.voxels.begin() + static_cast<std::ptrdiff_t>(base),
                               volume.voxels.begin() + static_cast<std::ptrdiff_t>(base + grid));
      lo_clip = interp_percentile(sample, 0.005);
      hi_clip = interp_percentile(sample, 0.995);
    }
    real mn = std::numeric_limits<real>::infinity();
    real mx = -mn;
    for (std::int64_t i = 0; i < grid; ++i) {
      real v = volume.voxels[base + static_cast<std::size_t>(i)];
      if (clip) v = std::clamp(v, lo_clip, hi_clip);
      out.voxels[base + static_cast<std::size_t>(i)] = v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    const real range = mx - mn;
    if (range <= 0.0) {
      for (std::int64_t i = 0; i < grid; ++i) out.voxels[base + static_cast<std::size_t>(i)] = 0.0;
      if (constant) constant->push_back(static_cast<int>(c));
      continue;
    }
    for (std::int64_t i = 0; i < grid; ++i) {
      auto& v = out.voxels[base + static_cast<std::size_t>(i)];
      v = (v - mn) / range;
    }
  }
  return out;
}

std::array<std::int64_t, 3> crop_origin(const Volume& volume,
                                        const std::array<std::int64_t, 3>& size) {
  const auto box = nonzero_bounding_box(volume);
  const std::array<std::int64_t, 3> dims = {volume.d, volume.h, volume.w};
  std::array<std::int64_t, 3> origin{};
  for (int a = 0; a < 3; ++a) {
    require(size[a] > 0, "crop_origin: crop size must be positive");
    const std::int64_t center = (box[0][a] + box[1][a]) / 2;
    std::int64_t lo = center - size[a] / 2;
    if (dims[a] >= size[a]) {
      lo = std::clamp<std::int64_t>(lo, 0, dims[a] - size[a]);
    } else {
      lo = (dims[a] - size[a]) / 2;  // negative: symmetric padding
    }
    origin[a] = lo;
  }
  return origin;
}

Volume crop_volume(const Volume& volume, const std::array<std::int64_t, 3>& lo,
                   const std::array<std::int64_t, 3>& size) {
  const std::int64_t channels = channel_count(volume);
  Volume out;
  out.d = size[0];
  out.h = size[1];
  out.w = size[2];
  out.spacing = volume.spacing;
  out.id = volume.id;
  out.voxels.assign(static_cast<std::size_t>(channels * out.grid_size()), 0.0);
  for (std::int64_t c = 0; c < channels; ++c) {
    for (std::int64_t z = 0; z < size[0]; ++z) {
      const std::int64_t sz = lo[0] + z;
      if (sz < 0 || sz >= volume.d) continue;
      for (std::int64_t y = 0; y < size[1]; ++y) {
        const std::int64_t sy = lo[1] + y;
        if (sy < 0 || sy >= volume.h) continue;
        for (std::int64_t x = 0; x < size[2]; ++x) {
          const std::int64_t sx = lo[2] + x;
          if (sx < 0 || sx >= volume.w) continue;
          out.at(c, z, y, x) = volume.at(c, sz, sy, sx);
        }
      }
    }
  }
  return out;
}

LabelMask crop_mask(const LabelMask& mask, const std::array<std::int64_t, 3>& lo,
                    const std::array<std::int64_t, 3>& size) {
  LabelMask out;
  out.d = size[0];
  out.h = size[1];
  out.w = size[2];
  out.labels.assign(static_cast<std::size_t>(out.grid_size()), 0);
  for (std::int64_t z = 0; z < size[0]; ++z) {
    const std::int64_t sz = lo[0] + z;
    if (sz < 0 || sz >= mask.d) continue;
    for (std::int64_t y = 0; y < size[1]; ++y) {
      const std::int64_t sy = lo[1] + y;
      if (sy < 0 || sy >= mask.h) continue;
      for (std::int64_t x = 0; x < size[2]; ++x) {
        const std::int64_t sx = lo[2] + x;
        if (sx < 0 || sx >= mask.w) continue;
        out.at(z, y, x) = mask.at(sz, sy, sx);
      }
    }
  }
  return out;
}

Volume preprocess(const Volume& volume, const std::array<std::int64_t, 3>& size, bool clip) {
  const auto origin = crop_origin(volume, size);
  return crop_volume(normalize_intensities(volume, clip), origin, size);
}

std::pair<Volume, LabelMask> preprocess_case(const Volume& volume, const LabelMask& mask,
                                             const std::array<std::int64_t, 3>& size, bool clip) {
  require(volume.d == mask.d && volume.h == mask.h && volume.w == mask.w,
          "preprocess_case: volume and mask grids differ");
  const auto origin = crop_origin(volume, size);
  return {crop_volume(normalize_intensities(volume, clip), origin, size),
          crop_mask(mask, origin, size)};
}

// ---- tensor bridges ----

Tensor volume_to_tensor(const Volume& volume) {
  const std::int64_t channels = channel_count(volume);
  return Tensor::from_data({channels, volume.d, volume.h, volume.w}, volume.voxels);
}

Tensor mask_to_onehot(const LabelMask& internal, std::int64_t classes) {
  require(classes >= 2, "mask_to_onehot: need at least 2 classes");
  Tensor y = Tensor::zeros({classes, internal.d, internal.h, internal.w});
  const std::int64_t grid = internal.grid_size();
  auto buf = y.mutable_data();
  for (std::int64_t i = 0; i < grid; ++i) {
    const std::uint8_t label = internal.labels[static_cast<std::size_t>(i)];
    if (label >= classes) {
      throw LabelError("mask_to_onehot: label " + std::to_string(static_cast<int>(label)) +
                       " outside " + std::to_string(classes) + " classes");
    }
    buf[static_cast<std::size_t>(label * grid + i)] = 1.0;
  }
  return y;
}

LabelMask probs_to_mask(const Tensor& probs) {
  require(probs.defined() && probs.rank() == 4, "probs_to_mask: need (K, D, H, W)");
  const std::int64_t k = probs.extent(0);
  LabelMask out;
  out.d = probs.extent(1);
  out.h = probs.extent(2);
  out.w = probs.extent(3);
  const std::int64_t grid = out.grid_size();
  out.labels.assign(static_cast<std::size_t>(grid), 0);
  const auto data = probs.data();
  for (std::int64_t i = 0; i < grid; ++i) {
    std::int64_t best = 0;
    real best_v = data[static_cast<std::size_t>(i)];
    for (std::int64_t c = 1; c < k; ++c) {
      const real v = data[static_cast<std::size_t>(c * grid + i)];
      if (v > best_v) {  // strict: ties keep the lowest class index
        best = c;
        best_v = v;
      }
    }
    out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
  }
  return out;
}

// ---- optimization ----

real poly_lr(std::int64_t step, std::int64_t max_steps, real base_lr, real power) {
  require(max_steps >= 1, "poly_lr: max_steps must be at least 1");
  require(step >= 0 && step <= max_steps, "poly_lr: step outside [0, max_steps]");
  return base_lr *
         static_cast<real>(std::pow(1.0 - static_cast<double>(step) / static_cast<double>(max_steps),
                                    static_cast<double>(power)));
}

AdamState make_adam(const std::vector<Tensor>& params) {
  AdamState state;
  state.m.reserve(params.size());
  state.v.reserve(params.size());
  for (const Tensor& p : params) {
    state.m.push_back(Tensor::zeros(p.shape()));
    state.v.push_back(Tensor::zeros(p.shape()));
  }
  return state;
}

void adam_step(const std::vector<Tensor>& params, AdamState& state, real lr) {
  require(params.size() == state.m.size() && params.size() == state.v.size(),
          "adam_step: state does not match the parameter list");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].shape() == state.m[i].shape(), "adam_step: moment shape drifted");
    Tensor param = params[i];  // shared handle; updates reach the caller's tensor
    const auto g = param.grad();
    auto p = param.mutable_data();
    auto m = state.m[i].mutable_data();
    auto v = state.v[i].mutable_data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * static_cast<real>(mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

// ---- training ----

std::vector<std::filesystem::path> list_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("list_dataset: " + dir.string() + " is not a directory");
  }
  std::vector<std::filesystem::path> cases;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".crsv") {
      cases.push_back(entry.path());
    }
  }
  std::sort(cases.begin(), cases.end());
  return cases;
}

namespace {

double mean_wt_dice(const std::vector<std::size_t>& idx,
                    const std::vector<LabelMask>& gt_external,
                    const std::vector<Tensor>& inputs, const ModelParams& params) {
  const RegionSpec& wt = tumor_regions()[2];
  double total = 0.0;
  for (std::size_t i : idx) {
    Tensor probs = softmax(forward(inputs[i], params), 0);
    LabelMask pred = remap_labels(probs_to_mask(probs), LabelMap::internal_to_external);
    total += dice_coefficient(binarize_region(pred, wt), binarize_region(gt_external[i], wt));
  }
  return total / static_cast<double>(idx.size());
}

}  // namespace

TrainResult train(const std::vector<std::filesystem::path>& cases, const TrainConfig& config,
                  const std::filesystem::path& out_dir, std::ostream* progress) {
  validate(config);
  if (cases.empty()) throw IoError("train: no cases to train on");
  std::filesystem::create_directories(out_dir);

  std::vector<Tensor> inputs;
  std::vector<Tensor> onehots;
  std::vector<LabelMask> gt_external;
  for (const auto& path : cases) {
    auto [volume, mask] = read_raw(path);
    auto [pre, cropped] = preprocess_case(volume, mask, config.crop, config.clip);
    inputs.push_back(volume_to_tensor(pre));
    onehots.push_back(mask_to_onehot(remap_labels(cropped, LabelMap::external_to_internal),
                                     config.model.classes));
    gt_external.push_back(std::move(cropped));
  }

  std::vector<std::size_t> order(cases.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(config.seed);
  split_rng.shuffle(order);
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.split * static_cast<double>(order.size()))), 1,
      order.size());
  std::vector<std::size_t> train_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val_idx(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  const bool held_out = !val_idx.empty();
  if (!held_out) val_idx = train_idx;  // overfit runs validate on the training case

  ModelParams params = init_params(config.model, config.seed);
  auto registry = named_params(params);
  std::vector<Tensor> tensors;
  tensors.reserve(registry.size());
  for (auto& [name, tensor] : registry) tensors.push_back(tensor);
  AdamState adam = make_adam(tensors);

  Rng order_rng(config.seed + 1);
  Rng vat_rng(config.seed + 2);
  Rng drop_rng(config.seed + 3);
  const bool dropout = config.model.drop_rate > 0.0;
  ForwardContext train_ctx{dropout ? &drop_rng : nullptr, config.model.drop_rate};
  const ModelFn train_fn = [&](const Tensor& x) { return forward(x, params, train_ctx); };
  const ModelFn eval_fn = [&](const Tensor& x) { return forward(x, params); };

  std::ofstream log_file(out_dir / "train_log.csv");
  if (!log_file) throw IoError("train: cannot write " + (out_dir / "train_log.csv").string());
  log_file << "epoch,step,lr,dice,ce,vat,total\n";

  TrainResult result;
  result.best_checkpoint = out_dir / "best.crck";
  const std::int64_t total_steps = config.epochs * static_cast<std::int64_t>(train_idx.size());
  std::int64_t global_step = 0;

  for (std::int64_t epoch = 0; epoch < config.epochs; ++epoch) {
    order_rng.shuffle(train_idx);
    for (std::size_t i : train_idx) {
      const Tensor& x = inputs[i];
      const Tensor& y = onehots[i];

      Tensor probs = softmax(train_fn(x), 0);
      // background is excluded from the overlap term so the foreground
      // classes drive it; cross-entropy still covers every class
      Tensor dice = dice_loss(probs, y, 1e-5, false);
      Tensor ce = ce_loss(probs, y);
      LossReport report;
      report.dice = dice.item();
      report.ce = ce.item();
      report.objective = add(dice, ce);
      if (config.vat.enabled && config.vat.lambda > 0.0) {
        // the adversarial search runs the model in evaluation mode
        Tensor target =
            config.vat.anchor == VatAnchor::kLabel ? y.detach() : probs.detach();
        Tensor r_adv = vat_perturbation(eval_fn, x, target, config.vat, vat_rng);
        Tensor vat = vat_loss(train_fn, x, target, r_adv);
        report.vat = vat.item();
        report.objective = add(report.objective, mul_scalar(vat, config.vat.lambda));
      }
      report.total = report.objective.item();
      if (!std::isfinite(report.total)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                           ", step " + std::to_string(global_step));
      }

      const real lr = poly_lr(global_step, total_steps, config.lr, config.poly_power);
      zero_grad(tensors);  // clears gradients the adversarial search left behind
      backward(report.objective);
      adam_step(tensors, adam, lr);

      log_file << epoch << ',' << global_step << ',' << lr << ',' << report.dice << ','
               << report.ce << ',' << report.vat << ',' << report.total << '\n';
      if (progress) {
        *progress << "epoch " << epoch << " step " << global_step << " lr " << lr << " total "
                  << report.total << '\n';
      }
      report.objective = Tensor();  // the log keeps scalars, not the step's graph
      result.log.push_back({epoch, global_step, lr, report});
      ++global_step;
    }

    const double dice_now = mean_wt_dice(val_idx, gt_external, inputs, params);
    if (progress) {
      *progress << "epoch " << epoch << (held_out ? " held-out" : " training") << " WT dice "
                << dice_now << '\n';
    }
    if (dice_now > result.best_dice) {
      result.best_dice = dice_now;
      result.best_epoch = epoch;
      save_checkpoint(params, result.best_checkpoint.string());
    }
    if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
      save_checkpoint(params,
                      (out_dir / ("epoch_" + std::to_string(epoch) + ".crck")).string());
    }
  }
  if (!log_file.flush()) throw IoError("train: failed to write the loss log");
  return result;
}

// ---- inference ----

namespace {

std::vector<std::int64_t> tile_positions(std::int64_t dim, std::int64_t patch,
                                         std::int64_t stride) {
  std::vector<std::int64_t> pos;
  for (std::int64_t p = 0;; p += stride) {
    if (p + patch >= dim) {
      pos.push_back(dim - patch);
      break;
    }
    pos.push_back(p);
  }
  return pos;
}

}  // namespace

LabelMask sliding_window_infer(const Volume& volume, const ModelParams& params,
                               const std::array<std::int64_t, 3>& patch, double overlap) {
  require(overlap >= 0.0 && overlap < 1.0, "sliding_window_infer: overlap must be in [0,1)");
  const std::int64_t channels = channel_count(volume);
  require(channels == params.config.in_channels,
          "sliding_window_infer: volume has " + std::to_string(channels) + " channels, model needs " +
              std::to_string(params.config.in_channels));
  predict_logits_shape(params.config, patch);

  const std::array<std::int64_t, 3> dims = {volume.d, volume.h, volume.w};
  std::array<std::int64_t, 3> padded = dims;
  for (int a = 0; a < 3; ++a) padded[a] = std::max(dims[a], patch[a]);
  const Volume work = (padded == dims) ? volume : crop_volume(volume, {0, 0, 0}, padded);

  std::array<std::vector<std::int64_t>, 3> pos;
  for (int a = 0; a < 3; ++a) {
    const auto stride = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::llround(static_cast<double>(patch[a]) * (1.0 - overlap))));
    pos[a] = tile_positions(padded[a], patch[a], stride);
  }

  const std::int64_t k = params.config.classes;
  const std::int64_t grid = padded[0] * padded[1] * padded[2];
  std::vector<double> acc(static_cast<std::size_t>(k * grid), 0.0);
  std::vector<std::int32_t> cover(static_cast<std::size_t>(grid), 0);

  for (std::int64_t pz : pos[0]) {
    for (std::int64_t py : pos[1]) {
      for (std::int64_t px : pos[2]) {
        const Volume tile = crop_volume(work, {pz, py, px}, patch);
        const Tensor probs = softmax(forward(volume_to_tensor(tile), params), 0);
        const auto pd = probs.data();
        const std::int64_t tile_grid = patch[0] * patch[1] * patch[2];
        for (std::int64_t z = 0; z < patch[0]; ++z) {
          for (std::int64_t y = 0; y < patch[1]; ++y) {
            for (std::int64_t x = 0; x < patch[2]; ++x) {
              const std::int64_t dst = ((pz + z) * padded[1] + py + y) * padded[2] + px + x;
              const std::int64_t src = (z * patch[1] + y) * patch[2] + x;
              for (std::int64_t c = 0; c < k; ++c) {
                acc[static_cast<std::size_t>(c * grid + dst)] +=
                    pd[static_cast<std::size_t>(c * tile_grid + src)];
              }
              cover[static_cast<std::size_t>(dst)] += 1;
            }
          }
        }
      }
    }
  }

  LabelMask out;
  out.d = dims[0];
  out.h = dims[1];
  out.w = dims[2];
  out.labels.assign(static_cast<std::size_t>(out.grid_size()), 0);
  for (std::int64_t z = 0; z < dims[0]; ++z) {
    for (std::int64_t y = 0; y < dims[1]; ++y) {
      for (std::int64_t x = 0; x < dims[2]; ++x) {
        const std::int64_t at = (z * padded[1] + y) * padded[2] + x;
        const auto n = static_cast<double>(cover[static_cast<std::size_t>(at)]);
        std::int64_t best = 0;
        double best_v = acc[static_cast<std::size_t>(at)] / n;
        for (std::int64_t c = 1; c < k; ++c) {
          const double v = acc[static_cast<std::size_t>(c * grid + at)] / n;
          if (v > best_v) {
            best = c;
            best_v = v;
          }
        }
        out.at(z, y, x) = static_cast<std::uint8_t>(best);
      }
    }
  }
  return out;
}

// ---- reporting ----

namespace {

struct SliceAxes {
  std::int64_t rows, cols;           // image extents
  std::array<std::int64_t, 3> map;   // (slice, row, col) -> (z,y,x) axis ids
};

SliceAxes slice_axes(std::int64_t axis, const LabelMask& m) {
  const std::array<std::int64_t, 3> dims = {m.d, m.h, m.w};
  if (axis == 0) return {dims[1], dims[2], {0, 1, 2}};
  if (axis == 1) return {dims[0], dims[2], {1, 0, 2}};
  if (axis == 2) return {dims[0], dims[1], {2, 0, 1}};
  throw std::invalid_argument("export_slices: axis must be 0, 1, or 2");
}

void write_ppm(const std::filesystem::path& path, std::int64_t rows, std::int64_t cols,
               const std::vector<std::uint8_t>& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("export_slices: cannot open " + path.string());
  out << "P6\n" << cols << ' ' << rows << "\n255\n";
  out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  if (!out.flush()) throw IoError("export_slices: write failed for " + path.string());
}

void overlay_slice(const Volume& volume, const LabelMask& labels, std::int64_t axis,
                   std::int64_t index, std::int64_t channel, real lo, real range,
                   const std::filesystem::path& path) {
  const SliceAxes ax = slice_axes(axis, labels);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(ax.rows * ax.cols * 3));
  for (std::int64_t r = 0; r < ax.rows; ++r) {
    for (std::int64_t c = 0; c < ax.cols; ++c) {
      std::array<std::int64_t, 3> zyx{};
      zyx[static_cast<std::size_t>(ax.map[0])] = index;
      zyx[static_cast<std::size_t>(ax.map[1])] = r;
      zyx[static_cast<std::size_t>(ax.map[2])] = c;
      const real v = volume.at(channel, zyx[0], zyx[1], zyx[2]);
      const auto gray = static_cast<std::int64_t>(
          std::clamp((v - lo) / range, static_cast<real>(0), static_cast<real>(1)) * 255.0);
      std::int64_t red = gray, green = gray, blue = gray;
      switch (labels.at(zyx[0], zyx[1], zyx[2])) {
        case 1:  // NET/NCR
          red = gray / 2, green = gray / 2, blue = (gray + 510) / 3;
          break;
        case 2:  // ED
          red = (gray + 510) / 3, green = (gray + 510) / 3, blue = gray / 2;
          break;
        case 4:  // ET
          red = (gray + 510) / 3, green = gray / 2, blue = gray / 2;
          break;
        default:
          break;
      }
      const auto base = static_cast<std::size_t>((r * ax.cols + c) * 3);
      rgb[base] = static_cast<std::uint8_t>(red);
      rgb[base + 1] = static_cast<std::uint8_t>(green);
      rgb[base + 2] = static_cast<std::uint8_t>(blue);
    }
  }
  write_ppm(path, ax.rows, ax.cols, rgb);
}

}  // namespace

void export_slices(const Volume& volume, const LabelMask& pred, const LabelMask* gt,
                   std::int64_t axis, const std::filesystem::path& dir, std::int64_t every,
                   std::int64_t background_channel) {
  require(volume.d == pred.d && volume.h == pred.h && volume.w == pred.w,
          "export_slices: volume and mask grids differ");
  if (gt) {
    require(gt->d == pred.d && gt->h == pred.h && gt->w == pred.w,
            "export_slices: ground truth grid differs");
  }
  require(every >= 1, "export_slices: every must be at least 1");
  const std::int64_t channels = channel_count(volume);
  require(background_channel >= 0 && background_channel < channels,
          "export_slices: background channel out of range");
  (void)slice_axes(axis, pred);  // validates the axis before any file is written
  std::filesystem::create_directories(dir);

  // global window keeps brightness stable across slices
  real lo = std::numeric_limits<real>::infinity();
  real hi = -lo;
  const std::int64_t grid = volume.grid_size();
  for (std::int64_t i = 0; i < grid; ++i) {
    const real v = volume.voxels[static_cast<std::size_t>(background_channel * grid + i)];
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const real range = hi > lo ? hi - lo : static_cast<real>(1);

  const std::array<std::int64_t, 3> dims = {pred.d, pred.h, pred.w};
  const std::int64_t count = dims[static_cast<std::size_t>(axis)];
  for (std::int64_t i = 0; i < count; i += every) {
    std::ostringstream name;
    name << "slice_";
    name.width(4);
    name.fill('0');
    name << i;
    overlay_slice(volume, pred, axis, i, background_channel, lo, range,
                  dir / (name.str() + "_pred.ppm"));
    if (gt) {
      overlay_slice(volume, *gt, axis, i, background_channel, lo, range,
                    dir / (name.str() + "_gt.ppm"));
    }
  }
}

// ---- config file ----

namespace {

using nlohmann::json;

void reject_unknown(const json& node, std::initializer_list<const char*> allowed,
                    const char* scope) {
  for (const auto& [key, value] : node.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end()) {
      throw FormatError(std::string("config: unknown key \"") + key + "\" in " + scope);
    }
  }
}

template <typename T>
void read_field(const json& node, const char* key, T& out) {
  if (!node.contains(key)) return;
  try {
    out = node.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: bad value for \"") + key + "\": " + e.what());
  }
}

void read_dims3(const json& node, const char* key, std::array<std::int64_t, 3>& out) {
  if (!node.contains(key)) return;
  std::vector<std::int64_t> v;
  read_field(node, key, v);
  if (v.size() != 3) throw FormatError(std::string("config: \"") + key + "\" needs 3 entries");
  out = {v[0], v[1], v[2]};
}

}  // namespace

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config: cannot open " + path.string());
  json root;
  try {
    root = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  if (!root.is_object()) throw FormatError("config: top level must be an object");
  reject_unknown(root,
                 {"lr", "batch", "epochs", "poly_power", "seed", "split", "crop",
                  "checkpoint_every", "clip", "vat", "model"},
                 "the top level");

  TrainConfig cfg;
  read_field(root, "lr", cfg.lr);
  read_field(root, "batch", cfg.batch);
  read_field(root, "epochs", cfg.epochs);
  read_field(root, "poly_power", cfg.poly_power);
  read_field(root, "seed", cfg.seed);
  read_field(root, "split", cfg.split);
  read_dims3(root, "crop", cfg.crop);
  read_field(root, "checkpoint_every", cfg.checkpoint_every);
  read_field(root, "clip", cfg.clip);

  if (root.contains("vat")) {
    const json& v = root.at("vat");
    if (!v.is_object()) throw FormatError("config: \"vat\" must be an object");
    reject_unknown(v, {"lambda", "epsilon", "xi", "n_power", "enabled", "anchor"}, "\"vat\"");
    read_field(v, "lambda", cfg.vat.lambda);
    read_field(v, "epsilon", cfg.vat.epsilon);
    read_field(v, "xi", cfg.vat.xi);
    read_field(v, "n_power", cfg.vat.n_power);
    read_field(v, "enabled", cfg.vat.enabled);
    if (v.contains("anchor")) {
      std::string anchor;
      read_field(v, "anchor", anchor);
      if (anchor == "label") {
        cfg.vat.anchor = VatAnchor::kLabel;
      } else if (anchor == "prediction") {
        cfg.vat.anchor = VatAnchor::kPrediction;
      } else {
        throw FormatError("config: \"anchor\" must be \"label\" or \"prediction\"");
      }
    }
  }

  if (root.contains("model")) {
    const json& m = root.at("model");
    if (!m.is_object()) throw FormatError("config: \"model\" must be an object");
    reject_unknown(m,
                   {"in_channels", "classes", "embed_dim", "kernel_p", "kernel_m", "depths",
                    "heads", "stripes", "window", "mlp_ratio", "fusion_alpha", "drop_rate"},
                   "\"model\"");
    read_field(m, "in_channels", cfg.model.in_channels);
    read_field(m, "classes", cfg.model.classes);
    read_field(m, "embed_dim", cfg.model.embed_dim);
    read_field(m, "kernel_p", cfg.model.kernel.p);
    read_field(m, "kernel_m", cfg.model.kernel.m);
    read_field(m, "depths", cfg.model.depths);
    read_field(m, "heads", cfg.model.heads);
    read_field(m, "stripes", cfg.model.stripes);
    read_field(m, "window", cfg.model.window);
    read_field(m, "mlp_ratio", cfg.model.mlp_ratio);
    read_field(m, "fusion_alpha", cfg.model.fusion_alpha);
    read_field(m, "drop_rate", cfg.model.drop_rate);
  }
  return cfg;
}

void save_train_config(const TrainConfig& config, const std::filesystem::path& path) {
  json root;
  root["lr"] = config.lr;
  root["batch"] = config.batch;
  root["epochs"] = config.epochs;
  root["poly_power"] = config.poly_power;
  root["seed"] = config.seed;
  root["split"] = config.split;
  root["crop"] = {config.crop[0], config.crop[1], config.crop[2]};
  root["checkpoint_every"] = config.checkpoint_every;
  root["clip"] = config.clip;
  root["vat"] = {{"lambda", config.vat.lambda},
                 {"epsilon", config.vat.epsilon},
                 {"xi", config.vat.xi},
                 {"n_power", config.vat.n_power},
                 {"enabled", config.vat.enabled},
                 {"anchor", config.vat.anchor == VatAnchor::kLabel ? "label" : "prediction"}};
  root["model"] = {{"in_channels", config.model.in_channels},
                   {"classes", config.model.classes},
                   {"embed_dim", config.model.embed_dim},
                   {"kernel_p", config.model.kernel.p},
                   {"kernel_m", config.model.kernel.m},
                   {"depths", config.model.depths},
                   {"heads", config.model.heads},
                   {"stripes", config.model.stripes},
                   {"window", config.model.window},
                   {"mlp_ratio", config.model.mlp_ratio},
                   {"fusion_alpha", config.model.fusion_alpha},
                   {"drop_rate", config.model.drop_rate}};
  std::ofstream out(path);
  if (!out) throw IoError("config: cannot write " + path.string());
  out << root.dump(2) << '\n';
  if (!out.flush()) throw IoError("config: write failed for " + path.string());
}

}  // namespace crswin
