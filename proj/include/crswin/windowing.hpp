#pragma once

#include <array>
#include <cstdint>

#include "crswin/tensor.hpp"

namespace crswin {

// Token grids are rank-4 tensors (D, H, W, C), channels last.

enum class WindowKind { block, stripe_axis0, stripe_axis1, stripe_axis2 };

// Reversible decomposition of a token grid into equal windows. `window` holds
// the effective per-axis extents after clamping to the grid; stripes are
// expressed as windows spanning the full extent of the two off axes.
struct WindowLayout {
  WindowKind kind = WindowKind::block;
  std::array<std::int64_t, 3> grid{};    // original token extents
  std::array<std::int64_t, 3> padded{};  // extents seen by the partition
  std::array<std::int64_t, 3> window{};
  std::array<std::int64_t, 3> shift{};   // zero unless a shifted block layout

  std::array<std::int64_t, 3> counts() const {
    return {padded[0] / window[0], padded[1] / window[1], padded[2] / window[2]};
  }
  std::int64_t window_count() const {
    const auto c = counts();
    return c[0] * c[1] * c[2];
  }
  std::int64_t tokens_per_window() const { return window[0] * window[1] * window[2]; }
  bool has_padding() const { return padded != grid; }
  bool has_shift() const { return shift != std::array<std::int64_t, 3>{0, 0, 0}; }
};

// Window extents are clamped per axis to the grid; the clamped extent must
// then divide the grid exactly unless `allow_pad`. Shift components must be
// smaller than the effective window and are forced to zero on single-window
// axes; shifted layouts never pad.
WindowLayout make_block_layout(const std::array<std::int64_t, 3>& grid,
                               const std::array<std::int64_t, 3>& window,
                               const std::array<std::int64_t, 3>& shift = {0, 0, 0},
                               bool allow_pad = false);
// axis: 0 = depth slabs, 1 = height slabs, 2 = width slabs.
WindowLayout make_stripe_layout(const std::array<std::int64_t, 3>& grid, int axis,
                                std::int64_t stripe_width, bool allow_pad = false);

// (D,H,W,C) -> (N, T, C) with N windows of T tokens in row-major window
// order; zero-pads to `layout.padded` first when the layout says so.
Tensor window_partition(const Tensor& grid, const WindowLayout& layout);
// Exact inverse; crops padding back off.
Tensor window_reverse(const Tensor& windows, const WindowLayout& layout);

// Toroidal roll of the three spatial axes, channels untouched.
Tensor cyclic_shift(const Tensor& grid, const std::array<std::int64_t, 3>& offsets);
Tensor inverse_cyclic_shift(const Tensor& grid, const std::array<std::int64_t, 3>& offsets);

// Additive attention mask (N, T, T): 0 where two tokens of a window shared a
// pre-shift region (and neither is padding), -1e9 otherwise. Zero-shift
// layouts without padding yield an all-zero mask.
Tensor shift_attention_mask(const WindowLayout& layout);

inline constexpr real kMaskNegative = -1e9;

// ---- patch-lattice resampling ----

// Embedding kernel (P, M, M) over (D, H, W).
struct PatchKernel {
  std::int64_t p = 2;
  std::int64_t m = 4;
};

// (C_in, D, H, W) -> (D/P, H/M, W/M, C); each token is the learned linear
// image of its P*M*M*C_in source voxels. weight: (P*M*M*C_in, C).
Tensor patch_embed(const Tensor& volume, PatchKernel kernel, const Tensor& weight,
                   const Tensor& bias);

// (D,H,W,C) -> (D/2,H/2,W/2,2C); concatenates each 2x2x2 neighborhood in
// (dz,dy,dx,c) row-major order, then weight: (8C, 2C).
Tensor patch_merge(const Tensor& grid, const Tensor& weight, const Tensor& bias);

// (D,H,W,C) -> (2D,2H,2W,C/2); weight: (C, 4C) read as a 2x2x2 neighborhood
// of C/2 channels. Exact shape inverse of patch_merge.
Tensor patch_expand(const Tensor& grid, const Tensor& weight, const Tensor& bias);

// (D,H,W,C) -> (D*P, H*M, W*M, C_out); weight: (C, P*M*M*C_out). Undoes the
// lattice coarsening of patch_embed.
Tensor final_expand(const Tensor& grid, PatchKernel kernel, const Tensor& weight,
                    const Tensor& bias);

}  // namespace crswin
