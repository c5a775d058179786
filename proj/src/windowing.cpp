#include "crswin/windowing.hpp"

#include <string>

namespace crswin {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

std::string triple_str(const std::array<std::int64_t, 3>& a) {
  return "(" + std::to_string(a[0]) + "," + std::to_string(a[1]) + "," + std::to_string(a[2]) +
         ")";
}

void check_grid_tensor(const Tensor& grid, const WindowLayout& layout, const char* op) {
  require(grid.rank() == 4, std::string(op) + ": token grid must be rank 4, got " +
                                shape_str(grid.shape()));
  for (int i = 0; i < 3; ++i) {
    require(grid.extent(i) == layout.grid[static_cast<std::size_t>(i)],
            std::string(op) + ": grid " + shape_str(grid.shape()) +
                " does not match layout extents " + triple_str(layout.grid));
  }
}

}  // namespace

WindowLayout make_block_layout(const std::array<std::int64_t, 3>& grid,
                               const std::array<std::int64_t, 3>& window,
                               const std::array<std::int64_t, 3>& shift, bool allow_pad) {
  WindowLayout layout;
  layout.kind = WindowKind::block;
  layout.grid = grid;
  for (std::size_t i = 0; i < 3; ++i) {
    require(grid[i] >= 1, "make_block_layout: grid extents must be positive, got " +
                              triple_str(grid));
    require(window[i] >= 1, "make_block_layout: window extents must be positive, got " +
                                triple_str(window));
    const std::int64_t eff = std::min(window[i], grid[i]);
    layout.window[i] = eff;
    if (grid[i] % eff == 0) {
      layout.padded[i] = grid[i];
    } else {
      require(allow_pad, "make_block_layout: window " + triple_str(window) +
                             " (effective " + std::to_string(eff) + ") does not divide grid " +
                             triple_str(grid) + " on axis " + std::to_string(i));
      layout.padded[i] = (grid[i] / eff + 1) * eff;
    }
    require(shift[i] >= 0 && shift[i] < eff,
            "make_block_layout: shift " + triple_str(shift) + " must be in [0, window) " +
                triple_str(layout.window));
    layout.shift[i] = (layout.padded[i] == eff) ? 0 : shift[i];
  }
  require(!(layout.has_shift() && layout.has_padding()),
          "make_block_layout: shifted windows require window-divisible extents, got grid " +
              triple_str(grid) + " window " + triple_str(layout.window));
  return layout;
}

WindowLayout make_stripe_layout(const std::array<std::int64_t, 3>& grid, int axis,
                                std::int64_t stripe_width, bool allow_pad) {
  require(axis >= 0 && axis < 3, "make_stripe_layout: axis must be 0, 1, or 2");
  require(stripe_width >= 1, "make_stripe_layout: stripe width must be positive");
  std::array<std::int64_t, 3> window = grid;
  window[static_cast<std::size_t>(axis)] = std::min(stripe_width, grid[static_cast<std::size_t>(axis)]);
  WindowLayout layout = make_block_layout(grid, window, {0, 0, 0}, allow_pad);
  layout.kind = axis == 0   ? WindowKind::stripe_axis0
                : axis == 1 ? WindowKind::stripe_axis1
                            : WindowKind::stripe_axis2;
  return layout;
}

Tensor window_partition(const Tensor& grid, const WindowLayout& layout) {
  check_grid_tensor(grid, layout, "window_partition");
  const std::int64_t c = grid.extent(3);
  Tensor t = grid;
  if (layout.has_padding()) {
    t = pad(t, {0, 0, 0, 0},
            {layout.padded[0] - layout.grid[0], layout.padded[1] - layout.grid[1],
             layout.padded[2] - layout.grid[2], 0});
  }
  const auto n = layout.counts();
  const auto& w = layout.window;
  t = reshape(t, {n[0], w[0], n[1], w[1], n[2], w[2], c});
  t = permute(t, {0, 2, 4, 1, 3, 5, 6});
  return reshape(t, {layout.window_count(), layout.tokens_per_window(), c});
}

Tensor window_reverse(const Tensor& windows, const WindowLayout& layout) {
  require(windows.rank() == 3, "window_reverse: windows must be rank 3, got " +
                                   shape_str(windows.shape()));
  require(windows.extent(0) == layout.window_count() &&
              windows.extent(1) == layout.tokens_per_window(),
          "window_reverse: windows " + shape_str(windows.shape()) +
              " do not match layout with " + std::to_string(layout.window_count()) +
              " windows of " + std::to_string(layout.tokens_per_window()) + " tokens");
  const std::int64_t c = windows.extent(2);
  const auto n = layout.counts();
  const auto& w = layout.window;
  Tensor t = reshape(windows, {n[0], n[1], n[2], w[0], w[1], w[2], c});
  t = permute(t, {0, 3, 1, 4, 2, 5, 6});
  t = reshape(t, {layout.padded[0], layout.padded[1], layout.padded[2], c});
  if (layout.has_padding()) {
    t = crop(t, {0, 0, 0, 0}, {layout.grid[0], layout.grid[1], layout.grid[2], c});
  }
  return t;
}

Tensor cyclic_shift(const Tensor& grid, const std::array<std::int64_t, 3>& offsets) {
  require(grid.rank() == 4, "cyclic_shift: token grid must be rank 4, got " +
                                shape_str(grid.shape()));
  return roll(grid, {offsets[0], offsets[1], offsets[2], 0});
}

Tensor inverse_cyclic_shift(const Tensor& grid, const std::array<std::int64_t, 3>& offsets) {
  return cyclic_shift(grid, {-offsets[0], -offsets[1], -offsets[2]});
}

Tensor shift_attention_mask(const WindowLayout& layout) {
  const std::int64_t t = layout.tokens_per_window();
  const std::int64_t n = layout.window_count();

  // Region ids per position of the already-shifted grid. Axes with shift
  // contribute the classic three slabs [0, e-w), [e-w, e-s), [e-s, e): the
  // first covers every fully interior window, the other two split the last
  // window at the wrap seam. Padding (never combined with shift) gets a
  // sentinel so real tokens never attend into it.
  std::array<std::vector<std::int64_t>, 3> slab;
  for (std::size_t a = 0; a < 3; ++a) {
    const std::int64_t e = layout.padded[a];
    const std::int64_t w = layout.window[a];
    const std::int64_t s = layout.shift[a];
    slab[a].resize(static_cast<std::size_t>(e), 0);
    if (s > 0) {
      for (std::int64_t i = 0; i < e; ++i) {
        slab[a][static_cast<std::size_t>(i)] = i < e - w ? 0 : (i < e - s ? 1 : 2);
      }
    }
  }
  Tensor ids = Tensor::zeros({layout.padded[0], layout.padded[1], layout.padded[2], 1});
  {
    auto buf = ids.mutable_data();
    std::size_t flat = 0;
    for (std::int64_t z = 0; z < layout.padded[0]; ++z) {
      for (std::int64_t y = 0; y < layout.padded[1]; ++y) {
        for (std::int64_t x = 0; x < layout.padded[2]; ++x, ++flat) {
          const bool is_pad = z >= layout.grid[0] || y >= layout.grid[1] || x >= layout.grid[2];
          if (is_pad) {
            buf[flat] = -1.0;
          } else {
            buf[flat] = static_cast<real>(
                (slab[0][static_cast<std::size_t>(z)] * 3 + slab[1][static_cast<std::size_t>(y)]) *
                    3 +
                slab[2][static_cast<std::size_t>(x)]);
          }
        }
      }
    }
  }
  // Partition the id grid exactly like the features, on the already padded
  // extents.
  WindowLayout id_layout = layout;
  id_layout.grid = layout.padded;
  Tensor id_windows = window_partition(ids, id_layout);

  Tensor mask = Tensor::zeros({n, t, t});
  auto out = mask.mutable_data();
  auto idv = id_windows.data();
  for (std::int64_t win = 0; win < n; ++win) {
    const real* wid = idv.data() + win * t;
    real* wm = out.data() + win * t * t;
    for (std::int64_t i = 0; i < t; ++i) {
      for (std::int64_t j = 0; j < t; ++j) {
        const bool same = wid[i] == wid[j] && wid[i] >= 0.0;
        const bool both_pad = wid[i] < 0.0 && wid[j] < 0.0;
        wm[i * t + j] = (same || both_pad) ? 0.0 : kMaskNegative;
      }
    }
  }
  return mask;
}

// ---- patch-lattice resampling ----

Tensor patch_embed(const Tensor& volume, PatchKernel kernel, const Tensor& weight,
                   const Tensor& bias) {
  require(volume.rank() == 4, "patch_embed: volume must be (C_in, D, H, W), got " +
                                  shape_str(volume.shape()));
  const std::int64_t cin = volume.extent(0);
  const std::int64_t d = volume.extent(1), h = volume.extent(2), w = volume.extent(3);
  require(kernel.p >= 1 && kernel.m >= 1, "patch_embed: kernel extents must be positive");
  require(d % kernel.p == 0 && h % kernel.m == 0 && w % kernel.m == 0,
          "patch_embed: volume " + shape_str(volume.shape()) + " not divisible by kernel (" +
              std::to_string(kernel.p) + "," + std::to_string(kernel.m) + "," +
              std::to_string(kernel.m) + ")");
  const std::int64_t dp = d / kernel.p, hm = h / kernel.m, wm = w / kernel.m;
  Tensor t = reshape(volume, {cin, dp, kernel.p, hm, kernel.m, wm, kernel.m});
  t = permute(t, {1, 3, 5, 2, 4, 6, 0});
  t = reshape(t, {dp, hm, wm, kernel.p * kernel.m * kernel.m * cin});
  return linear(t, weight, bias);
}

Tensor patch_merge(const Tensor& grid, const Tensor& weight, const Tensor& bias) {
  require(grid.rank() == 4, "patch_merge: token grid must be rank 4, got " +
                                shape_str(grid.shape()));
  const std::int64_t d = grid.extent(0), h = grid.extent(1), w = grid.extent(2);
  const std::int64_t c = grid.extent(3);
  require(d % 2 == 0 && h % 2 == 0 && w % 2 == 0,
          "patch_merge: all spatial extents must be even, got " + shape_str(grid.shape()));
  Tensor t = reshape(grid, {d / 2, 2, h / 2, 2, w / 2, 2, c});
  t = permute(t, {0, 2, 4, 1, 3, 5, 6});
  t = reshape(t, {d / 2, h / 2, w / 2, 8 * c});
  return linear(t, weight, bias);
}

Tensor patch_expand(const Tensor& grid, const Tensor& weight, const Tensor& bias) {
  require(grid.rank() == 4, "patch_expand: token grid must be rank 4, got " +
                                shape_str(grid.shape()));
  const std::int64_t d = grid.extent(0), h = grid.extent(1), w = grid.extent(2);
  const std::int64_t c = grid.extent(3);
  require(c % 2 == 0, "patch_expand: channel count must be even, got " +
                          shape_str(grid.shape()));
  Tensor t = linear(grid, weight, bias);  // (d, h, w, 4c)
  require(t.extent(3) == 4 * c, "patch_expand: weight must map C to 4C, got " +
                                    shape_str(weight.shape()));
  t = reshape(t, {d, h, w, 2, 2, 2, c / 2});
  t = permute(t, {0, 3, 1, 4, 2, 5, 6});
  return reshape(t, {2 * d, 2 * h, 2 * w, c / 2});
}

Tensor final_expand(const Tensor& grid, PatchKernel kernel, const Tensor& weight,
                    const Tensor& bias) {
  require(grid.rank() == 4, "final_expand: token grid must be rank 4, got " +
                                shape_str(grid.shape()));
  const std::int64_t d = grid.extent(0), h = grid.extent(1), w = grid.extent(2);
  Tensor t = linear(grid, weight, bias);  // (d, h, w, P*M*M*c_out)
  const std::int64_t volume = kernel.p * kernel.m * kernel.m;
  require(t.extent(3) % volume == 0,
          "final_expand: weight output " + shape_str(weight.shape()) +
              " is not a multiple of the kernel volume");
  const std::int64_t cout = t.extent(3) / volume;
  t = reshape(t, {d, h, w, kernel.p, kernel.m, kernel.m, cout});
  t = permute(t, {0, 3, 1, 4, 2, 5, 6});
  return reshape(t, {d * kernel.p, h * kernel.m, w * kernel.m, cout});
}

}  // namespace crswin
