#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <vector>

#include "crswin/windowing.hpp"
#include "support/testutil.hpp"

using namespace crswin;
using testutil::rand_tensor;

namespace {

// Independent connectivity oracle. A shifted-grid position ps holds original
// position (ps + shift) mod extent; two tokens of one window kept a genuine
// spatial relationship iff on every axis their original coordinates differ by
// the same amount as their in-window coordinates, i.e. no wrap seam lies
// between them. Anything else must be masked.
bool oracle_same_region(const WindowLayout& layout,
                        const std::array<std::int64_t, 3>& win_coord,
                        const std::array<std::int64_t, 3>& tok_i,
                        const std::array<std::int64_t, 3>& tok_j) {
  for (std::size_t a = 0; a < 3; ++a) {
    const std::int64_t e = layout.grid[a];
    const std::int64_t s = layout.shift[a];
    const std::int64_t pi = win_coord[a] * layout.window[a] + tok_i[a];
    const std::int64_t pj = win_coord[a] * layout.window[a] + tok_j[a];
    const std::int64_t oi = (pi + s) % e;
    const std::int64_t oj = (pj + s) % e;
    if (oj - oi != pj - pi) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("block partition shape arithmetic") {
  auto layout = make_block_layout({4, 4, 4}, {2, 2, 2});
  CHECK(layout.window_count() == 8);
  CHECK(layout.tokens_per_window() == 8);
  Rng rng(1);
  Tensor grid = rand_tensor({4, 4, 4, 3}, rng, 1.0, false);
  Tensor windows = window_partition(grid, layout);
  CHECK(windows.shape() == Shape{8, 8, 3});
}

TEST_CASE("window equal to grid gives one row-major window") {
  auto layout = make_block_layout({2, 2, 2}, {2, 2, 2});
  CHECK(layout.window_count() == 1);
  Tensor grid = Tensor::zeros({2, 2, 2, 1});
  for (std::int64_t i = 0; i < 8; ++i) grid.mutable_data()[static_cast<std::size_t>(i)] = i;
  Tensor windows = window_partition(grid, layout);
  for (std::int64_t i = 0; i < 8; ++i) {
    CHECK(windows.data()[static_cast<std::size_t>(i)] == static_cast<real>(i));
  }
}

TEST_CASE("oversized window clamps to the grid") {
  auto layout = make_block_layout({2, 3, 2}, {8, 3, 8});
  CHECK(layout.window == std::array<std::int64_t, 3>{2, 3, 2});
  CHECK(layout.window_count() == 1);
  // a shift on a single-window axis is forced off
  auto shifted = make_block_layout({2, 4, 4}, {2, 2, 2}, {1, 1, 1});
  CHECK(shifted.shift[0] == 0);
  CHECK(shifted.shift[1] == 1);
}

TEST_CASE("invalid layouts are rejected") {
  CHECK_THROWS_AS(make_block_layout({5, 4, 4}, {2, 2, 2}), ShapeError);
  CHECK_THROWS_AS(make_block_layout({4, 4, 4}, {2, 2, 2}, {2, 0, 0}), ShapeError);
  CHECK_THROWS_AS(make_stripe_layout({4, 4, 4}, 3, 1), ShapeError);
  CHECK_THROWS_AS(make_stripe_layout({4, 5, 4}, 1, 2), ShapeError);
  // padding makes the indivisible case legal
  auto padded = make_block_layout({5, 4, 4}, {2, 2, 2}, {0, 0, 0}, true);
  CHECK(padded.padded == std::array<std::int64_t, 3>{6, 4, 4});
}

TEST_CASE("partition and reverse round trip on random shapes") {
  Rng rng(2);
  for (int it = 0; it < 60; ++it) {
    std::array<std::int64_t, 3> grid_dims;
    std::array<std::int64_t, 3> window_dims;
    for (int a = 0; a < 3; ++a) {
      window_dims[static_cast<std::size_t>(a)] = rng.uniform_int(1, 4);
      grid_dims[static_cast<std::size_t>(a)] =
          window_dims[static_cast<std::size_t>(a)] * rng.uniform_int(1, 3);
    }
    const std::int64_t c = rng.uniform_int(1, 5);
    Tensor grid = rand_tensor({grid_dims[0], grid_dims[1], grid_dims[2], c}, rng, 1.0, false);
    auto layout = make_block_layout(grid_dims, window_dims);
    Tensor back = window_reverse(window_partition(grid, layout), layout);
    CHECK(testutil::max_abs_diff(grid, back) == 0.0);
  }
}

TEST_CASE("padded partition reverse crops exactly") {
  Rng rng(3);
  for (int it = 0; it < 40; ++it) {
    std::array<std::int64_t, 3> grid_dims;
    std::array<std::int64_t, 3> window_dims;
    for (int a = 0; a < 3; ++a) {
      grid_dims[static_cast<std::size_t>(a)] = rng.uniform_int(1, 9);
      window_dims[static_cast<std::size_t>(a)] = rng.uniform_int(1, 4);
    }
    const std::int64_t c = rng.uniform_int(1, 3);
    Tensor grid = rand_tensor({grid_dims[0], grid_dims[1], grid_dims[2], c}, rng, 1.0, false);
    auto layout = make_block_layout(grid_dims, window_dims, {0, 0, 0}, true);
    Tensor back = window_reverse(window_partition(grid, layout), layout);
    CHECK(back.shape() == grid.shape());
    CHECK(testutil::max_abs_diff(grid, back) == 0.0);
  }
}

TEST_CASE("stripe layouts") {
  auto whole = make_stripe_layout({4, 4, 4}, 0, 4);
  CHECK(whole.window_count() == 1);
  CHECK(whole.tokens_per_window() == 64);

  auto rows = make_stripe_layout({4, 4, 4}, 1, 1);
  CHECK(rows.window_count() == 4);
  CHECK(rows.tokens_per_window() == 16);
  CHECK(rows.window == std::array<std::int64_t, 3>{4, 1, 4});

  Rng rng(4);
  for (int it = 0; it < 30; ++it) {
    std::array<std::int64_t, 3> grid_dims;
    for (auto& e : grid_dims) e = rng.uniform_int(1, 6);
    const int axis = static_cast<int>(rng.uniform_int(0, 2));
    std::int64_t sw = rng.uniform_int(1, 6);
    const std::int64_t extent = grid_dims[static_cast<std::size_t>(axis)];
    if (extent % std::min(sw, extent) != 0) sw = 1;
    Tensor grid = rand_tensor({grid_dims[0], grid_dims[1], grid_dims[2], 2}, rng, 1.0, false);
    auto layout = make_stripe_layout(grid_dims, axis, sw);
    Tensor back = window_reverse(window_partition(grid, layout), layout);
    CHECK(testutil::max_abs_diff(grid, back) == 0.0);
  }
}

TEST_CASE("cyclic shift identities") {
  Rng rng(5);
  Tensor grid = rand_tensor({4, 4, 4, 2}, rng, 1.0, false);
  CHECK(testutil::max_abs_diff(grid, cyclic_shift(grid, {0, 0, 0})) == 0.0);
  Tensor round = inverse_cyclic_shift(cyclic_shift(grid, {1, 2, 3}), {1, 2, 3});
  CHECK(testutil::max_abs_diff(grid, round) == 0.0);
}

TEST_CASE("cyclic shift index map verified exhaustively on a 4^3 grid") {
  Tensor grid = Tensor::zeros({4, 4, 4, 1});
  for (std::int64_t i = 0; i < 64; ++i) grid.mutable_data()[static_cast<std::size_t>(i)] = i;
  const std::array<std::int64_t, 3> offsets = {1, 2, 3};
  Tensor shifted = cyclic_shift(grid, offsets);
  for (std::int64_t z = 0; z < 4; ++z) {
    for (std::int64_t y = 0; y < 4; ++y) {
      for (std::int64_t x = 0; x < 4; ++x) {
        const std::int64_t sz = ((z - offsets[0]) % 4 + 4) % 4;
        const std::int64_t sy = ((y - offsets[1]) % 4 + 4) % 4;
        const std::int64_t sx = ((x - offsets[2]) % 4 + 4) % 4;
        CHECK(shifted.at({z, y, x, 0}) == grid.at({sz, sy, sx, 0}));
      }
    }
  }
}

TEST_CASE("zero shift gives an all-zero mask") {
  auto layout = make_block_layout({4, 4, 4}, {2, 2, 2});
  Tensor mask = shift_attention_mask(layout);
  for (auto v : mask.data()) CHECK(v == 0.0);
}

TEST_CASE("1D shifted mask blocks pairs straddling the wrap boundary") {
  // length-4 axis, window 2, shift 1: after rolling by -1 the last window
  // holds original positions {3, 0}, which lie in different regions.
  auto layout = make_block_layout({1, 1, 4}, {1, 1, 2}, {0, 0, 1});
  Tensor mask = shift_attention_mask(layout);
  CHECK(mask.shape() == Shape{2, 2, 2});
  // first window: original positions {1, 2} in window coords after shift
  CHECK(mask.at({0, 0, 1}) == 0.0);
  CHECK(mask.at({0, 1, 0}) == 0.0);
  // second window: positions {3, 0} straddle the boundary
  CHECK(mask.at({1, 0, 1}) == kMaskNegative);
  CHECK(mask.at({1, 1, 0}) == kMaskNegative);
  CHECK(mask.at({1, 0, 0}) == 0.0);
  CHECK(mask.at({1, 1, 1}) == 0.0);
}

TEST_CASE("shift mask agrees with the brute-force region oracle") {
  Rng rng(6);
  for (int it = 0; it < 12; ++it) {
    std::array<std::int64_t, 3> window_dims;
    std::array<std::int64_t, 3> grid_dims;
    std::array<std::int64_t, 3> shift;
    for (int a = 0; a < 3; ++a) {
      window_dims[static_cast<std::size_t>(a)] = rng.uniform_int(2, 3);
      grid_dims[static_cast<std::size_t>(a)] =
          window_dims[static_cast<std::size_t>(a)] * rng.uniform_int(2, 3);
      shift[static_cast<std::size_t>(a)] =
          rng.uniform_int(1, window_dims[static_cast<std::size_t>(a)] - 1);
    }
    auto layout = make_block_layout(grid_dims, window_dims, shift);
    Tensor mask = shift_attention_mask(layout);
    const auto counts = layout.counts();
    const auto& w = layout.window;
    for (std::int64_t win = 0; win < layout.window_count(); ++win) {
      const std::array<std::int64_t, 3> wc = {win / (counts[1] * counts[2]),
                                              (win / counts[2]) % counts[1], win % counts[2]};
      for (std::int64_t i = 0; i < layout.tokens_per_window(); ++i) {
        const std::array<std::int64_t, 3> ti = {i / (w[1] * w[2]), (i / w[2]) % w[1], i % w[2]};
        for (std::int64_t j = 0; j < layout.tokens_per_window(); ++j) {
          const std::array<std::int64_t, 3> tj = {j / (w[1] * w[2]), (j / w[2]) % w[1],
                                                  j % w[2]};
          const bool same = oracle_same_region(layout, wc, ti, tj);
          CHECK(mask.at({win, i, j}) == (same ? 0.0 : kMaskNegative));
        }
      }
    }
  }
}

TEST_CASE("masked softmax rows still sum to one") {
  auto layout = make_block_layout({1, 4, 4}, {1, 2, 2}, {0, 1, 1});
  Tensor mask = shift_attention_mask(layout);
  Rng rng(7);
  Tensor scores = rand_tensor(mask.shape(), rng, 2.0, false);
  Tensor probs = softmax(add(scores, mask), -1);
  Tensor sums = sum_axis(probs, -1);
  for (auto v : sums.data()) CHECK(std::abs(v - 1.0) < 1e-6);
}

TEST_CASE("padding mask blocks attention into pad tokens") {
  auto layout = make_block_layout({1, 1, 3}, {1, 1, 2}, {0, 0, 0}, true);
  Tensor mask = shift_attention_mask(layout);
  CHECK(mask.shape() == Shape{2, 2, 2});
  // second window holds real token 2 and one pad slot
  CHECK(mask.at({1, 0, 1}) == kMaskNegative);
  CHECK(mask.at({1, 0, 0}) == 0.0);
  CHECK(mask.at({1, 1, 1}) == 0.0);  // pad-to-pad kept finite
}

TEST_CASE("patch_embed shape contract including the full-scale grid") {
  Rng rng(8);
  PatchKernel kernel{2, 4};
  const std::int64_t cin = 4, cdim = 48;
  Tensor weight = rand_tensor({kernel.p * kernel.m * kernel.m * cin, cdim}, rng, 0.05, false);
  Tensor bias = Tensor::zeros({cdim});
  Tensor volume = Tensor::zeros({cin, 128, 128, 128});
  Tensor grid = patch_embed(volume, kernel, weight, bias);
  CHECK(grid.shape() == Shape{64, 32, 32, 48});
}

TEST_CASE("patch_embed degenerate cases") {
  Rng rng(9);
  PatchKernel whole{4, 6};
  Tensor volume = rand_tensor({4, 4, 6, 6}, rng, 1.0, false);
  Tensor weight = rand_tensor({4 * 6 * 6 * 4, 5}, rng, 0.1, false);
  Tensor bias = Tensor::zeros({5});
  Tensor grid = patch_embed(volume, whole, weight, bias);
  CHECK(grid.shape() == Shape{1, 1, 1, 5});

  Tensor zero_w = Tensor::zeros({4 * 6 * 6 * 4, 5});
  Tensor zeros = patch_embed(volume, whole, zero_w, bias);
  for (auto v : zeros.data()) CHECK(v == 0.0);

  CHECK_THROWS_AS(patch_embed(volume, PatchKernel{3, 4}, weight, bias), ShapeError);
}

TEST_CASE("patch_embed token features are the row-major patch voxels") {
  // kernel (1,1,1): each token must equal weight applied to the 4 channel
  // values of its voxel, fixing the feature ordering convention.
  Tensor volume = Tensor::zeros({4, 1, 1, 2});
  for (std::int64_t c = 0; c < 4; ++c) {
    volume.mutable_data()[static_cast<std::size_t>(c * 2)] = static_cast<real>(c + 1);
    volume.mutable_data()[static_cast<std::size_t>(c * 2 + 1)] = static_cast<real>(10 * (c + 1));
  }
  Tensor weight = Tensor::zeros({4, 4});
  for (std::int64_t i = 0; i < 4; ++i) {
    weight.mutable_data()[static_cast<std::size_t>(i * 4 + i)] = 1.0;
  }
  Tensor grid = patch_embed(volume, PatchKernel{1, 1}, weight, Tensor::zeros({4}));
  CHECK(grid.shape() == Shape{1, 1, 2, 4});
  for (std::int64_t c = 0; c < 4; ++c) {
    CHECK(grid.at({0, 0, 0, c}) == static_cast<real>(c + 1));
    CHECK(grid.at({0, 0, 1, c}) == static_cast<real>(10 * (c + 1)));
  }
}

TEST_CASE("patch_merge shape and corner-token selection") {
  Rng rng(10);
  Tensor grid = rand_tensor({4, 8, 8, 48}, rng, 1.0, false);
  Tensor weight = rand_tensor({8 * 48, 96}, rng, 0.05, false);
  Tensor bias = Tensor::zeros({96});
  Tensor merged = patch_merge(grid, weight, bias);
  CHECK(merged.shape() == Shape{2, 4, 4, 96});

  // identity on the first 2C rows picks the (0,0,0) and (0,0,1) corner tokens
  Tensor sel = Tensor::zeros({8 * 48, 96});
  for (std::int64_t i = 0; i < 96; ++i) {
    sel.mutable_data()[static_cast<std::size_t>(i * 96 + i)] = 1.0;
  }
  Tensor picked = patch_merge(grid, sel, bias);
  for (std::int64_t c = 0; c < 48; ++c) {
    CHECK(picked.at({0, 0, 0, c}) == grid.at({0, 0, 0, c}));
    CHECK(picked.at({0, 0, 0, 48 + c}) == grid.at({0, 0, 1, c}));
    CHECK(picked.at({1, 2, 3, c}) == grid.at({2, 4, 6, c}));
  }
  CHECK_THROWS_AS(patch_merge(rand_tensor({3, 4, 4, 8}, rng, 1.0, false), weight, bias),
                  ShapeError);
}

TEST_CASE("patch_expand inverts merge shapes") {
  Rng rng(11);
  Tensor grid = rand_tensor({2, 4, 4, 96}, rng, 1.0, false);
  Tensor weight = rand_tensor({96, 4 * 96}, rng, 0.05, false);
  Tensor bias = Tensor::zeros({4 * 96});
  Tensor expanded = patch_expand(grid, weight, bias);
  CHECK(expanded.shape() == Shape{4, 8, 8, 48});

  Tensor small = rand_tensor({2, 2, 2, 4}, rng, 1.0, false);
  Tensor mw = rand_tensor({8 * 4, 8}, rng, 0.1, false);
  Tensor mb = Tensor::zeros({8});
  Tensor ew = rand_tensor({8, 32}, rng, 0.1, false);
  Tensor eb = Tensor::zeros({32});
  Tensor round = patch_expand(patch_merge(small, mw, mb), ew, eb);
  CHECK(round.shape() == small.shape());
}

TEST_CASE("final_expand restores full resolution") {
  Rng rng(12);
  PatchKernel kernel{2, 4};
  Tensor grid = rand_tensor({4, 4, 4, 12}, rng, 1.0, false);
  Tensor weight = rand_tensor({12, kernel.p * kernel.m * kernel.m * 12}, rng, 0.05, false);
  Tensor bias = Tensor::zeros({kernel.p * kernel.m * kernel.m * 12});
  Tensor full = final_expand(grid, kernel, weight, bias);
  CHECK(full.shape() == Shape{8, 16, 16, 12});
}

TEST_CASE("gradients flow through partition, shift, merge, and expand") {
  Rng rng(13);
  Tensor grid = rand_tensor({2, 4, 4, 4}, rng);
  Tensor mw = rand_tensor({8 * 4, 8}, rng, 0.2);
  Tensor mb = rand_tensor({8}, rng, 0.1);
  Tensor ew = rand_tensor({8, 32}, rng, 0.2);
  Tensor eb = rand_tensor({32}, rng, 0.1);
  auto layout = make_block_layout({2, 4, 4}, {2, 2, 2}, {1, 1, 1});
  auto res = testutil::check_gradients(
      [&] {
        Tensor shifted = cyclic_shift(grid, {-1, -1, -1});
        Tensor windows = window_partition(shifted, layout);
        Tensor back = inverse_cyclic_shift(window_reverse(windows, layout), {-1, -1, -1});
        Tensor merged = patch_merge(back, mw, mb);
        Tensor expanded = patch_expand(merged, ew, eb);
        return sum_all(mul(expanded, expanded));
      },
      {grid, mw, mb, ew, eb});
  CHECK(res.max_err < 1e-4);
}
