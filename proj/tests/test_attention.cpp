#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <vector>

#include "crswin/attention.hpp"
#include "crswin/windowing.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace crswin;
using testutil::check_gradients;
using testutil::max_abs_diff;
using testutil::oracle_csw_msa;
using testutil::oracle_sa_rows;
using testutil::oracle_w_msa;
using testutil::rand_tensor;

namespace {

Tensor identity_matrix(std::int64_t n) {
  Tensor m = Tensor::zeros({n, n});
  for (std::int64_t i = 0; i < n; ++i) m.mutable_data()[i * n + i] = 1.0;
  return m;
}

AttentionParams rand_params(std::int64_t c, std::int64_t heads, Rng& rng, double scale = 0.5) {
  AttentionParams p;
  p.w_q = rand_tensor({c, c}, rng, scale);
  p.w_k = rand_tensor({c, c}, rng, scale);
  p.w_v = rand_tensor({c, c}, rng, scale);
  p.w_out = rand_tensor({c, c}, rng, scale);
  p.heads = heads;
  return p;
}

double max_diff_vs(const Tensor& got, const std::vector<real>& want) {
  REQUIRE(static_cast<std::size_t>(got.numel()) == want.size());
  double m = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    m = std::max(m, std::abs(got.data()[i] - want[i]));
  }
  return m;
}

}  // namespace

TEST_CASE("self_attention single token returns V exactly") {
  Rng rng(101);
  Tensor q = rand_tensor({1, 3}, rng);
  Tensor k = rand_tensor({1, 3}, rng);
  Tensor v = rand_tensor({1, 5}, rng);
  Tensor out = self_attention(q, k, v);
  CHECK(max_abs_diff(out, v) == doctest::Approx(0.0));

  Tensor qb = rand_tensor({2, 2, 1, 3}, rng);
  Tensor kb = rand_tensor({2, 2, 1, 3}, rng);
  Tensor vb = rand_tensor({2, 2, 1, 4}, rng);
  CHECK(max_abs_diff(self_attention(qb, kb, vb), vb) == doctest::Approx(0.0));
}

TEST_CASE("self_attention with zero K averages V columns") {
  Rng rng(102);
  const std::int64_t t = 5, cv = 3;
  Tensor q = rand_tensor({t, 2}, rng);
  Tensor k = Tensor::zeros({t, 2});
  Tensor v = rand_tensor({t, cv}, rng);
  Tensor out = self_attention(q, k, v);
  for (std::int64_t c = 0; c < cv; ++c) {
    real mean = 0.0;
    for (std::int64_t j = 0; j < t; ++j) mean += v.at({j, c});
    mean /= static_cast<real>(t);
    for (std::int64_t i = 0; i < t; ++i) {
      CHECK(out.at({i, c}) == doctest::Approx(mean).epsilon(1e-12));
    }
  }
}

TEST_CASE("self_attention matches scalar oracle on a small case") {
  Rng rng(103);
  const std::int64_t t = 3, c = 2;
  Tensor q = rand_tensor({t, c}, rng);
  Tensor k = rand_tensor({t, c}, rng);
  Tensor v = rand_tensor({t, c}, rng);
  std::vector<real> qd(q.data().begin(), q.data().end());
  std::vector<real> kd(k.data().begin(), k.data().end());
  std::vector<real> vd(v.data().begin(), v.data().end());
  const auto want = oracle_sa_rows(qd, kd, vd, t, c, c, nullptr);
  CHECK(max_diff_vs(self_attention(q, k, v), want) < 1e-12);
}

TEST_CASE("self_attention is permutation equivariant") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(200 + seed);
    const std::int64_t t = 2 + static_cast<std::int64_t>(rng.uniform_int(0, 6));
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 3));
    Tensor q = rand_tensor({t, c}, rng);
    Tensor k = rand_tensor({t, c}, rng);
    Tensor v = rand_tensor({t, c}, rng);
    std::vector<std::int64_t> perm(static_cast<std::size_t>(t));
    for (std::int64_t i = 0; i < t; ++i) perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);

    const auto apply_perm = [&](const Tensor& x) {
      Tensor y = Tensor::zeros({t, c});
      for (std::int64_t i = 0; i < t; ++i) {
        for (std::int64_t cc = 0; cc < c; ++cc) {
          y.mutable_data()[i * c + cc] = x.at({perm[static_cast<std::size_t>(i)], cc});
        }
      }
      return y;
    };
    Tensor lhs = self_attention(apply_perm(q), apply_perm(k), apply_perm(v));
    Tensor rhs = apply_perm(self_attention(q, k, v));
    CHECK(max_abs_diff(lhs, rhs) < 1e-12);
  }
}

TEST_CASE("attention rows stay stochastic under additive terms") {
  // V = all-ones: any row-stochastic weighting reproduces ones exactly.
  Rng rng(104);
  const std::int64_t t = 6, c = 3;
  Tensor q = rand_tensor({t, c}, rng);
  Tensor k = rand_tensor({t, c}, rng);
  Tensor v = Tensor::full({t, c}, 1.0);
  Tensor additive = Tensor::zeros({t, t});
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j < t; ++j) {
      additive.mutable_data()[i * t + j] = (j % 3 == 1 && j != i) ? kMaskNegative : 0.0;
    }
  }
  Tensor out = self_attention(q, k, v, additive);
  for (std::int64_t i = 0; i < out.numel(); ++i) {
    CHECK(out.data()[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("relative position bias depends only on the coordinate offset") {
  Rng rng(105);
  const std::array<std::int64_t, 3> window{2, 2, 2};
  const std::int64_t heads = 2;
  RelativePositionBias bias = make_relative_position_bias(window, heads);
  const std::int64_t rows = bias.table.extent(0);
  CHECK(rows == 27);
  for (std::int64_t i = 0; i < bias.table.numel(); ++i) {
    bias.table.mutable_data()[i] = rng.uniform(-1.0, 1.0);
  }
  for (std::int64_t idx : bias.index) {
    CHECK(idx >= 0);
    CHECK(idx < rows);
  }

  Tensor m = rpb_matrix(bias);
  CHECK(m.shape() == Shape{heads, 8, 8});
  const auto coord = [](std::int64_t i) {
    return std::array<std::int64_t, 3>{i / 4, (i / 2) % 2, i % 2};
  };
  for (std::int64_t h = 0; h < heads; ++h) {
    for (std::int64_t i = 0; i < 8; ++i) {
      for (std::int64_t j = 0; j < 8; ++j) {
        for (std::int64_t p = 0; p < 8; ++p) {
          for (std::int64_t q = 0; q < 8; ++q) {
            const auto ci = coord(i), cj = coord(j), cp = coord(p), cq = coord(q);
            bool same = true;
            for (int a = 0; a < 3; ++a) {
              same = same && (ci[static_cast<std::size_t>(a)] - cj[static_cast<std::size_t>(a)] ==
                              cp[static_cast<std::size_t>(a)] - cq[static_cast<std::size_t>(a)]);
            }
            if (same) {
              CHECK(m.at({h, i, j}) == doctest::Approx(m.at({h, p, q})));
            }
          }
        }
      }
    }
  }
}

TEST_CASE("saturating bias entry pins the attention row to one value") {
  Rng rng(106);
  const std::int64_t c = 3;
  AttentionParams p;
  p.w_q = identity_matrix(c);
  p.w_k = identity_matrix(c);
  p.w_v = identity_matrix(c);
  p.w_out = identity_matrix(c);
  p.heads = 1;
  RelativePositionBias bias = make_relative_position_bias({1, 1, 2}, 1);
  // offset row for pair (0,1): dx = -1 -> row 0
  bias.table.mutable_data()[0] = 1e9;

  Tensor windows = rand_tensor({1, 2, c}, rng);
  Tensor out = w_msa(windows, p, bias);
  for (std::int64_t cc = 0; cc < c; ++cc) {
    CHECK(out.at({0, 0, cc}) == doctest::Approx(windows.at({0, 1, cc})).epsilon(1e-9));
  }
}

TEST_CASE("w_msa with single head and zero bias reduces to projected SA") {
  Rng rng(107);
  const std::int64_t n = 2, t = 4, c = 3;
  AttentionParams p = rand_params(c, 1, rng);
  RelativePositionBias bias = make_relative_position_bias({1, 2, 2}, 1);
  Tensor windows = rand_tensor({n, t, c}, rng);
  Tensor got = w_msa(windows, p, bias);

  Tensor q = linear(windows, p.w_q, Tensor());
  Tensor k = linear(windows, p.w_k, Tensor());
  Tensor v = linear(windows, p.w_v, Tensor());
  Tensor want = linear(self_attention(q, k, v), p.w_out, Tensor());
  CHECK(max_abs_diff(got, want) < 1e-12);
}

TEST_CASE("w_msa matches the scalar oracle across random configurations") {
  std::int64_t cases = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(300 + seed);
    const std::int64_t wd = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 2));
    const std::int64_t wh = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 3));
    const std::int64_t ww = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 3));
    const std::int64_t t = wd * wh * ww;
    const std::int64_t heads = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 2));
    const std::int64_t c = heads * (1 + static_cast<std::int64_t>(rng.uniform_int(0, 2)));
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.uniform_int(0, 2));

    AttentionParams p = rand_params(c, heads, rng);
    RelativePositionBias bias = make_relative_position_bias({wd, wh, ww}, heads);
    for (std::int64_t i = 0; i < bias.table.numel(); ++i) {
      bias.table.mutable_data()[i] = rng.uniform(-0.8, 0.8);
    }
    Tensor windows = rand_tensor({n, t, c}, rng);
    Tensor mask;
    if (seed % 2 == 0) {
      mask = Tensor::zeros({n, t, t});
      for (std::int64_t i = 0; i < mask.numel(); ++i) {
        mask.mutable_data()[i] = rng.uniform() < 0.2 ? kMaskNegative : 0.0;
      }
      // keep every row escapable: diagonal stays open
      for (std::int64_t w = 0; w < n; ++w) {
        for (std::int64_t i = 0; i < t; ++i) {
          mask.mutable_data()[(w * t + i) * t + i] = 0.0;
        }
      }
    }
    Tensor got = w_msa(windows, p, bias, mask);
    const auto want = oracle_w_msa(windows, p, bias, mask);
    CHECK(max_diff_vs(got, want) < 1e-9);
    ++cases;
  }
  CHECK(cases >= 20);
}

TEST_CASE("w_msa with a real shift mask matches the oracle and confines attention") {
  Rng rng(108);
  const WindowLayout layout = make_block_layout({4, 4, 4}, {2, 2, 2}, {1, 1, 1});
  Tensor mask = shift_attention_mask(layout);
  const std::int64_t n = layout.window_count();
  const std::int64_t t = layout.tokens_per_window();
  const std::int64_t c = 6;
  AttentionParams p = rand_params(c, 2, rng);
  RelativePositionBias bias = make_relative_position_bias(layout.window, 2);
  for (std::int64_t i = 0; i < bias.table.numel(); ++i) {
    bias.table.mutable_data()[i] = rng.uniform(-0.5, 0.5);
  }
  Tensor windows = rand_tensor({n, t, c}, rng);
  Tensor got = w_msa(windows, p, bias, mask);
  CHECK(max_diff_vs(got, oracle_w_msa(windows, p, bias, mask)) < 1e-9);
}

TEST_CASE("fully separating mask splits a window into independent attentions") {
  Rng rng(109);
  const std::int64_t t = 4, c = 3;
  AttentionParams p;
  p.w_q = identity_matrix(c);
  p.w_k = identity_matrix(c);
  p.w_v = identity_matrix(c);
  p.w_out = identity_matrix(c);
  p.heads = 1;
  RelativePositionBias bias = make_relative_position_bias({1, 2, 2}, 1);

  Tensor windows = rand_tensor({1, t, c}, rng);
  Tensor mask = Tensor::zeros({1, t, t});
  for (std::int64_t i = 0; i < t; ++i) {
    for (std::int64_t j = 0; j < t; ++j) {
      if ((i < 2) != (j < 2)) mask.mutable_data()[i * t + j] = kMaskNegative;
    }
  }
  Tensor whole = w_msa(windows, p, bias, mask);
  Tensor lo = reshape(slice(windows, 1, 0, 2), {2, c});
  Tensor hi = reshape(slice(windows, 1, 2, 2), {2, c});
  Tensor lo_sa = self_attention(lo, lo, lo);
  Tensor hi_sa = self_attention(hi, hi, hi);
  for (std::int64_t i = 0; i < 2; ++i) {
    for (std::int64_t cc = 0; cc < c; ++cc) {
      CHECK(whole.at({0, i, cc}) == doctest::Approx(lo_sa.at({i, cc})).epsilon(1e-9));
      CHECK(whole.at({0, i + 2, cc}) == doctest::Approx(hi_sa.at({i, cc})).epsilon(1e-9));
    }
  }
}

TEST_CASE("multi_head_wrap with one head and no projection is the bare op") {
  Rng rng(110);
  Tensor q = rand_tensor({2, 5, 4}, rng);
  Tensor k = rand_tensor({2, 5, 4}, rng);
  Tensor v = rand_tensor({2, 5, 4}, rng);
  const HeadOp op = [](const Tensor& qh, const Tensor& kh, const Tensor& vh, std::int64_t) {
    return self_attention(qh, kh, vh);
  };
  Tensor wrapped = multi_head_wrap(q, k, v, 1, Tensor(), op);
  CHECK(max_abs_diff(wrapped, self_attention(q, k, v)) == doctest::Approx(0.0));
}

TEST_CASE("permuting head order and w_out rows leaves w_msa unchanged") {
  Rng rng(111);
  const std::int64_t c = 4, heads = 2, ch = 2;
  AttentionParams p = rand_params(c, heads, rng);
  RelativePositionBias bias = make_relative_position_bias({1, 2, 2}, heads);
  for (std::int64_t i = 0; i < bias.table.numel(); ++i) {
    bias.table.mutable_data()[i] = rng.uniform(-0.6, 0.6);
  }
  Tensor windows = rand_tensor({2, 4, c}, rng);

  // swap the two head groups: projection output columns, w_out rows, table cols
  const auto swap_cols = [&](const Tensor& w) {
    Tensor s = Tensor::zeros({c, c});
    for (std::int64_t i = 0; i < c; ++i) {
      for (std::int64_t j = 0; j < c; ++j) {
        s.mutable_data()[i * c + (j + ch) % c] = w.at({i, j});
      }
    }
    return s;
  };
  AttentionParams p2;
  p2.heads = heads;
  p2.w_q = swap_cols(p.w_q);
  p2.w_k = swap_cols(p.w_k);
  p2.w_v = swap_cols(p.w_v);
  p2.w_out = Tensor::zeros({c, c});
  for (std::int64_t i = 0; i < c; ++i) {
    for (std::int64_t j = 0; j < c; ++j) {
      p2.w_out.mutable_data()[((i + ch) % c) * c + j] = p.w_out.at({i, j});
    }
  }
  RelativePositionBias bias2 = make_relative_position_bias({1, 2, 2}, heads);
  for (std::int64_t r = 0; r < bias.table.extent(0); ++r) {
    bias2.table.mutable_data()[r * heads + 0] = bias.table.at({r, 1});
    bias2.table.mutable_data()[r * heads + 1] = bias.table.at({r, 0});
  }
  CHECK(max_abs_diff(w_msa(windows, p, bias), w_msa(windows, p2, bias2)) < 1e-12);
}

TEST_CASE("gradients flow through a two-head wrap") {
  Rng rng(112);
  Tensor q = rand_tensor({1, 3, 4}, rng);
  Tensor k = rand_tensor({1, 3, 4}, rng);
  Tensor v = rand_tensor({1, 3, 4}, rng);
  Tensor wo = rand_tensor({4, 4}, rng);
  const HeadOp op = [](const Tensor& qh, const Tensor& kh, const Tensor& vh, std::int64_t) {
    return self_attention(qh, kh, vh);
  };
  auto res = check_gradients(
      [&] {
        Tensor o = multi_head_wrap(q, k, v, 2, wo, op);
        return sum_all(mul(o, o));
      },
      {q, k, v, wo});
  CHECK(res.max_err < 1e-4);
}

TEST_CASE("w_msa gradcheck over every parameter") {
  Rng rng(113);
  const std::int64_t n = 2, t = 4, c = 6;
  AttentionParams p = rand_params(c, 2, rng);
  RelativePositionBias bias = make_relative_position_bias({1, 2, 2}, 2);
  for (std::int64_t i = 0; i < bias.table.numel(); ++i) {
    bias.table.mutable_data()[i] = rng.uniform(-0.5, 0.5);
  }
  Tensor windows = rand_tensor({n, t, c}, rng);
  auto res = check_gradients(
      [&] {
        Tensor o = w_msa(windows, p, bias);
        return sum_all(mul(o, o));
      },
      {windows, p.w_q, p.w_k, p.w_v, p.w_out, bias.table});
  CHECK(res.max_err < 1e-4);
  CHECK(res.checked > 200);
}

TEST_CASE("csw_msa matches the scalar oracle across random configurations") {
  std::int64_t cases = 0;
  for (std::uint64_t seed = 0; seed < 24; ++seed) {
    Rng rng(400 + seed);
    const std::int64_t d = 2 + static_cast<std::int64_t>(rng.uniform_int(0, 2));
    const std::int64_t h = 2 + static_cast<std::int64_t>(rng.uniform_int(0, 2));
    const std::int64_t w = 2 + static_cast<std::int64_t>(rng.uniform_int(0, 2));
    const std::int64_t heads = (seed % 3 == 0) ? 6 : 3;
    const std::int64_t c = heads * (1 + static_cast<std::int64_t>(rng.uniform_int(0, 1)));
    const bool all_even = d % 2 == 0 && h % 2 == 0 && w % 2 == 0;
    const std::int64_t sw = (all_even && rng.uniform() < 0.5) ? 2 : 1;

    AttentionParams p = rand_params(c, heads, rng);
    LePEOperator lepe = make_lepe(c);
    for (std::int64_t i = 0; i < lepe.weight.numel(); ++i) {
      lepe.weight.mutable_data()[i] = rng.uniform(-0.3, 0.3);
    }
    Tensor grid = rand_tensor({d, h, w, c}, rng);
    Tensor got = csw_msa(grid, p, lepe, sw);
    CHECK(got.shape() == grid.shape());
    CHECK(max_diff_vs(got, oracle_csw_msa(grid, p, lepe.weight, sw)) < 1e-9);
    ++cases;
  }
  CHECK(cases >= 20);
}

TEST_CASE("csw_msa with zero LePE weights is pure striped attention") {
  Rng rng(114);
  const std::int64_t c = 6;
  AttentionParams p = rand_params(c, 3, rng);
  LePEOperator lepe = make_lepe(c);
  Tensor grid = rand_tensor({2, 3, 2, c}, rng);
  Tensor got = csw_msa(grid, p, lepe, 1);
  CHECK(max_diff_vs(got, oracle_csw_msa(grid, p, lepe.weight, 1)) < 1e-9);
}

TEST_CASE("whole-grid stripes with zero LePE equal grouped global attention") {
  for (std::int64_t heads : {3, 6}) {
    Rng rng(115 + static_cast<std::uint64_t>(heads));
    const std::int64_t c = 2 * heads;
    const std::array<std::int64_t, 3> dims{2, 3, 2};
    AttentionParams p = rand_params(c, heads, rng);
    LePEOperator lepe = make_lepe(c);
    Tensor grid = rand_tensor({dims[0], dims[1], dims[2], c}, rng);
    Tensor got = csw_msa(grid, p, lepe, 3);

    const WindowLayout whole = make_block_layout(dims, dims);
    RelativePositionBias zero_bias = make_relative_position_bias(dims, heads);
    Tensor want = window_reverse(w_msa(window_partition(grid, whole), p, zero_bias), whole);
    CHECK(max_abs_diff(got, want) < 1e-9);
  }
}

TEST_CASE("unit stripes keep depth-group outputs local to their slab") {
  Rng rng(117);
  const std::int64_t c = 6, cg = 2;
  AttentionParams p = rand_params(c, 3, rng);
  p.w_out = identity_matrix(c);
  LePEOperator lepe = make_lepe(c);
  Tensor grid = rand_tensor({4, 4, 4, c}, rng);
  Tensor base = csw_msa(grid, p, lepe, 1);

  Tensor bumped = Tensor::from_data(grid.shape(),
                                    std::vector<real>(grid.data().begin(), grid.data().end()));
  for (std::int64_t cc = 0; cc < c; ++cc) {
    bumped.mutable_data()[((2 * 4 + 3) * 4 + 1) * c + cc] += 1.0;  // voxel (2,3,1)
  }
  Tensor after = csw_msa(bumped, p, lepe, 1);
  // depth-group channels [0,cg) at z=0 see only slab z=0; voxel (0,3,1) is
  // outside the bumped voxel's LePE stencil, so those channels cannot move
  for (std::int64_t cc = 0; cc < cg; ++cc) {
    CHECK(base.at({0, 3, 1, cc}) == doctest::Approx(after.at({0, 3, 1, cc})));
  }
  // its own slab does move
  double moved = 0.0;
  for (std::int64_t cc = 0; cc < cg; ++cc) {
    moved += std::abs(base.at({2, 0, 0, cc}) - after.at({2, 0, 0, cc}));
  }
  CHECK(moved > 1e-6);
}

TEST_CASE("csw_msa gradcheck over every parameter") {
  Rng rng(118);
  const std::int64_t c = 6;
  AttentionParams p = rand_params(c, 3, rng);
  LePEOperator lepe = make_lepe(c);
  for (std::int64_t i = 0; i < lepe.weight.numel(); ++i) {
    lepe.weight.mutable_data()[i] = rng.uniform(-0.3, 0.3);
  }
  Tensor grid = rand_tensor({2, 2, 2, c}, rng);
  auto res = check_gradients(
      [&] {
        Tensor o = csw_msa(grid, p, lepe, 1);
        return sum_all(mul(o, o));
      },
      {grid, p.w_q, p.w_k, p.w_v, p.w_out, lepe.weight});
  CHECK(res.max_err < 1e-4);
  CHECK(res.checked > 300);
}

TEST_CASE("attention shape errors are typed and specific") {
  Rng rng(119);
  const std::int64_t c = 6;
  AttentionParams p = rand_params(c, 3, rng);
  LePEOperator lepe = make_lepe(c);
  Tensor grid = rand_tensor({2, 2, 2, c}, rng);

  AttentionParams bad_heads = p;
  bad_heads.heads = 4;  // 3 does not divide 4
  CHECK_THROWS_AS(csw_msa(grid, bad_heads, lepe, 1), ShapeError);
  AttentionParams bad_div = p;
  bad_div.heads = 5;  // 5 does not divide 6 channels
  CHECK_THROWS_AS(csw_msa(grid, bad_div, lepe, 1), ShapeError);
  CHECK_THROWS_AS(csw_msa(grid, p, make_lepe(c + 1), 1), ShapeError);
  CHECK_THROWS_AS(csw_msa(grid, p, lepe, 0), ShapeError);

  Tensor windows = rand_tensor({2, 4, c}, rng);
  RelativePositionBias wrong_t = make_relative_position_bias({1, 1, 3}, 3);
  CHECK_THROWS_AS(w_msa(windows, p, wrong_t), ShapeError);
  RelativePositionBias bias = make_relative_position_bias({1, 2, 2}, 3);
  Tensor bad_mask = Tensor::zeros({2, 4, 3});
  CHECK_THROWS_AS(w_msa(windows, p, bias, bad_mask), ShapeError);

  Tensor q = rand_tensor({3, 4}, rng);
  Tensor k = rand_tensor({3, 5}, rng);
  CHECK_THROWS_AS(self_attention(q, k, q), ShapeError);
}
