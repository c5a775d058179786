#include "crswin/attention.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "crswin/windowing.hpp"

namespace crswin {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

Tensor transpose_last2(const Tensor& t) {
  std::vector<std::int64_t> perm(static_cast<std::size_t>(t.rank()));
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[perm.size() - 2], perm[perm.size() - 1]);
  return permute(t, perm);
}

void check_square(const Tensor& w, std::int64_t c, const char* name) {
  require(w.defined() && w.shape() == Shape{c, c},
          std::string(name) + " must be (" + std::to_string(c) + "," + std::to_string(c) + ")" +
              (w.defined() ? ", got " + shape_str(w.shape()) : ", got undefined"));
}

void check_params(const AttentionParams& p, std::int64_t c) {
  check_square(p.w_q, c, "w_q");
  check_square(p.w_k, c, "w_k");
  check_square(p.w_v, c, "w_v");
  check_square(p.w_out, c, "w_out");
  require(p.heads >= 1 && c % p.heads == 0,
          "channels " + std::to_string(c) + " not divisible by " + std::to_string(p.heads) +
              " heads");
}

}  // namespace

std::vector<std::int64_t> rpb_index(const std::array<std::int64_t, 3>& window,
                                    const std::array<std::int64_t, 3>& table_window) {
  for (int a = 0; a < 3; ++a) {
    require(window[static_cast<std::size_t>(a)] >= 1, "bias window extents must be positive");
    require(window[static_cast<std::size_t>(a)] <= table_window[static_cast<std::size_t>(a)],
            "bias window exceeds its table window");
  }
  const std::int64_t wd = window[0];
  const std::int64_t wh = window[1];
  const std::int64_t ww = window[2];
  const std::int64_t t = wd * wh * ww;
  const std::int64_t rh = 2 * table_window[1] - 1;
  const std::int64_t rw = 2 * table_window[2] - 1;

  std::vector<std::int64_t> index(static_cast<std::size_t>(t * t));
  for (std::int64_t i = 0; i < t; ++i) {
    const std::int64_t zi = i / (wh * ww);
    const std::int64_t yi = (i / ww) % wh;
    const std::int64_t xi = i % ww;
    for (std::int64_t j = 0; j < t; ++j) {
      const std::int64_t zj = j / (wh * ww);
      const std::int64_t yj = (j / ww) % wh;
      const std::int64_t xj = j % ww;
      const std::int64_t row = ((zi - zj + table_window[0] - 1) * rh + (yi - yj + table_window[1] - 1)) * rw +
                               (xi - xj + table_window[2] - 1);
      index[static_cast<std::size_t>(i * t + j)] = row;
    }
  }
  return index;
}

RelativePositionBias make_relative_position_bias(const std::array<std::int64_t, 3>& window,
                                                 std::int64_t heads) {
  require(heads >= 1, "bias head count must be positive");
  RelativePositionBias bias;
  bias.window = window;
  bias.index = rpb_index(window, window);
  bias.table = Tensor::zeros(
      {(2 * window[0] - 1) * (2 * window[1] - 1) * (2 * window[2] - 1), heads},
      /*requires_grad=*/true);
  return bias;
}

Tensor rpb_matrix(const RelativePositionBias& bias) {
  const std::int64_t t = bias.window[0] * bias.window[1] * bias.window[2];
  require(bias.table.defined() && bias.table.rank() == 2, "bias table must be rank-2");
  require(static_cast<std::int64_t>(bias.index.size()) == t * t,
          "bias index does not match its window");
  const std::int64_t heads = bias.table.extent(1);
  return reshape(permute(gather_rows(bias.table, bias.index), {1, 0}), {heads, t, t});
}

LePEOperator make_lepe(std::int64_t channels) {
  require(channels >= 1, "lepe channel count must be positive");
  return {Tensor::zeros({channels, 3, 3, 3}, /*requires_grad=*/true)};
}

Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  return self_attention(q, k, v, Tensor());
}

Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& additive) {
  const auto& qs = q.shape();
  const auto& ks = k.shape();
  const auto& vs = v.shape();
  require(qs.size() >= 2 && qs.size() == ks.size() && qs.size() == vs.size(),
          "self_attention: Q " + shape_str(qs) + ", K " + shape_str(ks) + ", V " + shape_str(vs) +
              " must share rank >= 2");
  for (std::size_t d = 0; d + 2 < qs.size(); ++d) {
    require(qs[d] == ks[d] && qs[d] == vs[d], "self_attention: batch extents differ");
  }
  require(qs.back() == ks.back(), "self_attention: Q/K channel mismatch");
  require(ks[ks.size() - 2] == vs[vs.size() - 2], "self_attention: K/V token mismatch");

  const real scale = 1.0 / std::sqrt(static_cast<real>(qs.back()));
  Tensor scores = mul_scalar(matmul(q, transpose_last2(k)), scale);
  if (additive.defined()) {
    scores = add(scores, expand(additive, scores.shape()));
  }
  Tensor probs = softmax(scores, scores.rank() - 1);
  return matmul(probs, v);
}

Tensor multi_head_wrap(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads,
                       const Tensor& w_out, const HeadOp& op) {
  const auto& qs = q.shape();
  require(qs.size() >= 2, "multi_head_wrap: tokens must be rank >= 2, got " + shape_str(qs));
  const std::int64_t c = qs.back();
  require(heads >= 1 && c % heads == 0,
          "multi_head_wrap: channels " + std::to_string(c) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(k.shape().back() == c && v.shape().back() == c,
          "multi_head_wrap: K/V channel mismatch");
  const std::int64_t ch = c / heads;
  const std::int64_t last = q.rank() - 1;

  std::vector<Tensor> outs;
  outs.reserve(static_cast<std::size_t>(heads));
  for (std::int64_t h = 0; h < heads; ++h) {
    outs.push_back(op(slice(q, last, h * ch, ch), slice(k, last, h * ch, ch),
                      slice(v, last, h * ch, ch), h));
  }
  Tensor cat = heads == 1 ? outs[0] : concat(outs, last);
  if (!w_out.defined()) return cat;
  return linear(cat, w_out, Tensor());
}

Tensor w_msa(const Tensor& windows, const AttentionParams& params,
             const RelativePositionBias& bias, const Tensor& mask) {
  const auto& s = windows.shape();
  require(s.size() == 3, "w_msa: windows must be (N,T,C), got " + shape_str(s));
  const std::int64_t n = s[0];
  const std::int64_t t = s[1];
  const std::int64_t c = s[2];
  check_params(params, c);
  require(bias.window[0] * bias.window[1] * bias.window[2] == t,
          "w_msa: bias window has " +
              std::to_string(bias.window[0] * bias.window[1] * bias.window[2]) +
              " tokens, windows have " + std::to_string(t));
  if (mask.defined()) {
    require(mask.shape() == Shape{n, t, t},
            "w_msa: mask must be (" + std::to_string(n) + "," + std::to_string(t) + "," +
                std::to_string(t) + "), got " + shape_str(mask.shape()));
  }

  Tensor q = linear(windows, params.w_q, Tensor());
  Tensor k = linear(windows, params.w_k, Tensor());
  Tensor v = linear(windows, params.w_v, Tensor());
  Tensor bm = rpb_matrix(bias);
  require(bm.extent(0) == params.heads, "w_msa: bias head count mismatch");

  return multi_head_wrap(
      q, k, v, params.heads, params.w_out,
      [&](const Tensor& qh, const Tensor& kh, const Tensor& vh, std::int64_t head) {
        Tensor bh = reshape(slice(bm, 0, head, 1), {t, t});
        Tensor additive = mask.defined() ? add(expand(bh, {n, t, t}), mask) : bh;
        return self_attention(qh, kh, vh, additive);
      });
}

Tensor csw_msa(const Tensor& grid, const AttentionParams& params, const LePEOperator& lepe,
               std::int64_t stripe_width) {
  const auto& s = grid.shape();
  require(s.size() == 4, "csw_msa: grid must be (D,H,W,C), got " + shape_str(s));
  const std::int64_t c = s[3];
  check_params(params, c);
  require(params.heads % 3 == 0,
          "csw_msa: head count " + std::to_string(params.heads) + " not divisible by 3");
  require(stripe_width >= 1, "csw_msa: stripe width must be positive");
  require(lepe.weight.defined() && lepe.weight.shape() == Shape{c, 3, 3, 3},
          "csw_msa: lepe weight must be (" + std::to_string(c) + ",3,3,3)");

  Tensor q = linear(grid, params.w_q, Tensor());
  Tensor k = linear(grid, params.w_k, Tensor());
  Tensor v = linear(grid, params.w_v, Tensor());
  Tensor lepe_term = depthwise_conv3d(v, lepe.weight);

  const std::int64_t cg = c / 3;
  const std::int64_t group_heads = params.heads / 3;
  std::vector<Tensor> groups;
  groups.reserve(3);
  for (int axis = 0; axis < 3; ++axis) {
    const WindowLayout layout = make_stripe_layout({s[0], s[1], s[2]}, axis, stripe_width);
    Tensor qg = window_partition(slice(q, 3, axis * cg, cg), layout);
    Tensor kg = window_partition(slice(k, 3, axis * cg, cg), layout);
    Tensor vg = window_partition(slice(v, 3, axis * cg, cg), layout);
    Tensor og = multi_head_wrap(
        qg, kg, vg, group_heads, Tensor(),
        [](const Tensor& qh, const Tensor& kh, const Tensor& vh, std::int64_t) {
          return self_attention(qh, kh, vh);
        });
    groups.push_back(window_reverse(og, layout));
  }
  return linear(add(concat(groups, 3), lepe_term), params.w_out, Tensor());
}

}  // namespace crswin
