#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

#include "crswin/tensor.hpp"

namespace crswin {

// Trainable projections of one attention block. Projections carry no bias
// term; C must be divisible by `heads` (and heads by 3 for csw_msa).
struct AttentionParams {
  Tensor w_q;    // (C, C)
  Tensor w_k;    // (C, C)
  Tensor w_v;    // (C, C)
  Tensor w_out;  // (C, C)
  std::int64_t heads = 1;
};

// Additive attention bias looked up by in-window coordinate offset: `table`
// has one row per offset, one column per head; `index` maps flat token pairs
// i*T+j to table rows, so B[i,j] depends only on coord(i) - coord(j).
struct RelativePositionBias {
  std::array<std::int64_t, 3> window{};
  Tensor table;  // ((2wd-1)(2wh-1)(2ww-1), heads), trainable
  std::vector<std::int64_t> index;
};

// Zero-initialized table with requires_grad set.
RelativePositionBias make_relative_position_bias(const std::array<std::int64_t, 3>& window,
                                                 std::int64_t heads);

// Token-pair index for `window` against a table laid out for `table_window`;
// window must not exceed table_window on any axis, so a table built for a
// configured window serves the clamped windows of small grids too.
std::vector<std::int64_t> rpb_index(const std::array<std::int64_t, 3>& window,
                                    const std::array<std::int64_t, 3>& table_window);

// (heads, T, T) bias matrix; differentiable with respect to the table.
Tensor rpb_matrix(const RelativePositionBias& bias);

// Locally-enhanced positional term: per-channel depthwise 3x3x3 convolution
// of V laid out on the token lattice.
struct LePEOperator {
  Tensor weight;  // (C, 3, 3, 3)
};

// Zero-initialized weight with requires_grad set.
LePEOperator make_lepe(std::int64_t channels);

// SoftMax(Q Kt / sqrt(Ck)) V over the last two axes; leading axes batch.
// `additive` broadcasts into the (…, T, T) score tensor before the softmax.
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v);
Tensor self_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& additive);

// Splits projected tokens (…, T, C) into `heads` channel groups, applies
// `op` to each, concatenates in head order, then projects with `w_out`
// (skipped when undefined, leaving the bare concat).
using HeadOp =
    std::function<Tensor(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t head)>;
Tensor multi_head_wrap(const Tensor& q, const Tensor& k, const Tensor& v, std::int64_t heads,
                       const Tensor& w_out, const HeadOp& op);

// Windowed multi-head attention: windows (N, T, C) from window_partition,
// per-head additive bias from `bias` (whose window must have T tokens), plus
// an optional (N, T, T) additive mask for shifted layouts.
Tensor w_msa(const Tensor& windows, const AttentionParams& params,
             const RelativePositionBias& bias, const Tensor& mask = Tensor());

// Cross-shaped-window attention on a (D, H, W, C) grid: heads split into 3
// equal groups, one per axis, each attending within slabs `stripe_width`
// thick along its axis; LePE(V) is added to the concatenated attention
// output before w_out.
Tensor csw_msa(const Tensor& grid, const AttentionParams& params, const LePEOperator& lepe,
               std::int64_t stripe_width);

}  // namespace crswin
