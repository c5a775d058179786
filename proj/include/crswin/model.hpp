#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "crswin/attention.hpp"
#include "crswin/rng.hpp"
#include "crswin/tensor.hpp"
#include "crswin/volume.hpp"
#include "crswin/windowing.hpp"

namespace crswin {

// Loading a checkpoint whose stored configuration differs from the expected
// one.
struct ConfigMismatchError : IoError {
  using IoError::IoError;
};

// Topology of the segmentation network. `depths[i]` counts attention
// sub-blocks at encoder stage i (even depths pair unshifted and shifted
// windows); `heads` and `stripes` carry one extra trailing entry for the
// bottleneck. Channel width at stage i is embed_dim * 2^i.
struct ModelConfig {
  std::int64_t in_channels = 4;
  std::int64_t classes = 4;
  std::int64_t embed_dim = 48;
  PatchKernel kernel{};
  std::vector<std::int64_t> depths{2, 2, 2};
  std::vector<std::int64_t> heads{3, 6, 12, 24};
  std::vector<std::int64_t> stripes{1, 2, 4, 4};
  std::int64_t window = 4;
  std::int64_t mlp_ratio = 4;
  real fusion_alpha = 0.5;
  real drop_rate = 0.0;

  std::int64_t stage_count() const { return static_cast<std::int64_t>(depths.size()); }
  std::int64_t stage_dim(std::int64_t stage) const { return embed_dim << stage; }
};

// Throws ShapeError on inconsistent fields (head/stripe counts, channel
// divisibility, CSW head groups).
void validate(const ModelConfig& config);

struct LnParams {
  Tensor gamma;  // (C)
  Tensor beta;   // (C)
};

struct MlpParams {
  Tensor w1;  // (C, ratio*C)
  Tensor b1;
  Tensor w2;  // (ratio*C, C)
  Tensor b2;
};

// One pre-LN windowed-attention sub-block; `shifted` selects the half-window
// cyclic shift. The bias table is laid out for the configured window and
// indexed per forward against the grid's effective window.
struct WAttnBlock {
  LnParams ln1;
  AttentionParams attn;
  Tensor bias_table;
  LnParams ln2;
  MlpParams mlp;
  bool shifted = false;
};

// One pre-LN cross-shaped-window sub-block.
struct CswBlock {
  LnParams ln1;
  AttentionParams attn;
  LePEOperator lepe;
  LnParams ln2;
  MlpParams mlp;
};

struct EncoderStage {
  std::vector<WAttnBlock> swin;
  std::vector<CswBlock> csw;
  Tensor merge_w;  // (8C, 2C)
  Tensor merge_b;
};

struct DecoderStage {
  std::vector<WAttnBlock> swin;
  Tensor expand_w;  // (C, 4C); undefined at stage 0, where final_expand takes over
  Tensor expand_b;
};

struct ModelParams {
  ModelConfig config;
  Tensor embed_w;
  Tensor embed_b;
  std::vector<EncoderStage> encoder;
  std::vector<WAttnBlock> bottleneck_swin;  // one unshifted + one shifted sub-block
  std::vector<CswBlock> bottleneck_csw;     // two sub-blocks
  Tensor bottleneck_expand_w;
  Tensor bottleneck_expand_b;
  std::vector<DecoderStage> decoder;  // indexed by stage, applied high to low
  Tensor final_w;                     // (C, P*M*M*C)
  Tensor final_b;
  Tensor cls_w;  // (C, K)
  Tensor cls_b;
};

// Deterministic initialization: truncated normal sigma = 0.02 for weights,
// ones/zeros for LN affine, zeros for biases and bias tables.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

// Stable name -> tensor registry covering every trainable tensor; order and
// names are a pure function of the config.
std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& params);

// Per-voxel dropout state for training-time forward passes; default is the
// inference path (no dropout).
struct ForwardContext {
  Rng* dropout = nullptr;
  real drop_rate = 0.0;
};

// LN -> (S)W-MSA -> residual -> LN -> MLP -> residual on a (D,H,W,C) grid.
Tensor swin_sub_block(const Tensor& grid, const WAttnBlock& blk, std::int64_t window,
                      const ForwardContext& ctx = {});
// LN -> CSW-MSA -> residual -> LN -> MLP -> residual.
Tensor csw_sub_block(const Tensor& grid, const CswBlock& blk, std::int64_t stripe,
                     const ForwardContext& ctx = {});

// The windowed dual sub-block pair (unshifted then shifted), or any odd/even
// run of sub-blocks in stored order.
Tensor vt_w_msa_blk(const Tensor& grid, const std::vector<WAttnBlock>& blocks,
                    std::int64_t window, const ForwardContext& ctx = {});
// Two successive cross-shaped sub-blocks.
Tensor vt_cs_w_msa_blk(const Tensor& grid, const std::vector<CswBlock>& blocks,
                       std::int64_t stripe, const ForwardContext& ctx = {});

// alpha * z_s + (1 - alpha) * z_cs.
Tensor fuse(const Tensor& z_s, const Tensor& z_cs, real alpha);

// (K, D, H, W) logits shape for an input of the given spatial dims; throws
// ShapeError when the dims do not divide through the lattice and stages.
Shape predict_logits_shape(const ModelConfig& config, const std::array<std::int64_t, 3>& dims);

// volume (C_in, D, H, W) -> logits (K, D, H, W).
Tensor forward(const Tensor& volume, const ModelParams& params, const ForwardContext& ctx = {});

// Versioned binary checkpoint: magic "CRCK", config echo, named tensors in
// registry order. Round trips are bit-exact.
void save_checkpoint(const ModelParams& params, const std::string& path);
// Validates the stored config against `expected` (ConfigMismatchError).
ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected);
// Trusts the stored config.
ModelParams load_checkpoint(const std::string& path);

}  // namespace crswin
