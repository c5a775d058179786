#include "crswin/model.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace crswin {
namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ShapeError(msg);
}

Tensor weight_init(Shape shape, Rng* rng) {
  if (rng == nullptr) return Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  return Tensor::trunc_normal(std::move(shape), *rng, 0.02, /*requires_grad=*/true);
}

LnParams init_ln(std::int64_t c) {
  return {Tensor::full({c}, 1.0, /*requires_grad=*/true),
          Tensor::zeros({c}, /*requires_grad=*/true)};
}

MlpParams init_mlp(std::int64_t c, std::int64_t ratio, Rng* rng) {
  MlpParams mlp;
  mlp.w1 = weight_init({c, ratio * c}, rng);
  mlp.b1 = Tensor::zeros({ratio * c}, /*requires_grad=*/true);
  mlp.w2 = weight_init({ratio * c, c}, rng);
  mlp.b2 = Tensor::zeros({c}, /*requires_grad=*/true);
  return mlp;
}

AttentionParams init_attn(std::int64_t c, std::int64_t heads, Rng* rng) {
  AttentionParams p;
  p.w_q = weight_init({c, c}, rng);
  p.w_k = weight_init({c, c}, rng);
  p.w_v = weight_init({c, c}, rng);
  p.w_out = weight_init({c, c}, rng);
  p.heads = heads;
  return p;
}

WAttnBlock init_wblock(std::int64_t c, std::int64_t heads, std::int64_t window, bool shifted,
                       std::int64_t ratio, Rng* rng) {
  WAttnBlock blk;
  blk.ln1 = init_ln(c);
  blk.attn = init_attn(c, heads, rng);
  const std::int64_t rows = (2 * window - 1) * (2 * window - 1) * (2 * window - 1);
  blk.bias_table = Tensor::zeros({rows, heads}, /*requires_grad=*/true);
  blk.ln2 = init_ln(c);
  blk.mlp = init_mlp(c, ratio, rng);
  blk.shifted = shifted;
  return blk;
}

CswBlock init_cswblock(std::int64_t c, std::int64_t heads, std::int64_t ratio, Rng* rng) {
  CswBlock blk;
  blk.ln1 = init_ln(c);
  blk.attn = init_attn(c, heads, rng);
  blk.lepe.weight = weight_init({c, 3, 3, 3}, rng);
  blk.ln2 = init_ln(c);
  blk.mlp = init_mlp(c, ratio, rng);
  return blk;
}

ModelParams make_params(const ModelConfig& config, Rng* rng) {
  validate(config);
  const std::int64_t stages = config.stage_count();
  ModelParams p;
  p.config = config;

  const std::int64_t embed_in = config.kernel.p * config.kernel.m * config.kernel.m *
                                config.in_channels;
  p.embed_w = weight_init({embed_in, config.embed_dim}, rng);
  p.embed_b = Tensor::zeros({config.embed_dim}, /*requires_grad=*/true);

  for (std::int64_t s = 0; s < stages; ++s) {
    const std::int64_t c = config.stage_dim(s);
    const std::int64_t heads = config.heads[static_cast<std::size_t>(s)];
    EncoderStage st;
    for (std::int64_t d = 0; d < config.depths[static_cast<std::size_t>(s)]; ++d) {
      st.swin.push_back(init_wblock(c, heads, config.window, d % 2 == 1, config.mlp_ratio, rng));
    }
    for (std::int64_t d = 0; d < config.depths[static_cast<std::size_t>(s)]; ++d) {
      st.csw.push_back(init_cswblock(c, heads, config.mlp_ratio, rng));
    }
    st.merge_w = weight_init({8 * c, 2 * c}, rng);
    st.merge_b = Tensor::zeros({2 * c}, /*requires_grad=*/true);
    p.encoder.push_back(std::move(st));
  }

  const std::int64_t cb = config.stage_dim(stages);
  const std::int64_t heads_b = config.heads[static_cast<std::size_t>(stages)];
  p.bottleneck_swin.push_back(init_wblock(cb, heads_b, config.window, false, config.mlp_ratio, rng));
  p.bottleneck_swin.push_back(init_wblock(cb, heads_b, config.window, true, config.mlp_ratio, rng));
  p.bottleneck_csw.push_back(init_cswblock(cb, heads_b, config.mlp_ratio, rng));
  p.bottleneck_csw.push_back(init_cswblock(cb, heads_b, config.mlp_ratio, rng));
  p.bottleneck_expand_w = weight_init({cb, 4 * cb}, rng);
  p.bottleneck_expand_b = Tensor::zeros({4 * cb}, /*requires_grad=*/true);

  p.decoder.resize(static_cast<std::size_t>(stages));
  for (std::int64_t s = stages - 1; s >= 0; --s) {
    const std::int64_t c = config.stage_dim(s);
    const std::int64_t heads = config.heads[static_cast<std::size_t>(s)];
    DecoderStage st;
    for (std::int64_t d = 0; d < config.depths[static_cast<std::size_t>(s)]; ++d) {
      st.swin.push_back(init_wblock(c, heads, config.window, d % 2 == 1, config.mlp_ratio, rng));
    }
    if (s > 0) {
      st.expand_w = weight_init({c, 4 * c}, rng);
      st.expand_b = Tensor::zeros({4 * c}, /*requires_grad=*/true);
    }
    p.decoder[static_cast<std::size_t>(s)] = std::move(st);
  }

  const std::int64_t final_out = config.kernel.p * config.kernel.m * config.kernel.m *
                                 config.embed_dim;
  p.final_w = weight_init({config.embed_dim, final_out}, rng);
  p.final_b = Tensor::zeros({final_out}, /*requires_grad=*/true);
  p.cls_w = weight_init({config.embed_dim, config.classes}, rng);
  p.cls_b = Tensor::zeros({config.classes}, /*requires_grad=*/true);
  return p;
}

using Named = std::vector<std::pair<std::string, Tensor>>;

void add_ln(Named& out, const std::string& prefix, const LnParams& ln) {
  out.emplace_back(prefix + ".g", ln.gamma);
  out.emplace_back(prefix + ".b", ln.beta);
}

void add_mlp(Named& out, const std::string& prefix, const MlpParams& mlp) {
  out.emplace_back(prefix + ".w1", mlp.w1);
  out.emplace_back(prefix + ".b1", mlp.b1);
  out.emplace_back(prefix + ".w2", mlp.w2);
  out.emplace_back(prefix + ".b2", mlp.b2);
}

void add_attn(Named& out, const std::string& prefix, const AttentionParams& attn) {
  out.emplace_back(prefix + ".wq", attn.w_q);
  out.emplace_back(prefix + ".wk", attn.w_k);
  out.emplace_back(prefix + ".wv", attn.w_v);
  out.emplace_back(prefix + ".wo", attn.w_out);
}

void add_wblock(Named& out, const std::string& prefix, const WAttnBlock& blk) {
  add_ln(out, prefix + ".ln1", blk.ln1);
  add_attn(out, prefix, blk.attn);
  out.emplace_back(prefix + ".bias", blk.bias_table);
  add_ln(out, prefix + ".ln2", blk.ln2);
  add_mlp(out, prefix + ".mlp", blk.mlp);
}

void add_cswblock(Named& out, const std::string& prefix, const CswBlock& blk) {
  add_ln(out, prefix + ".ln1", blk.ln1);
  add_attn(out, prefix, blk.attn);
  out.emplace_back(prefix + ".lepe", blk.lepe.weight);
  add_ln(out, prefix + ".ln2", blk.ln2);
  add_mlp(out, prefix + ".mlp", blk.mlp);
}

Tensor apply_mlp(const Tensor& x, const MlpParams& mlp, const ForwardContext& ctx) {
  Tensor h = gelu(linear(x, mlp.w1, mlp.b1));
  if (ctx.dropout != nullptr && ctx.drop_rate > 0.0) {
    const real keep = 1.0 - ctx.drop_rate;
    Tensor mask = Tensor::zeros(h.shape());
    for (real& m : mask.mutable_data()) {
      m = ctx.dropout->uniform() < keep ? 1.0 / keep : 0.0;
    }
    h = mul(h, mask);
  }
  return linear(h, mlp.w2, mlp.b2);
}

}  // namespace

void validate(const ModelConfig& config) {
  require(config.in_channels >= 1, "config: in_channels must be positive");
  require(config.classes >= 2, "config: need at least 2 classes");
  require(config.embed_dim >= 1, "config: embed_dim must be positive");
  require(config.kernel.p >= 1 && config.kernel.m >= 1, "config: kernel extents must be positive");
  require(config.window >= 1, "config: window must be positive");
  require(config.mlp_ratio >= 1, "config: mlp_ratio must be positive");
  require(config.fusion_alpha >= 0.0 && config.fusion_alpha <= 1.0,
          "config: fusion_alpha must lie in [0,1]");
  require(config.drop_rate >= 0.0 && config.drop_rate < 1.0,
          "config: drop_rate must lie in [0,1)");
  const std::int64_t stages = config.stage_count();
  require(stages >= 1, "config: need at least one stage");
  require(static_cast<std::int64_t>(config.heads.size()) == stages + 1,
          "config: heads must list every stage plus the bottleneck");
  require(static_cast<std::int64_t>(config.stripes.size()) == stages + 1,
          "config: stripes must list every stage plus the bottleneck");
  for (std::int64_t d : config.depths) require(d >= 1, "config: stage depths must be positive");
  for (std::int64_t sw : config.stripes) require(sw >= 1, "config: stripes must be positive");
  for (std::int64_t s = 0; s <= stages; ++s) {
    const std::int64_t h = config.heads[static_cast<std::size_t>(s)];
    const std::int64_t c = config.stage_dim(s);
    require(h >= 3 && h % 3 == 0, "config: heads at stage " + std::to_string(s) +
                                      " must be a positive multiple of 3");
    require(c % h == 0, "config: stage " + std::to_string(s) + " width " + std::to_string(c) +
                            " not divisible by " + std::to_string(h) + " heads");
  }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  return make_params(config, &rng);
}

std::vector<std::pair<std::string, Tensor>> named_params(const ModelParams& params) {
  Named out;
  out.emplace_back("embed.w", params.embed_w);
  out.emplace_back("embed.b", params.embed_b);
  const std::int64_t stages = params.config.stage_count();
  for (std::int64_t s = 0; s < stages; ++s) {
    const EncoderStage& st = params.encoder[static_cast<std::size_t>(s)];
    const std::string prefix = "enc" + std::to_string(s);
    for (std::size_t d = 0; d < st.swin.size(); ++d) {
      add_wblock(out, prefix + ".swin" + std::to_string(d), st.swin[d]);
    }
    for (std::size_t d = 0; d < st.csw.size(); ++d) {
      add_cswblock(out, prefix + ".csw" + std::to_string(d), st.csw[d]);
    }
    out.emplace_back(prefix + ".merge.w", st.merge_w);
    out.emplace_back(prefix + ".merge.b", st.merge_b);
  }
  for (std::size_t d = 0; d < params.bottleneck_swin.size(); ++d) {
    add_wblock(out, "bott.swin" + std::to_string(d), params.bottleneck_swin[d]);
  }
  for (std::size_t d = 0; d < params.bottleneck_csw.size(); ++d) {
    add_cswblock(out, "bott.csw" + std::to_string(d), params.bottleneck_csw[d]);
  }
  out.emplace_back("bott.expand.w", params.bottleneck_expand_w);
  out.emplace_back("bott.expand.b", params.bottleneck_expand_b);
  for (std::int64_t s = stages - 1; s >= 0; --s) {
    const DecoderStage& st = params.decoder[static_cast<std::size_t>(s)];
    const std::string prefix = "dec" + std::to_string(s);
    for (std::size_t d = 0; d < st.swin.size(); ++d) {
      add_wblock(out, prefix + ".swin" + std::to_string(d), st.swin[d]);
    }
    if (st.expand_w.defined()) {
      out.emplace_back(prefix + ".expand.w", st.expand_w);
      out.emplace_back(prefix + ".expand.b", st.expand_b);
    }
  }
  out.emplace_back("final.w", params.final_w);
  out.emplace_back("final.b", params.final_b);
  out.emplace_back("cls.w", params.cls_w);
  out.emplace_back("cls.b", params.cls_b);
  return out;
}

Tensor swin_sub_block(const Tensor& grid, const WAttnBlock& blk, std::int64_t window,
                      const ForwardContext& ctx) {
  require(grid.rank() == 4, "swin_sub_block: grid must be (D,H,W,C), got " +
                                shape_str(grid.shape()));
  const std::array<std::int64_t, 3> dims{grid.extent(0), grid.extent(1), grid.extent(2)};
  const std::array<std::int64_t, 3> win{window, window, window};
  std::array<std::int64_t, 3> shift{0, 0, 0};
  if (blk.shifted) {
    for (int a = 0; a < 3; ++a) {
      shift[static_cast<std::size_t>(a)] = std::min(window, dims[static_cast<std::size_t>(a)]) / 2;
    }
  }
  const WindowLayout layout = make_block_layout(dims, win, shift);

  const std::int64_t rows = (2 * window - 1) * (2 * window - 1) * (2 * window - 1);
  require(blk.bias_table.defined() && blk.bias_table.rank() == 2 &&
              blk.bias_table.extent(0) == rows && blk.bias_table.extent(1) == blk.attn.heads,
          "swin_sub_block: bias table does not match window " + std::to_string(window) + " with " +
              std::to_string(blk.attn.heads) + " heads");
  RelativePositionBias bias;
  bias.window = layout.window;
  bias.table = blk.bias_table;
  bias.index = rpb_index(layout.window, win);

  Tensor x = layer_norm(grid, blk.ln1.gamma, blk.ln1.beta);
  Tensor attended;
  if (layout.has_shift()) {
    const std::array<std::int64_t, 3> offsets{-layout.shift[0], -layout.shift[1],
                                              -layout.shift[2]};
    Tensor shifted = cyclic_shift(x, offsets);
    Tensor att = w_msa(window_partition(shifted, layout), blk.attn, bias,
                       shift_attention_mask(layout));
    attended = inverse_cyclic_shift(window_reverse(att, layout), offsets);
  } else {
    attended = window_reverse(w_msa(window_partition(x, layout), blk.attn, bias), layout);
  }
  Tensor y = add(grid, attended);
  return add(y, apply_mlp(layer_norm(y, blk.ln2.gamma, blk.ln2.beta), blk.mlp, ctx));
}

Tensor csw_sub_block(const Tensor& grid, const CswBlock& blk, std::int64_t stripe,
                     const ForwardContext& ctx) {
  require(grid.rank() == 4, "csw_sub_block: grid must be (D,H,W,C), got " +
                                shape_str(grid.shape()));
  Tensor x = layer_norm(grid, blk.ln1.gamma, blk.ln1.beta);
  Tensor y = add(grid, csw_msa(x, blk.attn, blk.lepe, stripe));
  return add(y, apply_mlp(layer_norm(y, blk.ln2.gamma, blk.ln2.beta), blk.mlp, ctx));
}

Tensor vt_w_msa_blk(const Tensor& grid, const std::vector<WAttnBlock>& blocks,
                    std::int64_t window, const ForwardContext& ctx) {
  Tensor z = grid;
  for (const WAttnBlock& blk : blocks) z = swin_sub_block(z, blk, window, ctx);
  return z;
}

Tensor vt_cs_w_msa_blk(const Tensor& grid, const std::vector<CswBlock>& blocks,
                       std::int64_t stripe, const ForwardContext& ctx) {
  Tensor z = grid;
  for (const CswBlock& blk : blocks) z = csw_sub_block(z, blk, stripe, ctx);
  return z;
}

Tensor fuse(const Tensor& z_s, const Tensor& z_cs, real alpha) {
  require(z_s.shape() == z_cs.shape(), "fuse: branch shapes differ, " + shape_str(z_s.shape()) +
                                           " vs " + shape_str(z_cs.shape()));
  return add(mul_scalar(z_s, alpha), mul_scalar(z_cs, 1.0 - alpha));
}

Shape predict_logits_shape(const ModelConfig& config, const std::array<std::int64_t, 3>& dims) {
  validate(config);
  const std::array<std::int64_t, 3> kernel{config.kernel.p, config.kernel.m, config.kernel.m};
  const std::int64_t stage_factor = std::int64_t{1} << config.stage_count();
  for (int a = 0; a < 3; ++a) {
    const std::int64_t ext = dims[static_cast<std::size_t>(a)];
    const std::int64_t k = kernel[static_cast<std::size_t>(a)];
    require(ext >= 1, "forward: spatial extents must be positive");
    require(ext % k == 0, "forward: extent " + std::to_string(ext) +
                              " not divisible by patch kernel " + std::to_string(k));
    require((ext / k) % stage_factor == 0,
            "forward: token extent " + std::to_string(ext / k) + " not divisible by 2^stages");
  }
  return {config.classes, dims[0], dims[1], dims[2]};
}

Tensor forward(const Tensor& volume, const ModelParams& params, const ForwardContext& ctx) {
  const ModelConfig& cfg = params.config;
  require(volume.rank() == 4 && volume.extent(0) == cfg.in_channels,
          "forward: volume must be (" + std::to_string(cfg.in_channels) + ",D,H,W), got " +
              shape_str(volume.shape()));
  predict_logits_shape(cfg, {volume.extent(1), volume.extent(2), volume.extent(3)});
  const std::int64_t stages = cfg.stage_count();

  Tensor g = patch_embed(volume, cfg.kernel, params.embed_w, params.embed_b);
  std::vector<Tensor> skips;
  skips.reserve(static_cast<std::size_t>(stages));
  for (std::int64_t s = 0; s < stages; ++s) {
    const EncoderStage& st = params.encoder[static_cast<std::size_t>(s)];
    Tensor z_s = vt_w_msa_blk(g, st.swin, cfg.window, ctx);
    Tensor z_cs = vt_cs_w_msa_blk(g, st.csw, cfg.stripes[static_cast<std::size_t>(s)], ctx);
    Tensor fused = fuse(z_s, z_cs, cfg.fusion_alpha);
    skips.push_back(fused);
    g = patch_merge(fused, st.merge_w, st.merge_b);
  }

  g = vt_w_msa_blk(g, params.bottleneck_swin, cfg.window, ctx);
  g = vt_cs_w_msa_blk(g, params.bottleneck_csw, cfg.stripes[static_cast<std::size_t>(stages)],
                      ctx);
  g = patch_expand(g, params.bottleneck_expand_w, params.bottleneck_expand_b);

  for (std::int64_t s = stages - 1; s >= 0; --s) {
    const DecoderStage& st = params.decoder[static_cast<std::size_t>(s)];
    g = add(g, skips[static_cast<std::size_t>(s)]);
    g = vt_w_msa_blk(g, st.swin, cfg.window, ctx);
    if (s > 0) g = patch_expand(g, st.expand_w, st.expand_b);
  }

  g = final_expand(g, cfg.kernel, params.final_w, params.final_b);
  g = linear(g, params.cls_w, params.cls_b);
  return permute(g, {3, 0, 1, 2});
}

// ---- checkpoint container ----
//
// Byte layout, all integers little-endian:
//   "CRCK" | u32 version=1
//   i64 in_channels, classes, embed_dim, kernel_p, kernel_m, window, mlp_ratio
//   f64 fusion_alpha, drop_rate
//   u32 count + i64[count] for depths, heads, stripes
//   u64 tensor_count, then per tensor:
//     u16 name_len | name | u8 rank | i64 dims[rank] | f64 data (row-major)

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void append_bytes(std::vector<unsigned char>& out, const void* src, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(src);
  out.insert(out.end(), p, p + n);
}

template <typename T>
void append_le(std::vector<unsigned char>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(buf, buf + sizeof(T));
  }
  append_bytes(out, buf, sizeof(T));
}

void append_f64(std::vector<unsigned char>& out, real v) {
  append_le(out, std::bit_cast<std::uint64_t>(v));
}

struct ByteReader {
  const std::vector<unsigned char>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (pos + n > bytes.size()) {
      throw TruncatedDataError(std::string("checkpoint: truncated reading ") + what);
    }
  }
  template <typename T>
  T take(const char* what) {
    static_assert(std::is_trivially_copyable_v<T>);
    need(sizeof(T), what);
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, bytes.data() + pos, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(buf, buf + sizeof(T));
    }
    pos += sizeof(T);
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
  }
  real take_f64(const char* what) { return std::bit_cast<real>(take<std::uint64_t>(what)); }
  std::string take_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
};

void append_i64_list(std::vector<unsigned char>& out, const std::vector<std::int64_t>& v) {
  append_le(out, static_cast<std::uint32_t>(v.size()));
  for (std::int64_t x : v) append_le(out, x);
}

std::vector<std::int64_t> take_i64_list(ByteReader& r, const char* what) {
  const std::uint32_t n = r.take<std::uint32_t>(what);
  if (n > 64) throw FormatError(std::string("checkpoint: implausible list length for ") + what);
  std::vector<std::int64_t> v(n);
  for (auto& x : v) x = r.take<std::int64_t>(what);
  return v;
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for " + path);
  return bytes;
}

ModelConfig parse_config(ByteReader& r) {
  ModelConfig cfg;
  cfg.in_channels = r.take<std::int64_t>("in_channels");
  cfg.classes = r.take<std::int64_t>("classes");
  cfg.embed_dim = r.take<std::int64_t>("embed_dim");
  cfg.kernel.p = r.take<std::int64_t>("kernel_p");
  cfg.kernel.m = r.take<std::int64_t>("kernel_m");
  cfg.window = r.take<std::int64_t>("window");
  cfg.mlp_ratio = r.take<std::int64_t>("mlp_ratio");
  cfg.fusion_alpha = r.take_f64("fusion_alpha");
  cfg.drop_rate = r.take_f64("drop_rate");
  cfg.depths = take_i64_list(r, "depths");
  cfg.heads = take_i64_list(r, "heads");
  cfg.stripes = take_i64_list(r, "stripes");
  return cfg;
}

// Parameter count a config implies, mirroring make_params without allocating.
// Guards corrupt checkpoints whose config still passes validation: the file
// must be large enough to hold every tensor before anything is built.
void check_config_budget(const ModelConfig& cfg, std::size_t file_bytes) {
  constexpr std::int64_t kMaxField = 1 << 20;
  const auto field = [](std::int64_t v) { return v >= 1 && v <= kMaxField; };
  bool plausible = field(cfg.in_channels) && field(cfg.classes) && field(cfg.embed_dim) &&
                   field(cfg.kernel.p) && field(cfg.kernel.m) && field(cfg.window) &&
                   field(cfg.mlp_ratio);
  for (const auto* list : {&cfg.depths, &cfg.heads, &cfg.stripes}) {
    for (std::int64_t v : *list) plausible = plausible && field(v);
  }
  plausible = plausible && cfg.depths.size() <= 16;  // keeps the u128 math below exact
  if (!plausible) throw FormatError("checkpoint: implausible config field");

  using u128 = unsigned __int128;
  u128 total = 0;
  const auto add = [&total](std::initializer_list<u128> dims) {
    u128 n = 1;
    for (u128 d : dims) n *= d;
    total += n;
  };
  const auto ln = [&add](u128 c) { add({c}); add({c}); };
  const auto mlp = [&](u128 c) {
    const auto r = static_cast<u128>(cfg.mlp_ratio);
    add({c, r * c});
    add({r * c});
    add({r * c, c});
    add({c});
  };
  const auto attn = [&add](u128 c) { for (int i = 0; i < 4; ++i) add({c, c}); };
  const u128 bias_rows = [&cfg] {
    const auto w = static_cast<u128>(2 * cfg.window - 1);
    return w * w * w;
  }();
  const auto wblock = [&](u128 c, u128 heads) {
    ln(c);
    attn(c);
    add({bias_rows, heads});
    ln(c);
    mlp(c);
  };
  const auto cswblock = [&](u128 c, u128 heads) {
    ln(c);
    attn(c);
    add({c, 27});
    ln(c);
    mlp(c);
  };

  const std::int64_t stages = cfg.stage_count();
  add({static_cast<u128>(cfg.kernel.p * cfg.kernel.m * cfg.kernel.m), static_cast<u128>(cfg.in_channels),
       static_cast<u128>(cfg.embed_dim)});
  add({static_cast<u128>(cfg.embed_dim)});
  for (std::int64_t s = 0; s < stages; ++s) {
    const u128 c = static_cast<u128>(cfg.embed_dim) << s;
    const auto heads = static_cast<u128>(cfg.heads[static_cast<std::size_t>(s)]);
    for (std::int64_t d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d) wblock(c, heads);
    for (std::int64_t d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d) cswblock(c, heads);
    add({8 * c, 2 * c});
    add({2 * c});
  }
  const u128 cb = static_cast<u128>(cfg.embed_dim) << stages;
  const auto heads_b = static_cast<u128>(cfg.heads[static_cast<std::size_t>(stages)]);
  for (int i = 0; i < 2; ++i) wblock(cb, heads_b);
  for (int i = 0; i < 2; ++i) cswblock(cb, heads_b);
  add({cb, 4 * cb});
  add({4 * cb});
  for (std::int64_t s = stages - 1; s >= 0; --s) {
    const u128 c = static_cast<u128>(cfg.embed_dim) << s;
    const auto heads = static_cast<u128>(cfg.heads[static_cast<std::size_t>(s)]);
    for (std::int64_t d = 0; d < cfg.depths[static_cast<std::size_t>(s)]; ++d) wblock(c, heads);
    if (s > 0) {
      add({c, 4 * c});
      add({4 * c});
    }
  }
  const u128 final_out = static_cast<u128>(cfg.kernel.p * cfg.kernel.m * cfg.kernel.m) *
                         static_cast<u128>(cfg.embed_dim);
  add({static_cast<u128>(cfg.embed_dim), final_out});
  add({final_out});
  add({static_cast<u128>(cfg.embed_dim), static_cast<u128>(cfg.classes)});
  add({static_cast<u128>(cfg.classes)});

  if (total * 8 > static_cast<u128>(file_bytes)) {
    throw TruncatedDataError("checkpoint: file too small for the stored config");
  }
}

bool same_config(const ModelConfig& a, const ModelConfig& b) {
  return a.in_channels == b.in_channels && a.classes == b.classes &&
         a.embed_dim == b.embed_dim && a.kernel.p == b.kernel.p && a.kernel.m == b.kernel.m &&
         a.window == b.window && a.mlp_ratio == b.mlp_ratio &&
         a.fusion_alpha == b.fusion_alpha && a.drop_rate == b.drop_rate &&
         a.depths == b.depths && a.heads == b.heads && a.stripes == b.stripes;
}

ModelParams load_parsed(ByteReader& r, const ModelConfig& cfg) {
  try {
    validate(cfg);
  } catch (const ShapeError& e) {
    throw FormatError(std::string("checkpoint: stored config invalid: ") + e.what());
  }
  check_config_budget(cfg, r.bytes.size());
  ModelParams params = make_params(cfg, nullptr);
  Named registry = named_params(params);

  const std::uint64_t count = r.take<std::uint64_t>("tensor count");
  if (count != registry.size()) {
    throw FormatError("checkpoint: holds " + std::to_string(count) + " tensors, config needs " +
                      std::to_string(registry.size()));
  }
  for (auto& [name, tensor] : registry) {
    const std::uint16_t len = r.take<std::uint16_t>("tensor name");
    const std::string stored = r.take_string(len, "tensor name");
    if (stored != name) {
      throw FormatError("checkpoint: expected tensor " + name + ", found " + stored);
    }
    const std::uint8_t rank = r.take<std::uint8_t>("tensor rank");
    if (rank == 0 || rank > 8) throw FormatError("checkpoint: bad rank for " + name);
    Shape dims(rank);
    for (auto& d : dims) {
      d = r.take<std::int64_t>("tensor dims");
      if (d < 1) throw FormatError("checkpoint: bad extent for " + name);
    }
    if (dims != tensor.shape()) {
      throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(dims) +
                        ", config needs " + shape_str(tensor.shape()));
    }
    const std::int64_t n = tensor.numel();
    r.need(static_cast<std::size_t>(n) * 8, "tensor data");
    auto dst = tensor.mutable_data();
    for (std::int64_t i = 0; i < n; ++i) dst[i] = r.take_f64("tensor data");
  }
  if (r.pos != r.bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return params;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::vector<unsigned char> out;
  append_bytes(out, "CRCK", 4);
  append_le(out, kCheckpointVersion);
  const ModelConfig& cfg = params.config;
  append_le(out, cfg.in_channels);
  append_le(out, cfg.classes);
  append_le(out, cfg.embed_dim);
  append_le(out, cfg.kernel.p);
  append_le(out, cfg.kernel.m);
  append_le(out, cfg.window);
  append_le(out, cfg.mlp_ratio);
  append_f64(out, cfg.fusion_alpha);
  append_f64(out, cfg.drop_rate);
  append_i64_list(out, cfg.depths);
  append_i64_list(out, cfg.heads);
  append_i64_list(out, cfg.stripes);

  const Named registry = named_params(params);
  append_le(out, static_cast<std::uint64_t>(registry.size()));
  for (const auto& [name, tensor] : registry) {
    append_le(out, static_cast<std::uint16_t>(name.size()));
    append_bytes(out, name.data(), name.size());
    append_le(out, static_cast<std::uint8_t>(tensor.rank()));
    for (std::int64_t d : tensor.shape()) append_le(out, d);
    for (real v : tensor.data()) append_f64(out, v);
  }

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open " + path + " for writing");
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
  if (!file) throw IoError("write failed for " + path);
}

ModelParams load_checkpoint(const std::string& path, const ModelConfig& expected) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  ByteReader r{bytes};
  const std::string magic = r.take_string(4, "magic");
  if (magic != "CRCK") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.take<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const ModelConfig stored = parse_config(r);
  if (!same_config(stored, expected)) {
    throw ConfigMismatchError("checkpoint: stored config differs from the expected one");
  }
  return load_parsed(r, stored);
}

ModelParams load_checkpoint(const std::string& path) {
  const std::vector<unsigned char> bytes = read_file_bytes(path);
  ByteReader r{bytes};
  const std::string magic = r.take_string(4, "magic");
  if (magic != "CRCK") throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = r.take<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const ModelConfig stored = parse_config(r);
  return load_parsed(r, stored);
}

}  // namespace crswin
