#include "agfa/model.hpp"

#include <algorithm>
#include <cmath>

#include "agfa/error.hpp"

namespace agfa {

void validate_config(const ModelConfig& c) {
  if (c.base_channels <= 0 || c.base_channels % 4 != 0)
    fail(ErrorKind::kInvalidArgument,
         "config: base_channels must be positive and divisible by 4, got " +
             std::to_string(c.base_channels));
  if (c.depth < 2 || c.depth > 8)
    fail(ErrorKind::kInvalidArgument, "config: depth must be in [2, 8], got " + std::to_string(c.depth));
  if (c.in_channels != 1 || c.out_channels != 1)
    fail(ErrorKind::kInvalidArgument, "config: this network is single-channel in and out");
  if (c.frm_reduction <= 0)
    fail(ErrorKind::kInvalidArgument, "config: frm_reduction must be positive");
  if (c.use_safa) {
    if (c.safa_dilations.empty())
      fail(ErrorKind::kInvalidArgument, "config: safa_dilations must not be empty");
    for (int d : c.safa_dilations)
      if (d <= 0) fail(ErrorKind::kInvalidArgument, "config: safa dilation rates must be positive");
    // four-way split: every level's channel count must divide by 4, which
    // base_channels % 4 == 0 already guarantees
  }
}

std::vector<std::pair<std::string, ModelConfig>> ablation_configs(int base_channels) {
  auto base = [base_channels] {
    ModelConfig c;
    c.base_channels = base_channels;
    return c;
  };
  std::vector<std::pair<std::string, ModelConfig>> rows;

  rows.emplace_back("Baseline", base());

  ModelConfig net1 = base();
  net1.use_frm = true;
  rows.emplace_back("Net 1", net1);

  // Nets 2..5: SAFA restricted to a single dilation rate (columns D1..D4),
  // with the self-attention stage on.
  for (int d = 1; d <= 4; ++d) {
    ModelConfig c = base();
    c.use_safa = true;
    c.safa_dilations = {d};
    c.use_safa_self_attention = true;
    rows.emplace_back("Net " + std::to_string(d + 1), c);
  }

  ModelConfig net6 = base();
  net6.use_hfim = true;
  rows.emplace_back("Net 6", net6);

  ModelConfig net7 = base();
  net7.use_frm = true;
  net7.use_safa = true;
  net7.safa_dilations = {3};
  net7.use_safa_self_attention = true;
  rows.emplace_back("Net 7", net7);

  ModelConfig net8 = base();
  net8.use_frm = true;
  net8.use_hfim = true;
  rows.emplace_back("Net 8", net8);

  ModelConfig net9 = base();
  net9.use_safa = true;
  net9.safa_dilations = {3};
  net9.use_safa_self_attention = true;
  net9.use_hfim = true;
  rows.emplace_back("Net 9", net9);

  ModelConfig full = base();
  full.use_frm = true;
  full.use_safa = true;
  full.safa_dilations = {1, 2, 3, 4};
  full.use_safa_self_attention = true;
  full.use_hfim = true;
  rows.emplace_back("AGFA-Net", full);

  return rows;
}

// ---------------------------------------------------------------------------
// attention modules

Tensor FrmModule::channel_attention(const Tensor& y) const {
  const int C = y.shape()[0];
  auto mlp = [this, C](const Tensor& pooled) {
    Tensor h = relu(matmul(mlp_w1, reshape(pooled, {C, 1})));
    return reshape(matmul(mlp_w2, h), {C});
  };
  Tensor avg = global_pool_channelwise(y, PoolKind::kAvg);
  Tensor mx = global_pool_channelwise(y, PoolKind::kMax);
  return sigmoid(add(mlp(avg), mlp(mx)));
}

Tensor FrmModule::spatial_attention(const Tensor& y) const {
  Tensor avg = spatial_pool_across_channels(y, PoolKind::kAvg);
  Tensor mx = spatial_pool_across_channels(y, PoolKind::kMax);
  return sigmoid(spatial_conv.forward(concat({avg, mx}, 0)));
}

AttentionMaps FrmModule::maps(const Tensor& y) const {
  AttentionMaps m;
  m.channel_map = channel_attention(y);
  Tensor refined = mul(y, m.channel_map);
  m.spatial_map = spatial_attention(refined);
  return m;
}

Tensor FrmModule::forward(const Tensor& y) const {
  Tensor refined = mul(y, channel_attention(y));
  return mul(refined, spatial_attention(refined));
}

Tensor SafaModule::forward(const Tensor& y, BnMode mode) const {
  auto groups = split(y, 0, static_cast<int>(group_convs.size()));
  std::vector<Tensor> gated;
  for (size_t n = 0; n < groups.size(); ++n) {
    Tensor z = group_convs[n].forward(groups[n]);
    gated.push_back(mul(sigmoid(z), z));
  }
  Tensor cat = concat(gated, 0);
  if (!self_attention) return cat;

  const Shape& s = cat.shape();
  const int C = s[0];
  const int L = s[1] * s[2] * s[3];
  Tensor q = relu(q_bn.forward(q_conv.forward(cat), mode));
  Tensor k = relu(k_bn.forward(k_conv.forward(cat), mode));
  Tensor v = relu(v_bn.forward(v_conv.forward(cat), mode));
  Tensor qf = reshape(q, {C, L});
  Tensor kf = reshape(k, {C, L});
  Tensor vf = reshape(v, {C, L});
  // A[i,j] = softmax_j((Q^T K)[i,j]); output row i attends over positions j
  Tensor attn = softmax(matmul(transpose2d(qf), kf), 1);
  Tensor context = matmul(vf, transpose2d(attn));
  return add(cat, reshape(context, s));
}

Tensor HfimFuse::forward(const Tensor& y_low, const Tensor& y_high) const {
  const Shape& lo = y_low.shape();
  const Shape& hi = y_high.shape();
  for (int a = 1; a < 4; ++a) {
    if (lo[a] != 2 * hi[a])
      fail(ErrorKind::kShapeMismatch,
           "hfim: high-scale extent " + std::to_string(hi[a]) + " on axis " + std::to_string(a) +
               " must be half of " + std::to_string(lo[a]));
  }
  Tensor up = upsample_trilinear2x(y_high);
  Tensor gate = sigmoid(gate_proj.forward(concat({y_low, up}, 0)));
  return out_conv.forward(mul(y_low, gate));
}

// ---------------------------------------------------------------------------
// network assembly

namespace {
constexpr std::array<int, 3> k111{1, 1, 1};
constexpr std::array<int, 3> k333{3, 3, 3};
constexpr std::array<int, 3> k777{7, 7, 7};
}  // namespace

Tensor AgfaNet::make_param(const std::string& name, const Shape& shape, int fan_in) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = init_rng_->uniform(-bound, bound);
  Tensor t = Tensor::from_values(shape, std::move(values), /*requires_grad=*/true);
  params_.emplace_back(name, t);
  return t;
}

Conv3dLayer AgfaNet::make_conv(const std::string& name, int in_c, int out_c,
                               std::array<int, 3> kernel, std::array<int, 3> dilation) {
  Conv3dLayer layer;
  layer.params = ConvParams::same(in_c, out_c, kernel, dilation);
  const int fan_in = in_c * kernel[0] * kernel[1] * kernel[2];
  layer.weights = make_param(name + ".w", {out_c, in_c, kernel[0], kernel[1], kernel[2]}, fan_in);
  Tensor bias = Tensor::zeros({out_c}, /*requires_grad=*/true);
  params_.emplace_back(name + ".b", bias);
  layer.bias = bias;
  return layer;
}

BatchNorm3d AgfaNet::make_bn(const std::string& name, int channels) {
  BatchNorm3d bn;
  Tensor scale = Tensor::full({channels}, 1.0, /*requires_grad=*/true);
  Tensor shift = Tensor::zeros({channels}, /*requires_grad=*/true);
  params_.emplace_back(name + ".scale", scale);
  params_.emplace_back(name + ".shift", shift);
  bn.scale = scale;
  bn.shift = shift;
  bn.stats = std::make_shared<RunningStats>(RunningStats::identity(channels));
  stats_.emplace_back(name + ".stats", bn.stats);
  return bn;
}

ConvBnRelu AgfaNet::make_block(const std::string& name, int in_c, int out_c) {
  ConvBnRelu block;
  block.conv = make_conv(name + ".conv", in_c, out_c, k333);
  block.bn = make_bn(name + ".bn", out_c);
  return block;
}

FrmModule AgfaNet::make_frm(const std::string& name, int channels) {
  FrmModule frm;
  const int hidden = std::max(1, channels / config_.frm_reduction);
  frm.mlp_w1 = make_param(name + ".mlp.w1", {hidden, channels}, channels);
  frm.mlp_w2 = make_param(name + ".mlp.w2", {channels, hidden}, hidden);
  frm.spatial_conv = make_conv(name + ".spatial", 2, 1, k777);
  return frm;
}

AgfaNet::AgfaNet(const ModelConfig& config, uint64_t seed) : config_(config), seed_(seed) {
  validate_config(config_);
  init_rng_ = std::make_unique<Rng>(seed);

  const int depth = config_.depth;
  auto width = [&](int level) { return config_.base_channels << level; };  // level is 0-based

  encoder_.reserve(depth);
  for (int i = 0; i < depth; ++i) {
    const std::string name = "enc" + std::to_string(i + 1);
    Level level;
    level.block1 = make_block(name + ".block1", i == 0 ? config_.in_channels : width(i - 1), width(i));
    level.block2 = make_block(name + ".block2", width(i), width(i));
    encoder_.push_back(std::move(level));
  }

  if (config_.use_safa) {
    SafaModule safa;
    const int C = width(depth - 1);
    const int group = C / 4;
    for (int n = 0; n < 4; ++n) {
      const int d = config_.safa_dilations[n % config_.safa_dilations.size()];
      safa.group_convs.push_back(
          make_conv("safa.group" + std::to_string(n + 1), group, group, k333, {d, d, d}));
    }
    safa.self_attention = config_.use_safa_self_attention;
    if (safa.self_attention) {
      safa.q_conv = make_conv("safa.q.conv", C, C, {3, 1, 1});
      safa.q_bn = make_bn("safa.q.bn", C);
      safa.k_conv = make_conv("safa.k.conv", C, C, {1, 3, 1});
      safa.k_bn = make_bn("safa.k.bn", C);
      safa.v_conv = make_conv("safa.v.conv", C, C, {1, 1, 3});
      safa.v_bn = make_bn("safa.v.bn", C);
    }
    safa_ = std::move(safa);
  }

  decoder_.reserve(depth - 1);
  for (int i = depth - 2; i >= 0; --i) {
    const std::string name = "dec" + std::to_string(i + 1);
    Level level;
    level.block1 = make_block(name + ".block1", width(i) + width(i + 1), width(i));
    level.block2 = make_block(name + ".block2", width(i), width(i));
    decoder_.push_back(std::move(level));
  }

  if (config_.use_frm) {
    frm_skip_.reserve(depth - 1);
    for (int i = 0; i < depth - 1; ++i)
      frm_skip_.push_back(make_frm("frm.skip" + std::to_string(i + 1), width(i)));
    frm_decoder_.reserve(depth - 1);
    for (int i = depth - 2; i >= 0; --i)
      frm_decoder_.push_back(make_frm("frm.dec" + std::to_string(i + 1), width(i)));
  }

  if (config_.use_hfim) {
    hfim_.reserve(std::max(0, depth - 2));
    for (int i = depth - 3; i >= 0; --i) {
      const std::string name = "hfim" + std::to_string(i + 1);
      HfimFuse fuse;
      fuse.gate_proj = make_conv(name + ".gate", width(i) + width(i + 1), 1, k111);
      fuse.out_conv = make_conv(name + ".conv", width(i), width(i), k333);
      hfim_.push_back(std::move(fuse));
    }
  }

  head_ = make_conv("head", config_.base_channels, config_.out_channels, k111);

  init_rng_.reset();
}

Tensor AgfaNet::forward(const Tensor& input, BnMode mode) const {
  if (input.rank() != 4 || input.shape()[0] != config_.in_channels)
    fail(ErrorKind::kShapeMismatch,
         "forward: input must be [" + std::to_string(config_.in_channels) + ",D,H,W], got " +
             shape_str(input.shape()));
  const int multiple = config_.required_extent_multiple();
  for (int a = 1; a < 4; ++a) {
    if (input.shape()[a] % multiple != 0)
      fail(ErrorKind::kShapeMismatch,
           "forward: spatial extents must be divisible by " + std::to_string(multiple) +
               " (axis " + std::to_string(a) + " is " + std::to_string(input.shape()[a]) + ")");
  }
  return encode_decode(input, mode);
}

Tensor AgfaNet::encode_decode(const Tensor& input, BnMode mode) const {
  const int depth = config_.depth;
  std::vector<Tensor> skips;
  Tensor x = input;
  for (int i = 0; i < depth; ++i) {
    x = encoder_[i].block1.forward(x, mode);
    x = encoder_[i].block2.forward(x, mode);
    if (i < depth - 1) {
      skips.push_back(x);
      x = pool3d(x, PoolKind::kMax, {2, 2, 2}, {2, 2, 2});
    }
  }

  if (safa_) x = safa_->forward(x, mode);

  // decoder, deepest level first; decoder_[j] produces the level (depth-1-j) output
  std::vector<Tensor> outputs;  // outputs[j] at level depth-1-j (1-based levels)
  for (int j = 0; j < depth - 1; ++j) {
    const int level = depth - 2 - j;  // 0-based skip index
    Tensor up = upsample_trilinear2x(x);
    Tensor skip = skips[level];
    if (config_.use_frm) skip = frm_skip_[level].forward(skip);
    x = decoder_[j].block1.forward(concat({skip, up}, 0), mode);
    x = decoder_[j].block2.forward(x, mode);
    if (config_.use_frm) x = frm_decoder_[j].forward(x);
    outputs.push_back(x);
  }

  Tensor features = outputs.back();
  if (config_.use_hfim && depth >= 3) {
    // right-to-left: fuse the coarsest pair first, then carry the fused
    // features toward the finest scale
    Tensor carried = outputs[0];
    for (int k = 0; k < depth - 2; ++k) {
      carried = hfim_[k].forward(outputs[k + 1], carried);
    }
    features = carried;
  }

  return head_.forward(features);
}

Tensor* AgfaNet::find_parameter(const std::string& name) {
  for (auto& [n, t] : params_)
    if (n == name) return &t;
  return nullptr;
}

void AgfaNet::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

int64_t AgfaNet::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

}  // namespace agfa
