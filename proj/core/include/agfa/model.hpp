#pragma once

#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "agfa/rng.hpp"
#include "agfa/tensor.hpp"

namespace agfa {

// Architecture switches and hyperparameters. Every row of the ablation grid
// (Baseline, Net 1..9, the full network) is expressible here.
struct ModelConfig {
  int base_channels = 16;  // channel width of the first encoder level
  int depth = 5;           // encoder levels; spatial extents halve per level
  int in_channels = 1;
  int out_channels = 1;

  bool use_frm = false;
  int frm_reduction = 8;  // channel-attention MLP bottleneck ratio

  bool use_safa = false;
  std::vector<int> safa_dilations{1, 2, 3, 4};  // cycled over the four groups
  bool use_safa_self_attention = false;

  bool use_hfim = false;

  // Extents must be divisible by 2^(depth-1).
  int required_extent_multiple() const { return 1 << (depth - 1); }
};

// Throws on violated invariants (positivity, divisibility by 4 under SAFA,
// reduction vs width).
void validate_config(const ModelConfig& config);

// The eleven ablation configurations, in table order:
//   Baseline; Net 1 (FRM); Net 2..5 (SAFA restricted to a single dilation
//   rate 1..4, with self-attention); Net 6 (HFIM); Net 7 (FRM + SAFA-d3);
//   Net 8 (FRM + HFIM); Net 9 (SAFA-d3 + HFIM); AGFA-Net (everything, all
//   four dilation rates).
std::vector<std::pair<std::string, ModelConfig>> ablation_configs(int base_channels = 16);

// ---------------------------------------------------------------------------
// layers

struct Conv3dLayer {
  Tensor weights;  // [C_out, C_in, kd, kh, kw]
  Tensor bias;     // [C_out]
  ConvParams params;

  Tensor forward(const Tensor& x) const { return conv3d(x, weights, bias, params); }
};

struct BatchNorm3d {
  Tensor scale;  // gamma
  Tensor shift;  // beta
  // Heap-allocated so registries and copies stay stable; copying a layer
  // shares the statistics the same way copying a Tensor shares its values.
  std::shared_ptr<RunningStats> stats;

  Tensor forward(const Tensor& x, BnMode mode) const {
    return batch_norm(x, scale, shift, *stats, mode);
  }
};

struct ConvBnRelu {
  Conv3dLayer conv;
  BatchNorm3d bn;
  Tensor forward(const Tensor& x, BnMode mode) const { return relu(bn.forward(conv.forward(x), mode)); }
};

// Channel map in (0,1) and spatial map in (0,1); the two multiplicative
// gates of the feature refinement stage.
struct AttentionMaps {
  Tensor channel_map;  // [C]
  Tensor spatial_map;  // [1,D,H,W]
};

// Feature refinement: channel attention (shared two-layer MLP over global
// avg- and max-pooled descriptors, no biases) followed by spatial attention
// (7x7x7 convolution over the concatenated channel-avg/max maps). Both
// gates multiply the features in sequence.
struct FrmModule {
  Tensor mlp_w1;  // [hidden, C]
  Tensor mlp_w2;  // [C, hidden]
  Conv3dLayer spatial_conv;  // 2 -> 1 channels, 7x7x7, padding 3

  Tensor channel_attention(const Tensor& y) const;  // -> [C]
  Tensor spatial_attention(const Tensor& y) const;  // -> [1,D,H,W]
  AttentionMaps maps(const Tensor& y) const;
  Tensor forward(const Tensor& y) const;
};

// Scale-adaptive feature augmentation at the encoder bottleneck: a four-way
// channel split through dilated 3x3x3 convolutions with sigmoid
// self-gating, then an optional Q/K/V self-attention stage over the
// flattened spatial axis with a residual connection.
struct SafaModule {
  std::vector<Conv3dLayer> group_convs;  // 4 convs, C/4 -> C/4
  bool self_attention = false;
  Conv3dLayer q_conv, k_conv, v_conv;  // anisotropic 3x1x1 / 1x3x1 / 1x1x3
  BatchNorm3d q_bn, k_bn, v_bn;

  Tensor forward(const Tensor& y, BnMode mode) const;
};

// One right-to-left fusion step: gate = sigmoid(1x1x1 projection of
// concat(y_low, upsample(y_high))), applied to y_low, then a 3x3x3
// convolution. Preserves y_low's extents.
struct HfimFuse {
  Conv3dLayer gate_proj;  // (C_low + C_high) -> 1, 1x1x1
  Conv3dLayer out_conv;   // C_low -> C_low, 3x3x3

  Tensor forward(const Tensor& y_low, const Tensor& y_high) const;
};

// ---------------------------------------------------------------------------
// network

// U-shaped encoder-decoder with the attention modules placed per config:
// two conv+BN+ReLU blocks per level, channels doubling each level,
// max-pool stride 2 downsampling, SAFA after the deepest encoder level,
// trilinear upsampling with skip concatenation in the decoder, FRM on each
// skip and each decoder output, HFIM fusing decoder outputs right to left,
// and a final 1x1x1 projection to one logit channel.
class AgfaNet {
 public:
  AgfaNet(const ModelConfig& config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  uint64_t seed() const { return seed_; }

  // Logit volume with the input's spatial extents. Train mode updates
  // batch-norm running statistics; eval mode is pure.
  Tensor forward(const Tensor& input, BnMode mode) const;

  // Learnable tensors keyed by stable hierarchical names, in construction
  // order. The same (config, seed) always yields the same names and values.
  const std::vector<std::pair<std::string, Tensor>>& named_parameters() const { return params_; }
  // Batch-norm running statistics, keyed like the parameters.
  const std::vector<std::pair<std::string, std::shared_ptr<RunningStats>>>& named_stats() const {
    return stats_;
  }

  Tensor* find_parameter(const std::string& name);

  void zero_grad();
  int64_t parameter_count() const;

 private:
  struct Level {
    ConvBnRelu block1, block2;
  };

  Tensor encode_decode(const Tensor& input, BnMode mode) const;

  Conv3dLayer make_conv(const std::string& name, int in_c, int out_c, std::array<int, 3> kernel,
                        std::array<int, 3> dilation = {1, 1, 1});
  BatchNorm3d make_bn(const std::string& name, int channels);
  ConvBnRelu make_block(const std::string& name, int in_c, int out_c);
  FrmModule make_frm(const std::string& name, int channels);
  Tensor make_param(const std::string& name, const Shape& shape, int fan_in);

  ModelConfig config_;
  uint64_t seed_ = 0;
  std::unique_ptr<Rng> init_rng_;  // alive only during construction

  std::vector<Level> encoder_;
  std::vector<Level> decoder_;  // decoder_[i] produces the level-(i+1) output
  std::optional<SafaModule> safa_;
  std::vector<FrmModule> frm_skip_;     // per skip connection, levels 1..depth-1
  std::vector<FrmModule> frm_decoder_;  // per decoder output
  std::vector<HfimFuse> hfim_;          // fusion steps, coarse to fine
  Conv3dLayer head_;

  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, std::shared_ptr<RunningStats>>> stats_;
};

}  // namespace agfa
