#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <agfa/config_io.hpp>
#include <agfa/error.hpp>
#include <agfa/grad_check.hpp>
#include <agfa/model.hpp>
#include <agfa/rng.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>

using namespace agfa;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from_values(shape, std::move(v));
}

FrmModule random_frm(int channels, int reduction, Rng& rng) {
  FrmModule frm;
  const int hidden = std::max(1, channels / reduction);
  frm.mlp_w1 = random_tensor({hidden, channels}, rng, -0.5, 0.5);
  frm.mlp_w2 = random_tensor({channels, hidden}, rng, -0.5, 0.5);
  frm.spatial_conv.params = ConvParams::same(2, 1, {7, 7, 7});
  frm.spatial_conv.weights = random_tensor({1, 2, 7, 7, 7}, rng, -0.1, 0.1);
  frm.spatial_conv.bias = random_tensor({1}, rng, -0.1, 0.1);
  return frm;
}

FrmModule zero_frm(int channels, int reduction) {
  FrmModule frm;
  const int hidden = std::max(1, channels / reduction);
  frm.mlp_w1 = Tensor::zeros({hidden, channels});
  frm.mlp_w2 = Tensor::zeros({channels, hidden});
  frm.spatial_conv.params = ConvParams::same(2, 1, {7, 7, 7});
  frm.spatial_conv.weights = Tensor::zeros({1, 2, 7, 7, 7});
  frm.spatial_conv.bias = Tensor::zeros({1});
  return frm;
}

}  // namespace

// ---------------------------------------------------------------------------
// channel attention

TEST_CASE("channel attention on constant input doubles the shared MLP response") {
  Rng rng(50);
  FrmModule frm = random_frm(8, 8, rng);
  Tensor y = Tensor::zeros({8, 2, 2, 2});
  for (int c = 0; c < 8; ++c)
    for (int i = 0; i < 8; ++i) y.values()[c * 8 + i] = 0.25 * (c + 1);  // constant per channel

  // avg pooling equals max pooling on constants, so A_c = sigmoid(2*MLP(v))
  Tensor pooled = global_pool_channelwise(y, PoolKind::kAvg);
  Tensor h = relu(matmul(frm.mlp_w1, reshape(pooled, {8, 1})));
  Tensor mlp_out = reshape(matmul(frm.mlp_w2, h), {8});
  Tensor expect = sigmoid(mul_scalar(mlp_out, 2.0));

  Tensor got = frm.channel_attention(y);
  for (int c = 0; c < 8; ++c) CHECK(got.values()[c] == doctest::Approx(expect.values()[c]).epsilon(1e-14));
}

TEST_CASE("channel attention with zero MLP is 0.5 per channel") {
  Rng rng(51);
  FrmModule frm = zero_frm(8, 8);
  Tensor y = random_tensor({8, 2, 2, 2}, rng);
  Tensor a = frm.channel_attention(y);
  for (double v : a.values()) CHECK(v == 0.5);
}

TEST_CASE("channel attention matches a primitive-level recomposition") {
  Rng rng(52);
  FrmModule frm = random_frm(8, 4, rng);
  Tensor y = random_tensor({8, 2, 2, 2}, rng);

  Tensor avg = global_pool_channelwise(y, PoolKind::kAvg);
  Tensor mx = global_pool_channelwise(y, PoolKind::kMax);
  auto mlp = [&](const Tensor& v) {
    return reshape(matmul(frm.mlp_w2, relu(matmul(frm.mlp_w1, reshape(v, {8, 1})))), {8});
  };
  Tensor expect = sigmoid(add(mlp(avg), mlp(mx)));

  Tensor got = frm.channel_attention(y);
  for (int c = 0; c < 8; ++c) CHECK(std::abs(got.values()[c] - expect.values()[c]) < 1e-12);
}

// ---------------------------------------------------------------------------
// spatial attention

TEST_CASE("spatial attention with zero conv is 0.5 everywhere") {
  Rng rng(53);
  FrmModule frm = zero_frm(4, 4);
  Tensor y = random_tensor({4, 3, 3, 3}, rng);
  Tensor a = frm.spatial_attention(y);
  REQUIRE(a.shape() == Shape{1, 3, 3, 3});
  for (double v : a.values()) CHECK(v == 0.5);
}

TEST_CASE("single-channel input makes the avg and max maps equal the input") {
  Rng rng(54);
  Tensor y = random_tensor({1, 2, 2, 2}, rng);
  Tensor avg = spatial_pool_across_channels(y, PoolKind::kAvg);
  Tensor mx = spatial_pool_across_channels(y, PoolKind::kMax);
  for (int64_t i = 0; i < y.size(); ++i) {
    CHECK(avg.values()[i] == y.values()[i]);
    CHECK(mx.values()[i] == y.values()[i]);
  }
}

TEST_CASE("spatial attention matches a primitive-level recomposition") {
  Rng rng(55);
  FrmModule frm = random_frm(4, 4, rng);
  Tensor y = random_tensor({4, 3, 3, 3}, rng);
  Tensor expect = sigmoid(frm.spatial_conv.forward(
      concat({spatial_pool_across_channels(y, PoolKind::kAvg),
              spatial_pool_across_channels(y, PoolKind::kMax)},
             0)));
  Tensor got = frm.spatial_attention(y);
  for (int64_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.values()[i] - expect.values()[i]) < 1e-12);
}

// ---------------------------------------------------------------------------
// FRM forward

TEST_CASE("frm of zero input is zero") {
  Rng rng(56);
  FrmModule frm = random_frm(4, 4, rng);
  Tensor out = frm.forward(Tensor::zeros({4, 2, 2, 2}));
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("frm with zero parameters scales the input by exactly 0.25") {
  Rng rng(57);
  FrmModule frm = zero_frm(4, 4);
  Tensor y = random_tensor({4, 2, 2, 2}, rng);
  Tensor out = frm.forward(y);
  for (int64_t i = 0; i < y.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(0.25 * y.values()[i]).epsilon(1e-14));
}

TEST_CASE("frm contracts every nonzero element (gates strictly inside (0,1))") {
  Rng rng(58);
  for (int trial = 0; trial < 100; ++trial) {
    FrmModule frm = random_frm(8, 8, rng);
    Tensor y = random_tensor({8, 2, 2, 2}, rng, -3.0, 3.0);
    Tensor out = frm.forward(y);
    AttentionMaps maps = frm.maps(y);
    for (double v : maps.channel_map.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (double v : maps.spatial_map.values()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
    for (int64_t i = 0; i < y.size(); ++i)
      if (y.values()[i] != 0.0) CHECK(std::abs(out.values()[i]) < std::abs(y.values()[i]));
  }
}

TEST_CASE("frm matches the equation-level recomposition") {
  Rng rng(59);
  FrmModule frm = random_frm(8, 4, rng);
  Tensor y = random_tensor({8, 3, 3, 3}, rng);
  Tensor yp = mul(y, frm.channel_attention(y));
  Tensor expect = mul(yp, frm.spatial_attention(yp));
  Tensor got = frm.forward(y);
  for (int64_t i = 0; i < y.size(); ++i)
    CHECK(std::abs(got.values()[i] - expect.values()[i]) < 1e-12);
}

// ---------------------------------------------------------------------------
// SAFA

namespace {

SafaModule random_safa(int channels, const std::vector<int>& dilations, bool self_attention,
                       Rng& rng, bool zero_qkv = false) {
  SafaModule safa;
  const int group = channels / 4;
  for (int n = 0; n < 4; ++n) {
    const int d = dilations[n % dilations.size()];
    Conv3dLayer conv;
    conv.params = ConvParams::same(group, group, {3, 3, 3}, {d, d, d});
    conv.weights = random_tensor({group, group, 3, 3, 3}, rng, -0.4, 0.4);
    conv.bias = random_tensor({group}, rng, -0.2, 0.2);
    safa.group_convs.push_back(conv);
  }
  safa.self_attention = self_attention;
  if (self_attention) {
    auto make_qkv = [&](std::array<int, 3> kernel, bool zero) {
      Conv3dLayer conv;
      conv.params = ConvParams::same(channels, channels, kernel);
      conv.weights = zero ? Tensor::zeros({channels, channels, kernel[0], kernel[1], kernel[2]})
                          : random_tensor({channels, channels, kernel[0], kernel[1], kernel[2]}, rng, -0.3, 0.3);
      conv.bias = Tensor::zeros({channels});
      return conv;
    };
    auto make_bn = [&](int c) {
      BatchNorm3d bn;
      bn.scale = Tensor::full({c}, 1.0);
      bn.shift = Tensor::zeros({c});
      bn.stats = std::make_shared<RunningStats>(RunningStats::identity(c));
      return bn;
    };
    safa.q_conv = make_qkv({3, 1, 1}, zero_qkv);
    safa.k_conv = make_qkv({1, 3, 1}, zero_qkv);
    safa.v_conv = make_qkv({1, 1, 3}, zero_qkv);
    safa.q_bn = make_bn(channels);
    safa.k_bn = make_bn(channels);
    safa.v_bn = make_bn(channels);
  }
  return safa;
}

}  // namespace

TEST_CASE("safa with zeroed q/k/v convs reduces to the gated concat exactly") {
  Rng rng(60);
  SafaModule safa = random_safa(8, {1, 2, 3, 4}, true, rng, /*zero_qkv=*/true);
  Tensor y = random_tensor({8, 2, 2, 2}, rng);
  Tensor with_attention = safa.forward(y, BnMode::kEval);

  SafaModule no_attention = safa;
  no_attention.self_attention = false;
  Tensor cat_only = no_attention.forward(y, BnMode::kEval);

  // zero V makes the residual term exactly zero
  REQUIRE(with_attention.shape() == cat_only.shape());
  for (int64_t i = 0; i < cat_only.size(); ++i)
    CHECK(with_attention.values()[i] == cat_only.values()[i]);
}

TEST_CASE("safa single-group degenerate config acts as a gated convolution") {
  Rng rng(61);
  // all four groups share dilation 1; with 4 channels each group is one channel
  SafaModule safa = random_safa(4, {1}, false, rng);
  Tensor y = random_tensor({4, 3, 3, 3}, rng);
  Tensor out = safa.forward(y, BnMode::kEval);
  auto groups = split(y, 0, 4);
  for (int n = 0; n < 4; ++n) {
    Tensor z = safa.group_convs[n].forward(groups[n]);
    Tensor expect = mul(sigmoid(z), z);
    for (int64_t i = 0; i < expect.size(); ++i)
      CHECK(out.values()[n * expect.size() + i] == doctest::Approx(expect.values()[i]).epsilon(1e-14));
  }
}

TEST_CASE("safa attention rows sum to one and the output matches a recomposition") {
  Rng rng(62);
  SafaModule safa = random_safa(4, {1, 2, 3, 4}, true, rng);
  Tensor y = random_tensor({4, 3, 3, 3}, rng);
  const int C = 4, L = 27;

  // recomposition from primitives
  auto groups = split(y, 0, 4);
  std::vector<Tensor> gated;
  for (int n = 0; n < 4; ++n) {
    Tensor z = safa.group_convs[n].forward(groups[n]);
    gated.push_back(mul(sigmoid(z), z));
  }
  Tensor cat = concat(gated, 0);
  Tensor q = relu(safa.q_bn.forward(safa.q_conv.forward(cat), BnMode::kEval));
  Tensor k = relu(safa.k_bn.forward(safa.k_conv.forward(cat), BnMode::kEval));
  Tensor v = relu(safa.v_bn.forward(safa.v_conv.forward(cat), BnMode::kEval));
  Tensor attn = softmax(matmul(transpose2d(reshape(q, {C, L})), reshape(k, {C, L})), 1);
  Tensor expect = add(cat, reshape(matmul(reshape(v, {C, L}), transpose2d(attn)), {C, 3, 3, 3}));

  for (int r = 0; r < L; ++r) {
    double row = 0.0;
    for (int c = 0; c < L; ++c) row += attn.values()[r * L + c];
    CHECK(std::abs(row - 1.0) < 1e-6);
  }

  Tensor got = safa.forward(y, BnMode::kEval);
  for (int64_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.values()[i] - expect.values()[i]) < 1e-10);
}

TEST_CASE("safa shape is preserved") {
  Rng rng(63);
  SafaModule safa = random_safa(8, {1, 2, 3, 4}, true, rng);
  Tensor y = random_tensor({8, 2, 4, 2}, rng);
  CHECK(safa.forward(y, BnMode::kEval).shape() == y.shape());
}

// ---------------------------------------------------------------------------
// HFIM

namespace {

HfimFuse random_hfim(int c_low, int c_high, Rng& rng, bool zero_gate = false) {
  HfimFuse fuse;
  fuse.gate_proj.params = ConvParams::same(c_low + c_high, 1, {1, 1, 1});
  fuse.gate_proj.weights = zero_gate ? Tensor::zeros({1, c_low + c_high, 1, 1, 1})
                                     : random_tensor({1, c_low + c_high, 1, 1, 1}, rng, -0.5, 0.5);
  fuse.gate_proj.bias = Tensor::zeros({1});
  fuse.out_conv.params = ConvParams::same(c_low, c_low, {3, 3, 3});
  fuse.out_conv.weights = random_tensor({c_low, c_low, 3, 3, 3}, rng, -0.3, 0.3);
  fuse.out_conv.bias = random_tensor({c_low}, rng, -0.2, 0.2);
  return fuse;
}

}  // namespace

TEST_CASE("hfim with zero low-scale features yields the conv bias field") {
  Rng rng(64);
  HfimFuse fuse = random_hfim(4, 8, rng);
  Tensor y_low = Tensor::zeros({4, 4, 4, 4});
  Tensor y_high = random_tensor({8, 2, 2, 2}, rng);
  Tensor out = fuse.forward(y_low, y_high);
  REQUIRE(out.shape() == Shape{4, 4, 4, 4});
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 64; ++i)
      CHECK(out.values()[c * 64 + i] == fuse.out_conv.bias.values()[c]);
}

TEST_CASE("hfim with zero gate projection halves the low features before the conv") {
  Rng rng(65);
  HfimFuse fuse = random_hfim(4, 8, rng, /*zero_gate=*/true);
  Tensor y_low = random_tensor({4, 4, 4, 4}, rng);
  Tensor y_high = random_tensor({8, 2, 2, 2}, rng);
  Tensor out = fuse.forward(y_low, y_high);
  Tensor expect = fuse.out_conv.forward(mul_scalar(y_low, 0.5));
  for (int64_t i = 0; i < out.size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-14));
}

TEST_CASE("hfim matches the equation-level recomposition on a random pair") {
  Rng rng(66);
  HfimFuse fuse = random_hfim(4, 8, rng);
  Tensor y_low = random_tensor({4, 4, 4, 4}, rng);
  Tensor y_high = random_tensor({8, 2, 2, 2}, rng);
  Tensor up = upsample_trilinear2x(y_high);
  Tensor gate = sigmoid(fuse.gate_proj.forward(concat({y_low, up}, 0)));
  Tensor expect = fuse.out_conv.forward(mul(y_low, gate));
  Tensor got = fuse.forward(y_low, y_high);
  for (int64_t i = 0; i < got.size(); ++i)
    CHECK(std::abs(got.values()[i] - expect.values()[i]) < 1e-10);
}

TEST_CASE("hfim rejects misaligned extents") {
  Rng rng(67);
  HfimFuse fuse = random_hfim(4, 8, rng);
  Tensor y_low = Tensor::zeros({4, 4, 4, 4});
  Tensor y_high = Tensor::zeros({8, 3, 2, 2});
  CHECK_THROWS_AS(fuse.forward(y_low, y_high), Error);
}

// ---------------------------------------------------------------------------
// network construction + forward

TEST_CASE("baseline config has all module flags off") {
  auto rows = ablation_configs();
  REQUIRE(rows.size() == 11);
  const ModelConfig& baseline = rows[0].second;
  CHECK(rows[0].first == "Baseline");
  CHECK_FALSE(baseline.use_frm);
  CHECK_FALSE(baseline.use_safa);
  CHECK_FALSE(baseline.use_safa_self_attention);
  CHECK_FALSE(baseline.use_hfim);
}

TEST_CASE("ablation grid covers the published structure") {
  auto rows = ablation_configs();
  REQUIRE(rows.size() == 11);
  CHECK(rows[1].first == "Net 1");
  CHECK(rows[1].second.use_frm);
  CHECK_FALSE(rows[1].second.use_safa);

  // Nets 2..5 sweep the single dilation rates 1..4 with self-attention
  for (int d = 1; d <= 4; ++d) {
    const auto& [name, c] = rows[1 + d];
    CHECK(name == "Net " + std::to_string(d + 1));
    CHECK(c.use_safa);
    CHECK(c.use_safa_self_attention);
    REQUIRE(c.safa_dilations.size() == 1);
    CHECK(c.safa_dilations[0] == d);
  }

  CHECK(rows[6].first == "Net 6");
  CHECK(rows[6].second.use_hfim);
  CHECK_FALSE(rows[6].second.use_frm);
  CHECK_FALSE(rows[6].second.use_safa);

  CHECK(rows[7].second.use_frm);
  CHECK(rows[7].second.use_safa);
  CHECK(rows[7].second.safa_dilations == std::vector<int>{3});

  CHECK(rows[8].second.use_frm);
  CHECK(rows[8].second.use_hfim);

  CHECK(rows[9].second.use_safa);
  CHECK(rows[9].second.use_hfim);

  const auto& [name, full] = rows[10];
  CHECK(name == "AGFA-Net");
  CHECK(full.use_frm);
  CHECK(full.use_safa);
  CHECK(full.use_safa_self_attention);
  CHECK(full.use_hfim);
  CHECK(full.safa_dilations == std::vector<int>{1, 2, 3, 4});
}

TEST_CASE("identical (config, seed) builds bitwise-identical parameters") {
  ModelConfig c = ablation_configs(8).back().second;
  AgfaNet a(c, 1234);
  AgfaNet b(c, 1234);
  REQUIRE(a.named_parameters().size() == b.named_parameters().size());
  for (size_t i = 0; i < a.named_parameters().size(); ++i) {
    const auto& [an, at] = a.named_parameters()[i];
    const auto& [bn, bt] = b.named_parameters()[i];
    CHECK(an == bn);
    REQUIRE(at.size() == bt.size());
    for (int64_t j = 0; j < at.size(); ++j) CHECK(at.values()[j] == bt.values()[j]);
  }

  AgfaNet other(c, 1235);
  bool any_diff = false;
  for (size_t i = 0; i < a.named_parameters().size() && !any_diff; ++i) {
    const auto& at = a.named_parameters()[i].second;
    const auto& ot = other.named_parameters()[i].second;
    for (int64_t j = 0; j < at.size(); ++j)
      if (at.values()[j] != ot.values()[j]) {
        any_diff = true;
        break;
      }
  }
  CHECK(any_diff);
}

TEST_CASE("parameter names are unique") {
  ModelConfig c = ablation_configs(8).back().second;
  AgfaNet net(c, 7);
  std::vector<std::string> names;
  for (const auto& [n, t] : net.named_parameters()) names.push_back(n);
  auto sorted = names;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("forward produces logits of the input extents for a 32-cube") {
  ModelConfig c;
  c.base_channels = 8;
  AgfaNet net(c, 1);
  Tensor input = Tensor::zeros({1, 32, 32, 32});
  Tensor logits = net.forward(input, BnMode::kEval);
  CHECK(logits.shape() == Shape{1, 32, 32, 32});
}

TEST_CASE("forward rejects extents not divisible by the level multiple") {
  ModelConfig c;
  c.base_channels = 8;
  AgfaNet net(c, 1);
  try {
    net.forward(Tensor::zeros({1, 24, 32, 32}), BnMode::kEval);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("16") != std::string::npos);
  }
}

TEST_CASE("eval-mode forward is deterministic on a fresh network") {
  ModelConfig c;
  c.base_channels = 8;
  AgfaNet net(c, 99);
  Tensor input = Tensor::zeros({1, 16, 16, 16});
  Tensor a = net.forward(input, BnMode::kEval);
  Tensor b = net.forward(input, BnMode::kEval);
  for (int64_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == b.values()[i]);
}

TEST_CASE("every ablation configuration forwards at 32-cube with the right shape") {
  Rng rng(68);
  Tensor input = random_tensor({1, 32, 32, 32}, rng);
  const Shape expected{1, 32, 32, 32};
  for (const auto& [name, config] : ablation_configs(8)) {
    AgfaNet net(config, 5);
    Tensor logits = net.forward(input, BnMode::kEval);
    CHECK_MESSAGE(logits.shape() == expected, name);
    for (double v : logits.values()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("config file round trip and name resolution") {
  ModelConfig c = ablation_configs().back().second;
  c.base_channels = 6;  // not divisible by 4 -> must throw on parse
  CHECK_THROWS_AS(config_from_text(config_to_text(c)), Error);

  c.base_channels = 16;
  ModelConfig back = config_from_text(config_to_text(c));
  CHECK(back.base_channels == c.base_channels);
  CHECK(back.use_frm == c.use_frm);
  CHECK(back.use_safa == c.use_safa);
  CHECK(back.safa_dilations == c.safa_dilations);
  CHECK(back.use_hfim == c.use_hfim);

  ModelConfig baseline = resolve_config("baseline");
  CHECK_FALSE(baseline.use_frm);
  ModelConfig agfa = resolve_config("agfa");
  CHECK(agfa.use_frm);
  CHECK(agfa.use_hfim);
  ModelConfig net4 = resolve_config("Net 4");
  CHECK(net4.safa_dilations == std::vector<int>{3});

  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "agfa_model_test";
  fs::create_directories(dir);
  save_config((dir / "conf.txt").string(), c);
  ModelConfig loaded = resolve_config((dir / "conf.txt").string());
  CHECK(loaded.use_hfim == c.use_hfim);
  CHECK_THROWS_AS(resolve_config((dir / "missing.txt").string()), Error);
}

TEST_CASE("invalid configs are rejected at construction") {
  ModelConfig c;
  c.base_channels = 6;  // not divisible by 4
  CHECK_THROWS_AS(validate_config(c), Error);
  c.base_channels = 8;
  c.use_safa = true;
  c.safa_dilations = {};
  CHECK_THROWS_AS(validate_config(c), Error);
  c.safa_dilations = {0};
  CHECK_THROWS_AS(validate_config(c), Error);
}

// ---------------------------------------------------------------------------
// end-to-end differentiability

TEST_CASE("finite differences validate 50 sampled parameters per module through a full forward") {
  ModelConfig c = ablation_configs(4).back().second;  // every module enabled
  c.frm_reduction = 4;
  AgfaNet net(c, 11);
  Rng rng(69);
  Tensor input = random_tensor({1, 16, 16, 16}, rng, 0.0, 1.0);

  // analytic gradients once
  net.zero_grad();
  Tensor logits = net.forward(input, BnMode::kEval);
  Tensor loss = sum(mul(logits, logits));
  backward(loss);

  auto loss_value = [&]() {
    Tensor l = net.forward(input, BnMode::kEval);
    Tensor s = sum(mul(l, l));
    return s.value();
  };

  // group the parameter list by module prefix, then draw 50 random
  // elements per group
  const std::vector<std::string> groups{"enc", "dec", "safa", "frm", "hfim", "head"};
  auto& params = const_cast<std::vector<std::pair<std::string, Tensor>>&>(net.named_parameters());
  Rng pick(70);
  for (const std::string& group : groups) {
    std::vector<size_t> members;
    for (size_t i = 0; i < params.size(); ++i)
      if (params[i].first.rfind(group, 0) == 0) members.push_back(i);
    REQUIRE_MESSAGE(!members.empty(), group);

    int checked = 0;
    double worst = 0.0;
    std::string worst_at;
    for (int trial = 0; trial < 50; ++trial) {
      auto& [name, tensor] = params[members[static_cast<size_t>(
          pick.uniform_int(0, static_cast<int64_t>(members.size()) - 1))]];
      if (!tensor.has_grad()) continue;
      int64_t idx = pick.uniform_int(0, tensor.size() - 1);
      // step small enough that the probe rarely crosses a relu/max-pool
      // kink somewhere in the 16^3 volume; crossing one biases the
      // quotient by O(h) and dominates the error at larger steps
      const double h = 1e-6;
      double saved = tensor.values()[idx];
      tensor.values()[idx] = saved + h;
      double up = loss_value();
      tensor.values()[idx] = saved - h;
      double down = loss_value();
      tensor.values()[idx] = saved;
      double numeric = (up - down) / (2 * h);
      double analytic = tensor.grad()[idx];
      double rel =
          std::abs(numeric - analytic) / std::max({1.0, std::abs(numeric), std::abs(analytic)});
      if (rel > worst) {
        worst = rel;
        worst_at = name + "[" + std::to_string(idx) + "]";
      }
      ++checked;
    }
    CHECK_MESSAGE(worst < 1e-3, group, " worst offender ", worst_at, " rel ", worst);
    CHECK(checked == 50);
  }
}
