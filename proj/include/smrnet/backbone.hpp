#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "smrnet/attention.hpp"
#include "smrnet/layers.hpp"

namespace smrnet {

// Stage layout of the feature extractor. `channels` are the widths of conv1
// and the four residual stages; `blocks` the residual block counts per stage.
struct BackboneConfig {
  std::array<int64_t, 5> channels = {16, 16, 32, 64, 128};
  std::array<int, 4> blocks = {1, 1, 1, 1};
  int64_t in_channels = 1;
  bool attention_enabled = true;
  // false: one CBAM per stage output (default). true: one after every
  // residual block instead, for fidelity experiments.
  bool attention_per_block = false;
  int64_t reduction = 4;

  static BackboneConfig tiny() { return BackboneConfig{}; }

  static BackboneConfig full() {
    BackboneConfig c;
    c.channels = {64, 64, 128, 256, 512};
    c.blocks = {3, 4, 6, 3};
    return c;
  }
};

// Two 3x3 convs with batchnorm, identity or 1x1-projection shortcut.
template <class T>
struct ResidualBlock {
  Conv2dLayer<T> conv1, conv2;
  BatchNormLayer<T> bn1, bn2;
  std::optional<Conv2dLayer<T>> proj;
  std::optional<BatchNormLayer<T>> proj_bn;
  std::optional<CbamBlock<T>> attention;

  ResidualBlock() = default;
  ResidualBlock(int64_t in_ch, int64_t out_ch, int64_t stride)
      : conv1(out_ch, in_ch, 3, stride, 1, 1),
        conv2(out_ch, out_ch, 3, 1, 1, 1),
        bn1(out_ch),
        bn2(out_ch) {
    if (stride != 1 || in_ch != out_ch) {
      proj.emplace(out_ch, in_ch, 1, stride, 0, 1);
      proj_bn.emplace(out_ch);
    }
  }

  TensorT<T> forward(const TensorT<T>& x) {
    auto y = relu(batchnorm(bn1, conv2d(conv1, x)));
    y = batchnorm(bn2, conv2d(conv2, y));
    auto shortcut = proj ? batchnorm(*proj_bn, conv2d(*proj, x)) : x;
    auto out = relu(add(y, shortcut));
    if (attention) out = cbam(*attention, out);
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    conv1.visit(prefix + ".conv1", v);
    bn1.visit(prefix + ".bn1", v);
    conv2.visit(prefix + ".conv2", v);
    bn2.visit(prefix + ".bn2", v);
    if (proj) {
      proj->visit(prefix + ".proj", v);
      proj_bn->visit(prefix + ".proj_bn", v);
    }
    if (attention) attention->visit(prefix + ".attention", v);
  }

  void set_training(bool training) {
    bn1.training = training;
    bn2.training = training;
    if (proj_bn) proj_bn->training = training;
  }

  void init(Rng& rng) {
    init_params(conv1, rng);
    init_params(bn1, rng);
    init_params(conv2, rng);
    init_params(bn2, rng);
    if (proj) {
      init_params(*proj, rng);
      init_params(*proj_bn, rng);
    }
    if (attention) attention->init(rng);
  }
};

// The three-scale feature pyramid: f1/f2/f3 at strides 8/16/32.
template <class T>
struct FeaturePyramidT {
  TensorT<T> f1, f2, f3;
};

using FeaturePyramid = FeaturePyramidT<float>;

// Residual feature extractor: 7x7 stem + four residual stages, a CBAM block
// after the stem pool and after each stage, tapping stages 3/4/5 as the
// pyramid outputs.
template <class T>
struct Backbone {
  BackboneConfig cfg;
  Conv2dLayer<T> conv1;
  BatchNormLayer<T> bn1;
  std::optional<CbamBlock<T>> stem_attention;
  std::array<std::vector<ResidualBlock<T>>, 4> stages;
  std::array<std::optional<CbamBlock<T>>, 4> stage_attention;

  explicit Backbone(const BackboneConfig& config)
      : cfg(config),
        conv1(config.channels[0], config.in_channels, 7, 2, 3, 1),
        bn1(config.channels[0]) {
    const bool stage_level = cfg.attention_enabled && !cfg.attention_per_block;
    if (cfg.attention_enabled)
      stem_attention.emplace(cfg.channels[0], cfg.reduction);
    int64_t in_ch = cfg.channels[0];
    for (int s = 0; s < 4; ++s) {
      const int64_t out_ch = cfg.channels[static_cast<size_t>(s) + 1];
      const int64_t stride = s == 0 ? 1 : 2;
      for (int b = 0; b < cfg.blocks[static_cast<size_t>(s)]; ++b) {
        stages[static_cast<size_t>(s)].emplace_back(b == 0 ? in_ch : out_ch, out_ch,
                                                    b == 0 ? stride : 1);
        if (cfg.attention_enabled && cfg.attention_per_block)
          stages[static_cast<size_t>(s)].back().attention.emplace(out_ch, cfg.reduction);
      }
      if (stage_level)
        stage_attention[static_cast<size_t>(s)].emplace(out_ch, cfg.reduction);
      in_ch = out_ch;
    }
  }

  FeaturePyramidT<T> forward(const TensorT<T>& image) {
    check_arg(image.rank() == 4, "backbone: expects [N,C,H,W]");
    const int64_t H = image.dim(2), W = image.dim(3);
    check_arg(H % 32 == 0 && W % 32 == 0,
              "backbone: input extents must be divisible by 32, got " +
                  shape_str(image.shape()));
    check_arg(H >= 64 && W >= 64, "backbone: input extents must be >= 64");

    auto x = relu(batchnorm(bn1, conv2d(conv1, image)));
    x = pool2d(PoolKind::max, x, 3, 2, 1);
    if (stem_attention) x = cbam(*stem_attention, x);

    FeaturePyramidT<T> pyr;
    for (int s = 0; s < 4; ++s) {
      for (auto& block : stages[static_cast<size_t>(s)]) x = block.forward(x);
      if (stage_attention[static_cast<size_t>(s)])
        x = cbam(*stage_attention[static_cast<size_t>(s)], x);
      if (s == 1) pyr.f1 = x;
      if (s == 2) pyr.f2 = x;
      if (s == 3) pyr.f3 = x;
    }
    return pyr;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    conv1.visit(prefix + ".conv1", v);
    bn1.visit(prefix + ".bn1", v);
    if (stem_attention) stem_attention->visit(prefix + ".stem_attention", v);
    for (int s = 0; s < 4; ++s) {
      const std::string stage = prefix + ".stage" + std::to_string(s + 2);
      int b = 0;
      for (auto& block : stages[static_cast<size_t>(s)])
        block.visit(stage + ".block" + std::to_string(b++), v);
      if (stage_attention[static_cast<size_t>(s)])
        stage_attention[static_cast<size_t>(s)]->visit(stage + ".attention", v);
    }
  }

  void set_training(bool training) {
    bn1.training = training;
    for (auto& stage : stages)
      for (auto& block : stage) block.set_training(training);
  }

  void init(Rng& rng) {
    init_params(conv1, rng);
    init_params(bn1, rng);
    if (stem_attention) stem_attention->init(rng);
    for (auto& stage : stages)
      for (auto& block : stage) block.init(rng);
    for (auto& att : stage_attention)
      if (att) att->init(rng);
  }

  // Pyramid channel widths (stages 3/4/5).
  int64_t f1_channels() const { return cfg.channels[2]; }
  int64_t f2_channels() const { return cfg.channels[3]; }
  int64_t f3_channels() const { return cfg.channels[4]; }
};

// Counts trainable scalars reachable through a visit() method.
template <class T, class Module>
int64_t param_count(Module& m) {
  int64_t count = 0;
  ParamVisitor<T> v = [&](const std::string&, TensorT<T>& t, ParamKind kind) {
    if (kind == ParamKind::trainable) count += t.numel();
  };
  if constexpr (requires { m.visit(v); })
    m.visit(v);
  else
    m.visit("m", v);
  return count;
}

}  // namespace smrnet
