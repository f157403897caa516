#pragma once

#include <array>
#include <string>

#include "smrnet/backbone.hpp"

namespace smrnet {

struct FusionConfig {
  int64_t fused_channels = 64;  // Cf: 64 tiny / 256 full
  int64_t d2 = 2;               // dilation on the F2 branch
  int64_t d3 = 4;               // dilation on the F3 branch
  int64_t reduction = 4;
};

// One multi-scale branch: resolution-preserving 3x3 conv (dilated on the
// coarser scales), CBAM, 1x1 projection to the common width, then
// nearest-neighbor upsampling to the F1 grid.
template <class T>
struct MsffBranch {
  Conv2dLayer<T> conv;        // 3x3, padding = dilation
  CbamBlock<T> attention;
  Conv2dLayer<T> projection;  // 1x1 -> Cf
  int64_t upsample_factor = 1;

  MsffBranch() = default;
  MsffBranch(int64_t in_ch, int64_t fused_ch, int64_t dilation, int64_t up,
             int64_t reduction)
      : conv(in_ch, in_ch, 3, 1, dilation, dilation),
        attention(in_ch, reduction),
        projection(fused_ch, in_ch, 1, 1, 0, 1),
        upsample_factor(up) {}

  TensorT<T> forward(const TensorT<T>& f) {
    auto y = conv2d(conv, f);
    y = cbam(attention, y);
    y = conv2d(projection, y);
    return upsample_nearest(y, upsample_factor);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    conv.visit(prefix + ".conv", v);
    attention.visit(prefix + ".attention", v);
    projection.visit(prefix + ".projection", v);
  }

  void init(Rng& rng) {
    init_params(conv, rng);
    attention.init(rng);
    init_params(projection, rng);
  }
};

template <class T>
struct Msff {
  FusionConfig cfg;
  MsffBranch<T> b1, b2, b3;

  Msff() = default;
  Msff(const FusionConfig& config, int64_t f1_ch, int64_t f2_ch, int64_t f3_ch)
      : cfg(config),
        b1(f1_ch, config.fused_channels, 1, 1, config.reduction),
        b2(f2_ch, config.fused_channels, config.d2, 2, config.reduction),
        b3(f3_ch, config.fused_channels, config.d3, 4, config.reduction) {}

  std::array<TensorT<T>, 3> forward(const FeaturePyramidT<T>& pyr) {
    std::array<TensorT<T>, 3> out = {b1.forward(pyr.f1), b2.forward(pyr.f2),
                                     b3.forward(pyr.f3)};
    check_arg(out[0].shape() == out[1].shape() && out[1].shape() == out[2].shape(),
              "msff: branch outputs disagree, " + shape_str(out[0].shape()) + " / " +
                  shape_str(out[1].shape()) + " / " + shape_str(out[2].shape()));
    return out;
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    b1.visit(prefix + ".b1", v);
    b2.visit(prefix + ".b2", v);
    b3.visit(prefix + ".b3", v);
  }

  void init(Rng& rng) {
    b1.init(rng);
    b2.init(rng);
    b3.init(rng);
  }
};

// Adaptive reweighting: a 1x1 compressor and a small MLP, both shared across
// scales, produce one score per scale per image; the softmax of the three
// scores convexly blends the branch outputs.
template <class T>
struct RwNet {
  Conv2dLayer<T> compress;  // 1x1, Cf -> Cf/4
  LinearLayer<T> fc1;       // Cf/4 -> h
  LinearLayer<T> fc2;       // h -> 1

  RwNet() = default;
  explicit RwNet(int64_t fused_ch)
      : compress(fused_ch / 4, fused_ch, 1, 1, 0, 1),
        fc1(fused_ch / 4, fused_ch / 4),
        fc2(1, fused_ch / 4) {
    check_arg(fused_ch % 4 == 0, "rw_net: fused width must be divisible by 4");
  }

  // Per-scale score: MLP(globalavgpool(compress(G))).
  TensorT<T> score(const TensorT<T>& g) const {
    auto c = global_pool(PoolKind::avg, conv2d(compress, g));
    auto flat = reshape(c, {g.dim(0), compress.out_channels()});
    return linear(fc2, relu(linear(fc1, flat)));  // [N,1]
  }

  // Softmax-normalized weights, [N,3].
  TensorT<T> weights(const TensorT<T>& g1, const TensorT<T>& g2,
                     const TensorT<T>& g3) const {
    check_arg(g1.shape() == g2.shape() && g2.shape() == g3.shape(),
              "rw_weights: scale shapes differ");
    auto scores = concat<T>({score(g1), score(g2), score(g3)}, 1);  // [N,3]
    return softmax(scores);
  }

  // out = w1*G1 + w2*G2 + w3*G3 with per-image scalar weights.
  TensorT<T> fuse(const TensorT<T>& g1, const TensorT<T>& g2,
                  const TensorT<T>& g3) const {
    auto w = weights(g1, g2, g3);
    const int64_t n = g1.dim(0);
    auto term = [&](const TensorT<T>& g, int i) {
      auto wi = reshape(narrow(w, 1, i, 1), {n, 1, 1, 1});
      return mul(g, wi);
    };
    return add(add(term(g1, 0), term(g2, 1)), term(g3, 2));
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    compress.visit(prefix + ".compress", v);
    fc1.visit(prefix + ".fc1", v);
    fc2.visit(prefix + ".fc2", v);
  }

  void init(Rng& rng) {
    init_params(compress, rng);
    init_params(fc1, rng);
    init_params(fc2, rng);
  }
};

// Ablation fusion: channel concatenation followed by a 1x1 conv back to Cf,
// so the downstream head sees the same shape as the reweighted path.
template <class T>
TensorT<T> concat_fuse(const Conv2dLayer<T>& proj, const TensorT<T>& g1,
                       const TensorT<T>& g2, const TensorT<T>& g3) {
  check_arg(g1.shape() == g2.shape() && g2.shape() == g3.shape(),
            "concat_fuse: scale shapes differ");
  return conv2d(proj, concat<T>({g1, g2, g3}, 1));
}

}  // namespace smrnet
