#pragma once

#include <string>

#include "smrnet/layers.hpp"

namespace smrnet {

// Channel attention: a bottleneck MLP shared between the global-avg and
// global-max pooled descriptors; the sigmoid of the summed responses rescales
// every channel.
template <class T>
struct ChannelAttention {
  LinearLayer<T> fc1;  // C -> C/r
  LinearLayer<T> fc2;  // C/r -> C
  int64_t reduction = 4;

  ChannelAttention() = default;
  ChannelAttention(int64_t channels, int64_t reduction_)
      : fc1(channels / reduction_, channels),
        fc2(channels, channels / reduction_),
        reduction(reduction_) {
    check_arg(channels % reduction_ == 0,
              "channel_attention: reduction " + std::to_string(reduction_) +
                  " does not divide " + std::to_string(channels) + " channels");
  }

  int64_t channels() const { return fc2.out_features(); }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    fc1.visit(prefix + ".fc1", v);
    fc2.visit(prefix + ".fc2", v);
  }
};

template <class T>
TensorT<T> channel_attention(const ChannelAttention<T>& m, const TensorT<T>& x) {
  check_arg(x.rank() == 4, "channel_attention: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1);
  check_arg(C == m.channels(), "channel_attention: channel mismatch");
  auto mlp = [&](const TensorT<T>& pooled) {
    auto flat = reshape(pooled, {N, C});
    return linear(m.fc2, relu(linear(m.fc1, flat)));
  };
  auto avg_branch = mlp(global_pool(PoolKind::avg, x));
  auto max_branch = mlp(global_pool(PoolKind::max, x));
  auto mask = reshape(sigmoid(add(avg_branch, max_branch)), {N, C, 1, 1});
  return mul(x, mask);
}

// Spatial attention: channel-wise mean and max maps stacked and passed through
// a 7x7 conv; the sigmoid mask rescales every position.
template <class T>
struct SpatialAttention {
  Conv2dLayer<T> conv;  // [1, 2, 7, 7], padding 3

  SpatialAttention() : conv(1, 2, 7, 1, 3, 1) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    conv.visit(prefix + ".conv", v);
  }
};

template <class T>
TensorT<T> spatial_attention(const SpatialAttention<T>& m, const TensorT<T>& x) {
  check_arg(x.rank() == 4, "spatial_attention: expects [N,C,H,W]");
  auto stacked = concat<T>({channel_mean(x), channel_max(x)}, 1);
  auto mask = sigmoid(conv2d(m.conv, stacked));  // [N,1,H,W]
  return mul(x, mask);
}

// CBAM block: channel attention then spatial attention, in series.
template <class T>
struct CbamBlock {
  ChannelAttention<T> channel;
  SpatialAttention<T> spatial;

  CbamBlock() = default;
  CbamBlock(int64_t channels, int64_t reduction) : channel(channels, reduction) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    channel.visit(prefix + ".channel", v);
    spatial.visit(prefix + ".spatial", v);
  }

  void init(Rng& rng) {
    init_params(channel.fc1, rng);
    init_params(channel.fc2, rng);
    init_params(spatial.conv, rng);
  }
};

template <class T>
TensorT<T> cbam(const CbamBlock<T>& b, const TensorT<T>& x) {
  return spatial_attention(b.spatial, channel_attention(b.channel, x));
}

}  // namespace smrnet
