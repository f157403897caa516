#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "smrnet/fusion.hpp"
#include "smrnet/grad_check.hpp"

using namespace smrnet;

namespace {

template <class T>
TensorT<T> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  auto t = TensorT<T>::zeros(shape);
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Straight-line reweighting: compress (1x1 conv) -> global average ->
// MLP -> softmax, plain loops only.
std::array<double, 3> rw_weights_reference(const RwNet<double>& rw,
                                           const std::array<TensorT<double>, 3>& g) {
  const int64_t Cf = g[0].dim(1), HW = g[0].dim(2) * g[0].dim(3);
  const int64_t Cr = rw.compress.out_channels();
  const int64_t Hh = rw.fc1.out_features();
  std::array<double, 3> scores{};
  for (int si = 0; si < 3; ++si) {
    std::vector<double> pooled(static_cast<size_t>(Cr), 0.0);
    for (int64_t co = 0; co < Cr; ++co) {
      double acc = 0;
      for (int64_t i = 0; i < HW; ++i) {
        double v = rw.compress.bias.data()[static_cast<size_t>(co)];
        for (int64_t ci = 0; ci < Cf; ++ci)
          v += rw.compress.weight.at({co, ci, 0, 0}) *
               g[static_cast<size_t>(si)].data()[static_cast<size_t>(ci * HW + i)];
        acc += v;
      }
      pooled[static_cast<size_t>(co)] = acc / static_cast<double>(HW);
    }
    std::vector<double> hid(static_cast<size_t>(Hh));
    for (int64_t o = 0; o < Hh; ++o) {
      double s = rw.fc1.bias.data()[static_cast<size_t>(o)];
      for (int64_t i = 0; i < Cr; ++i)
        s += rw.fc1.weight.at({o, i}) * pooled[static_cast<size_t>(i)];
      hid[static_cast<size_t>(o)] = std::max(0.0, s);
    }
    double score = rw.fc2.bias.data()[0];
    for (int64_t i = 0; i < Hh; ++i) score += rw.fc2.weight.at({0, i}) * hid[static_cast<size_t>(i)];
    scores[static_cast<size_t>(si)] = score;
  }
  const double mx = std::max({scores[0], scores[1], scores[2]});
  double z = 0;
  for (double s : scores) z += std::exp(s - mx);
  std::array<double, 3> w{};
  for (int i = 0; i < 3; ++i) w[static_cast<size_t>(i)] = std::exp(scores[static_cast<size_t>(i)] - mx) / z;
  return w;
}

Msff<double> make_msff(Rng& rng) {
  FusionConfig fc;
  fc.fused_channels = 16;
  Msff<double> msff(fc, 8, 12, 16);
  msff.init(rng);
  return msff;
}

FeaturePyramidT<double> make_pyramid(Rng& rng) {
  FeaturePyramidT<double> pyr;
  pyr.f1 = random_tensor<double>({1, 8, 12, 12}, rng);
  pyr.f2 = random_tensor<double>({1, 12, 6, 6}, rng);
  pyr.f3 = random_tensor<double>({1, 16, 3, 3}, rng);
  return pyr;
}

}  // namespace

TEST_CASE("msff branch shapes unify on the fine grid") {
  FusionConfig fc;
  fc.fused_channels = 64;
  Msff<float> msff(fc, 32, 64, 128);
  Rng rng(31);
  msff.init(rng);
  FeaturePyramidT<float> pyr;
  pyr.f1 = Tensor::zeros({1, 32, 12, 12});
  pyr.f2 = Tensor::zeros({1, 64, 6, 6});
  pyr.f3 = Tensor::zeros({1, 128, 3, 3});
  auto g = msff.forward(pyr);
  for (const auto& gi : g) CHECK(gi.shape() == Shape{1, 64, 12, 12});
}

TEST_CASE("dilated branch convs preserve spatial extent") {
  for (int64_t d : {1, 2, 4}) {
    Conv2dLayer<float> conv(4, 4, 3, 1, d, d);
    Rng rng(37);
    init_params(conv, rng);
    auto x = Tensor::zeros({1, 4, 6, 6});
    CHECK(conv2d(conv, x).shape() == x.shape());
  }
}

TEST_CASE("delta-kernel branch with pass-through attention reproduces projected input") {
  // dilation-1 branch whose conv is the identity (delta kernel, zero bias) and
  // whose attention masks are forced to 1 via large positive biases.
  FusionConfig fc;
  fc.fused_channels = 4;
  MsffBranch<float> branch(4, 4, 1, 1, 4);
  Rng rng(41);
  branch.init(rng);
  for (auto& v : branch.conv.weight.data()) v = 0;
  for (int64_t c = 0; c < 4; ++c) branch.conv.weight.data()[static_cast<size_t>(((c * 4 + c) * 3 + 1) * 3 + 1)] = 1.0f;
  std::fill(branch.conv.bias.data().begin(), branch.conv.bias.data().end(), 0.0f);
  // saturate both attention sigmoids at 1
  std::fill(branch.attention.channel.fc2.bias.data().begin(),
            branch.attention.channel.fc2.bias.data().end(), 50.0f);
  std::fill(branch.attention.channel.fc2.weight.data().begin(),
            branch.attention.channel.fc2.weight.data().end(), 0.0f);
  std::fill(branch.attention.spatial.conv.weight.data().begin(),
            branch.attention.spatial.conv.weight.data().end(), 0.0f);
  branch.attention.spatial.conv.bias.data()[0] = 50.0f;
  // identity projection
  std::fill(branch.projection.weight.data().begin(), branch.projection.weight.data().end(), 0.0f);
  for (int64_t c = 0; c < 4; ++c) branch.projection.weight.data()[static_cast<size_t>(c * 4 + c)] = 1.0f;
  std::fill(branch.projection.bias.data().begin(), branch.projection.bias.data().end(), 0.0f);

  auto x = Tensor::zeros({1, 4, 5, 5});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto y = branch.forward(x);
  for (int64_t i = 0; i < x.numel(); ++i)
    CHECK(y.data()[static_cast<size_t>(i)] ==
          doctest::Approx(x.data()[static_cast<size_t>(i)]).epsilon(1e-5));
}

TEST_CASE("identical scale maps get exactly uniform weights") {
  RwNet<float> rw(16);
  Rng rng(43);
  rw.init(rng);
  auto g = Tensor::zeros({1, 16, 4, 4});
  for (auto& v : g.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto w = rw.weights(g, g, g);
  CHECK(w.shape() == Shape{1, 3});
  for (float v : w.data()) CHECK(v == doctest::Approx(1.0f / 3));
}

TEST_CASE("zeroed final MLP layer gives uniform weights regardless of input") {
  RwNet<float> rw(16);
  Rng rng(47);
  rw.init(rng);
  std::fill(rw.fc2.weight.data().begin(), rw.fc2.weight.data().end(), 0.0f);
  std::fill(rw.fc2.bias.data().begin(), rw.fc2.bias.data().end(), 0.0f);
  auto g1 = Tensor::zeros({1, 16, 4, 4});
  auto g2 = Tensor::zeros({1, 16, 4, 4});
  auto g3 = Tensor::zeros({1, 16, 4, 4});
  for (auto& v : g1.data()) v = static_cast<float>(rng.uniform(-3, 3));
  for (auto& v : g2.data()) v = static_cast<float>(rng.uniform(-3, 3));
  for (auto& v : g3.data()) v = static_cast<float>(rng.uniform(-3, 3));
  auto w = rw.weights(g1, g2, g3);
  for (float v : w.data()) CHECK(v == doctest::Approx(1.0f / 3));
}

TEST_CASE("rw weights match the straight-line reference") {
  RwNet<double> rw(16);
  Rng rng(53);
  rw.init(rng);
  std::array<TensorT<double>, 3> g = {random_tensor<double>({1, 16, 4, 4}, rng),
                                      random_tensor<double>({1, 16, 4, 4}, rng),
                                      random_tensor<double>({1, 16, 4, 4}, rng)};
  auto w = rw.weights(g[0], g[1], g[2]);
  auto ref = rw_weights_reference(rw, g);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(w.data()[static_cast<size_t>(i)] - ref[static_cast<size_t>(i)]) <= 1e-6);
}

TEST_CASE("weight normalization and permutation symmetry") {
  RwNet<double> rw(16);
  Rng rng(59);
  rw.init(rng);
  for (int trial = 0; trial < 10; ++trial) {
    auto g1 = random_tensor<double>({1, 16, 4, 4}, rng, -4, 4);
    auto g2 = random_tensor<double>({1, 16, 4, 4}, rng, -4, 4);
    auto g3 = random_tensor<double>({1, 16, 4, 4}, rng, -4, 4);
    auto w = rw.weights(g1, g2, g3);
    double total = 0;
    for (double v : w.data()) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
      total += v;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);

    // permuting the inputs permutes the weights identically
    auto wp = rw.weights(g3, g1, g2);
    CHECK(wp.data()[0] == doctest::Approx(w.data()[2]).epsilon(1e-12));
    CHECK(wp.data()[1] == doctest::Approx(w.data()[0]).epsilon(1e-12));
    CHECK(wp.data()[2] == doctest::Approx(w.data()[1]).epsilon(1e-12));
  }
}

TEST_CASE("fusion is convex: saturation, exact convexity, hull bound") {
  RwNet<double> rw(16);
  Rng rng(61);
  rw.init(rng);

  // equal inputs: output equals them exactly (weights sum to 1)
  auto g = random_tensor<double>({1, 16, 4, 4}, rng);
  auto fused = rw.fuse(g, g, g);
  for (int64_t i = 0; i < g.numel(); ++i)
    CHECK(fused.data()[static_cast<size_t>(i)] ==
          doctest::Approx(g.data()[static_cast<size_t>(i)]).epsilon(1e-9));

  // saturated softmax: force scale 1's score to dominate
  {
    RwNet<double> rw_sat(16);
    rw_sat.init(rng);
    auto g1 = random_tensor<double>({1, 16, 4, 4}, rng, 5, 6);
    auto g2 = random_tensor<double>({1, 16, 4, 4}, rng, -1, 1);
    auto g3 = random_tensor<double>({1, 16, 4, 4}, rng, -1, 1);
    // make the score a large multiple of the mean activation
    std::fill(rw_sat.fc2.weight.data().begin(), rw_sat.fc2.weight.data().end(), 0.0);
    std::fill(rw_sat.fc1.weight.data().begin(), rw_sat.fc1.weight.data().end(), 0.0);
    std::fill(rw_sat.fc1.bias.data().begin(), rw_sat.fc1.bias.data().end(), 0.0);
    std::fill(rw_sat.compress.bias.data().begin(), rw_sat.compress.bias.data().end(), 0.0);
    for (int64_t i = 0; i < rw_sat.compress.weight.numel(); ++i)
      rw_sat.compress.weight.data()[static_cast<size_t>(i)] = 1.0;
    rw_sat.fc1.weight.data()[0] = 100.0;  // hid0 = relu(100 * pooled0)
    rw_sat.fc2.weight.data()[0] = 100.0;
    auto w = rw_sat.weights(g1, g2, g3);
    CHECK(w.data()[0] == doctest::Approx(1.0).epsilon(1e-6));
    auto out = rw_sat.fuse(g1, g2, g3);
    for (int64_t i = 0; i < g1.numel(); ++i)
      CHECK(out.data()[static_cast<size_t>(i)] ==
            doctest::Approx(g1.data()[static_cast<size_t>(i)]).epsilon(1e-4));
  }

  // elementwise convex hull bound
  for (int trial = 0; trial < 5; ++trial) {
    auto g1 = random_tensor<double>({1, 16, 3, 3}, rng, -2, 2);
    auto g2 = random_tensor<double>({1, 16, 3, 3}, rng, -2, 2);
    auto g3 = random_tensor<double>({1, 16, 3, 3}, rng, -2, 2);
    auto out = rw.fuse(g1, g2, g3);
    for (int64_t i = 0; i < out.numel(); ++i) {
      const double a = g1.data()[static_cast<size_t>(i)];
      const double b = g2.data()[static_cast<size_t>(i)];
      const double c = g3.data()[static_cast<size_t>(i)];
      const double lo = std::min({a, b, c}) - 1e-9;
      const double hi = std::max({a, b, c}) + 1e-9;
      CHECK(out.data()[static_cast<size_t>(i)] >= lo);
      CHECK(out.data()[static_cast<size_t>(i)] <= hi);
    }
  }
}

TEST_CASE("concat_fuse shapes and structured identity") {
  Rng rng(67);
  Conv2dLayer<float> proj(16, 48, 1);
  init_params(proj, rng);
  auto g1 = Tensor::zeros({1, 16, 4, 4});
  for (auto& v : g1.data()) v = static_cast<float>(rng.uniform(-1, 1));
  auto zero = Tensor::zeros({1, 16, 4, 4});

  // block-identity 1x1 conv on the first Cf channels
  std::fill(proj.weight.data().begin(), proj.weight.data().end(), 0.0f);
  for (int64_t c = 0; c < 16; ++c)
    proj.weight.data()[static_cast<size_t>(c * 48 + c)] = 1.0f;
  std::fill(proj.bias.data().begin(), proj.bias.data().end(), 0.0f);
  auto out = concat_fuse(proj, g1, zero, zero);
  CHECK(out.shape() == Shape{1, 16, 4, 4});
  for (int64_t i = 0; i < g1.numel(); ++i)
    CHECK(out.data()[static_cast<size_t>(i)] ==
          doctest::Approx(g1.data()[static_cast<size_t>(i)]));

  // shape accounting with real weights, deterministic and finite
  init_params(proj, rng);
  auto cat = concat<float>({g1, g1, g1}, 1);
  CHECK(cat.shape() == Shape{1, 48, 4, 4});
  auto out1 = concat_fuse(proj, g1, g1, g1);
  auto out2 = concat_fuse(proj, g1, g1, g1);
  CHECK(out1.data() == out2.data());
  for (float v : out1.data()) CHECK(std::isfinite(v));
}

TEST_CASE("msff + rw end-to-end gradient check") {
  Rng rng(71);
  auto msff = make_msff(rng);
  RwNet<double> rw(16);
  rw.init(rng);
  auto pyr = make_pyramid(rng);
  auto f = [&](const TensorT<double>& f1) {
    FeaturePyramidT<double> p{f1, pyr.f2, pyr.f3};
    auto g = msff.forward(p);
    return rw.fuse(g[0], g[1], g[2]);
  };
  CHECK(grad_check(f, pyr.f1, /*max_coords=*/64) <= 1e-4);

  // single msff branch, all coordinates
  MsffBranch<double> branch(8, 16, 2, 2, 4);
  branch.init(rng);
  auto x = random_tensor<double>({1, 8, 6, 6}, rng);
  CHECK(grad_check([&](const TensorT<double>& t) { return branch.forward(t); }, x,
                   /*max_coords=*/64) <= 1e-4);

  // rw-net weights wrt inputs
  auto g1 = random_tensor<double>({1, 16, 4, 4}, rng);
  auto g2 = random_tensor<double>({1, 16, 4, 4}, rng);
  auto g3 = random_tensor<double>({1, 16, 4, 4}, rng);
  CHECK(grad_check([&](const TensorT<double>& t) { return rw.fuse(t, g2, g3); }, g1,
                   /*max_coords=*/64) <= 1e-4);
}
