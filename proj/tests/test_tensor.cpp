#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "smrnet/grad_check.hpp"
#include "smrnet/rng.hpp"
#include "smrnet/tensor.hpp"

using namespace smrnet;

namespace {

TensorT<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  auto t = TensorT<double>::zeros(shape);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("tensor_create basics") {
  auto z = Tensor::zeros({2, 2});
  CHECK(z.numel() == 4);
  for (float v : z.data()) CHECK(v == 0.0f);

  auto t = Tensor::from_values({3}, {1, 2, 3});
  CHECK(t.data() == std::vector<float>{1, 2, 3});

  CHECK_THROWS_AS(Tensor::from_values({2, 3}, {1, 2, 3, 4, 5}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor::zeros({0, 3}), std::invalid_argument);
}

TEST_CASE("elementwise examples") {
  auto r = relu(Tensor::from_values({3}, {-1, 0, 2}));
  CHECK(r.data() == std::vector<float>{0, 0, 2});

  auto s = sigmoid(Tensor::from_values({1}, {0}));
  CHECK(s.item() == doctest::Approx(0.5));

  auto a = add(Tensor::from_values({2}, {1, 2}), Tensor::from_values({2}, {3, 4}));
  CHECK(a.data() == std::vector<float>{4, 6});

  CHECK_THROWS_AS(add(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})),
                  std::invalid_argument);
}

TEST_CASE("broadcast patterns used by attention") {
  // [C,H,W] * [C,1,1]
  auto x = Tensor::from_values({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto m = Tensor::from_values({2, 1, 1}, {2, 10});
  auto y = mul(x, m);
  CHECK(y.data() == std::vector<float>{2, 4, 6, 8, 50, 60, 70, 80});

  // gradient reduction onto the broadcast side
  auto xd = TensorT<double>::from_values({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  auto md = TensorT<double>::from_values({2, 1, 1}, {2, 10});
  md.set_requires_grad(true);
  {
    TapeT<double> tape;
    auto loss = sum(mul(xd, md));
    tape.backward(loss);
  }
  CHECK(md.grad()[0] == doctest::Approx(1 + 2 + 3 + 4));
  CHECK(md.grad()[1] == doctest::Approx(5 + 6 + 7 + 8));
}

TEST_CASE("matmul examples and triple-loop oracle") {
  auto eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  auto m = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(eye, m).data() == m.data());

  auto row = Tensor::from_values({1, 2}, {1, 2});
  auto col = Tensor::from_values({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == doctest::Approx(11));

  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                  std::invalid_argument);

  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    const int64_t M = 1 + static_cast<int64_t>(rng.uniform_int(16));
    const int64_t K = 1 + static_cast<int64_t>(rng.uniform_int(16));
    const int64_t N = 1 + static_cast<int64_t>(rng.uniform_int(16));
    auto a = random_tensor({M, K}, rng);
    auto b = random_tensor({K, N}, rng);
    auto c = matmul(a, b);
    for (int64_t i = 0; i < M; ++i)
      for (int64_t j = 0; j < N; ++j) {
        double acc = 0;
        for (int64_t k = 0; k < K; ++k) acc += a.at({i, k}) * b.at({k, j});
        const double got = c.at({i, j});
        CHECK(std::abs(got - acc) <= 1e-12 * std::max(1.0, std::abs(acc)));
      }
  }
}

TEST_CASE("softmax examples, stability, and exp-normalize oracle") {
  auto u = softmax(Tensor::from_values({3}, {0, 0, 0}));
  for (float v : u.data()) CHECK(v == doctest::Approx(1.0 / 3));

  auto big = softmax(Tensor::from_values({3}, {1000, 0, 0}));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] == doctest::Approx(0.0));

  auto s = softmax(TensorT<double>::from_values({3}, {1, 2, 3}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(std::abs(s.data()[static_cast<size_t>(i)] - std::exp(i + 1.0) / z) <= 1e-12);

  // properties: sums to 1 +- 1e-9, components in (0,1) for n >= 2
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = 2 + static_cast<int64_t>(rng.uniform_int(8));
    auto v = softmax(random_tensor({n}, rng, -15, 15));
    double total = 0;
    for (double x : v.data()) {
      CHECK(x > 0.0);
      CHECK(x < 1.0);
      total += x;
    }
    CHECK(std::abs(total - 1.0) <= 1e-9);
  }
  // the single-element case degenerates to exactly 1
  CHECK(softmax(TensorT<double>::from_values({1}, {42.0})).item() == 1.0);
}

TEST_CASE("backward examples") {
  // loss = x^2 at x=3 -> grad 6
  auto x = TensorT<double>::from_values({1}, {3});
  x.set_requires_grad(true);
  {
    TapeT<double> tape;
    auto loss = sum(mul(x, x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(6));

  // loss = sum(sigmoid(v)) -> grad sigma(v)(1-sigma(v))
  auto v = TensorT<double>::from_values({3}, {-1, 0.5, 2});
  v.set_requires_grad(true);
  {
    TapeT<double> tape;
    tape.backward(sum(sigmoid(v)));
  }
  for (int i = 0; i < 3; ++i) {
    const double s = 1.0 / (1.0 + std::exp(-v.data()[static_cast<size_t>(i)]));
    CHECK(v.grad()[static_cast<size_t>(i)] == doctest::Approx(s * (1 - s)));
  }

  // non-scalar loss rejected
  {
    TapeT<double> tape;
    auto y = TensorT<double>::zeros({2});
    CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);
  }
}

TEST_CASE("repeated backward accumulates without reset") {
  auto x = TensorT<double>::from_values({1}, {3});
  x.set_requires_grad(true);
  for (int round = 0; round < 2; ++round) {
    TapeT<double> tape;
    tape.backward(sum(mul(x, x)));
  }
  CHECK(x.grad()[0] == doctest::Approx(12));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("composite graph matches finite differences") {
  Rng rng(17);
  auto x = random_tensor({4, 3}, rng);
  auto w = random_tensor({3, 5}, rng);
  auto f = [&](const TensorT<double>& in) {
    auto h = sigmoid(matmul(in, w));
    return mul(h, relu(h));
  };
  CHECK(grad_check(f, x) <= 1e-4);
}

TEST_CASE("grad_check identity is exact") {
  Rng rng(23);
  auto x = random_tensor({3, 3}, rng);
  const double err = grad_check([](const TensorT<double>& t) { return scale(t, 1.0); }, x);
  CHECK(err <= 1e-9);
}

TEST_CASE("loss primitives match finite differences") {
  Rng rng(29);
  auto x = random_tensor({3, 4}, rng);
  auto targets = random_tensor({3, 4}, rng, 0, 1);
  auto weights = TensorT<double>::full({3, 4}, 1.0);

  CHECK(grad_check([&](const TensorT<double>& t) {
          return bce_with_logits_sum(t, targets, weights, 7.0);
        }, x) <= 1e-4);
  CHECK(grad_check([&](const TensorT<double>& t) {
          return smooth_l1_sum(t, targets, weights, 3.0);
        }, x) <= 1e-4);
  std::vector<int> labels = {0, 2, 1};
  CHECK(grad_check([&](const TensorT<double>& t) {
          return cross_entropy_mean(t, labels);
        }, x) <= 1e-4);
  CHECK(grad_check([&](const TensorT<double>& t) { return softmax(t); }, x) <= 1e-4);
  CHECK(grad_check([&](const TensorT<double>& t) { return concat<double>({t, t}, 1); },
                   x) <= 1e-4);
  CHECK(grad_check([&](const TensorT<double>& t) { return narrow(t, 1, 1, 2); }, x) <=
        1e-4);
}

TEST_CASE("smooth l1 piecewise values") {
  auto pred = TensorT<double>::from_values({2}, {0.5, 2.0});
  auto target = TensorT<double>::zeros({2});
  auto w1 = TensorT<double>::from_values({2}, {1, 0});
  auto w2 = TensorT<double>::from_values({2}, {0, 1});
  CHECK(smooth_l1_sum(pred, target, w1, 1.0).item() == doctest::Approx(0.125));
  CHECK(smooth_l1_sum(pred, target, w2, 1.0).item() == doctest::Approx(1.5));
}

TEST_CASE("forward determinism is bitwise") {
  Rng rng(31);
  auto x = Tensor::zeros({4, 8});
  for (auto& v : x.data()) v = static_cast<float>(rng.uniform(-2, 2));
  auto y1 = sigmoid(x);
  auto y2 = sigmoid(x);
  CHECK(std::memcmp(y1.ptr(), y2.ptr(), sizeof(float) * static_cast<size_t>(y1.numel())) == 0);
}

TEST_CASE("non-finite values abort with the op name") {
  auto x = Tensor::from_values({2}, {1.0f, std::numeric_limits<float>::infinity()});
  CHECK_THROWS_AS(relu(x), NumericError);
  try {
    relu(x);
  } catch (const NumericError& e) {
    CHECK(e.op() == std::string("relu"));
  }
}
