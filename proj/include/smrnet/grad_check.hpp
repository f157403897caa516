#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "smrnet/rng.hpp"
#include "smrnet/tensor.hpp"

namespace smrnet {

// Central-finite-difference gradient verification, float64 only.
//
// Reduces f's output to a scalar through a fixed random projection, computes
// the analytic gradient wrt x by one backward pass, and compares against
// (L(x+h) - L(x-h)) / 2h per coordinate. Returns the max relative error
// |a - n| / max(1, |a|, |n|).
//
// Inputs with |value| < 1e-3 are nudged by +-0.1 first so ReLU-style kinks do
// not sit inside the difference stencil. max_coords > 0 checks a random
// coordinate subset (for large inputs); 0 checks all coordinates.
inline double grad_check(const std::function<TensorT<double>(const TensorT<double>&)>& f,
                         TensorT<double> x, int64_t max_coords = 0,
                         uint64_t seed = 0x5eed, double h = 1e-5) {
  TensorT<double> xv = x.clone();
  for (auto& v : xv.data())
    if (std::abs(v) < 1e-3) v += (v >= 0 ? 0.1 : -0.1);

  Rng rng(seed);
  TensorT<double> probe = f(xv);
  auto weights = TensorT<double>::zeros(probe.shape());
  for (auto& w : weights.data()) w = rng.uniform(-1.0, 1.0);

  auto objective = [&](const TensorT<double>& in) {
    TensorT<double> y = f(in);
    const auto& w = weights.data();
    const auto& d = y.data();
    double s = 0;
    for (size_t i = 0; i < d.size(); ++i) s += w[i] * d[i];
    return s;
  };

  // Analytic gradient.
  TensorT<double> xg = xv.clone();
  xg.set_requires_grad(true);
  {
    TapeT<double> tape;
    TensorT<double> y = f(xg);
    TensorT<double> loss = sum(mul(y, weights));
    tape.backward(loss);
  }
  const std::vector<double>& analytic = xg.grad();

  std::vector<int64_t> coords;
  if (max_coords > 0 && max_coords < xv.numel()) {
    std::vector<int64_t> all(static_cast<size_t>(xv.numel()));
    for (int64_t i = 0; i < xv.numel(); ++i) all[static_cast<size_t>(i)] = i;
    rng.shuffle(all);
    coords.assign(all.begin(), all.begin() + max_coords);
  } else {
    coords.resize(static_cast<size_t>(xv.numel()));
    for (int64_t i = 0; i < xv.numel(); ++i) coords[static_cast<size_t>(i)] = i;
  }

  double max_err = 0;
  for (int64_t i : coords) {
    TensorT<double> xp = xv.clone();
    TensorT<double> xm = xv.clone();
    xp.data()[static_cast<size_t>(i)] += h;
    xm.data()[static_cast<size_t>(i)] -= h;
    const double numeric = (objective(xp) - objective(xm)) / (2 * h);
    const double a = analytic[static_cast<size_t>(i)];
    const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
    max_err = std::max(max_err, err);
  }
  return max_err;
}

}  // namespace smrnet
