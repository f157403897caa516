#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "smrnet/common.hpp"
#include "smrnet/gemm.hpp"

namespace smrnet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Dense row-major float tensor. Value-semantics handle: copies share storage,
// clone() makes a deep copy. Gradients accumulate into `grad` during a tape's
// backward sweep.
template <class T>
class TensorT {
 public:
  using Scalar = T;

  TensorT() = default;

  static TensorT zeros(Shape shape) { return full(std::move(shape), T(0)); }

  static TensorT full(Shape shape, T v) {
    validate_shape(shape);
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->data.assign(static_cast<size_t>(shape_numel(shape)), v);
    impl->shape = std::move(shape);
    return TensorT(std::move(impl));
  }

  static TensorT from_values(Shape shape, std::vector<T> values) {
    validate_shape(shape);
    check_arg(static_cast<int64_t>(values.size()) == shape_numel(shape),
              "tensor_create: " + std::to_string(values.size()) +
                  " values do not fill shape " + shape_str(shape));
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    return TensorT(std::move(impl));
  }

  static TensorT scalar(T v) { return full({1}, v); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<T>& data() { return impl_->data; }
  const std::vector<T>& data() const { return impl_->data; }
  T* ptr() { return impl_->data.data(); }
  const T* ptr() const { return impl_->data.data(); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return !impl_->grad.empty(); }

  // Grad buffer, zero-initialized on first access.
  std::vector<T>& grad() {
    if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), T(0));
    return impl_->grad;
  }
  const std::vector<T>& grad() const { return impl_->grad; }
  T* grad_ptr() { return grad().data(); }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  T item() const {
    check_arg(numel() == 1, "item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    check_arg(static_cast<int>(idx.size()) == rank(), "at(): index rank mismatch");
    int64_t flat = 0;
    int i = 0;
    for (int64_t v : idx) {
      flat = flat * impl_->shape[static_cast<size_t>(i)] + v;
      ++i;
    }
    return impl_->data[static_cast<size_t>(flat)];
  }

  TensorT clone() const {
    auto impl = std::make_shared<TensorImpl<T>>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    return TensorT(std::move(impl));
  }

  template <class U>
  TensorT<U> cast() const {
    std::vector<U> v(impl_->data.size());
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>(impl_->data[i]);
    return TensorT<U>::from_values(impl_->shape, std::move(v));
  }

  // True when both handles refer to the same storage (parameter sharing).
  bool same_storage(const TensorT& o) const { return impl_ == o.impl_; }

 private:
  explicit TensorT(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static void validate_shape(const Shape& s) {
    check_arg(!s.empty(), "tensor_create: empty shape");
    for (int64_t d : s)
      check_arg(d >= 1, "tensor_create: non-positive extent in " + shape_str(s));
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

using Tensor = TensorT<float>;

template <class T>
bool all_finite(const std::vector<T>& v) {
  for (T x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

template <class T>
void check_finite(const std::vector<T>& v, const char* op, const char* what) {
  if (!all_finite(v)) throw NumericError(op, what);
}

// Dynamic gradient tape. Construction makes it the active tape for the current
// thread (RAII); ops append themselves in execution order, which is already a
// topological order. backward() sweeps once in reverse. Destroying the tape
// frees the recorded graph.
template <class T>
class TapeT {
 public:
  TapeT() : prev_(current_) { current_ = this; }
  ~TapeT() { current_ = prev_; }
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  static TapeT* current() { return current_; }

  void record(const char* name, std::vector<TensorT<T>> inputs, TensorT<T> output,
              std::function<void()> backward_fn) {
    ops_.push_back(Op{name, std::move(inputs), std::move(output), std::move(backward_fn)});
  }

  // Seeds d(loss)/d(loss) = 1 and runs every recorded op's backward exactly
  // once, newest first. Repeated calls without zeroing grads accumulate.
  void backward(TensorT<T> loss) {
    check_arg(loss.defined() && loss.numel() == 1,
              "backward: loss must be a scalar tensor");
    loss.grad()[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      if (!it->output.has_grad()) continue;
      it->backward_fn();
      for (auto& in : it->inputs) {
        if (in.requires_grad() && in.has_grad())
          check_finite(in.grad(), it->name, "non-finite gradient");
      }
    }
  }

  size_t num_ops() const { return ops_.size(); }
  void clear() { ops_.clear(); }

 private:
  struct Op {
    const char* name;
    std::vector<TensorT<T>> inputs;
    TensorT<T> output;
    std::function<void()> backward_fn;
  };

  std::vector<Op> ops_;
  TapeT* prev_;
  static thread_local TapeT* current_;
};

template <class T>
thread_local TapeT<T>* TapeT<T>::current_ = nullptr;

using Tape = TapeT<float>;

// Registers a freshly computed op result: verifies finiteness, propagates
// requires_grad, and records the backward closure on the active tape.
template <class T>
TensorT<T> finish_op(const char* name, TensorT<T> out, std::vector<TensorT<T>> inputs,
                     std::function<void()> backward_fn) {
  check_finite(out.data(), name, "non-finite forward output");
  bool rg = false;
  for (const auto& in : inputs)
    if (in.requires_grad()) rg = true;
  if (rg && TapeT<T>::current()) {
    out.set_requires_grad(true);
    TapeT<T>::current()->record(name, std::move(inputs), out, std::move(backward_fn));
  }
  return out;
}

// --- broadcasting -----------------------------------------------------------
//
// Restricted broadcasting: operands must have equal rank, and the broadcast
// side may have extent 1 wherever the extents differ. This covers the
// per-channel [N,C,1,1], per-position [N,1,H,W], and per-sample [N,1,1,1]
// patterns the attention and fusion stages need.

inline bool broadcastable_into(const Shape& small, const Shape& big) {
  if (small.size() != big.size()) return false;
  for (size_t i = 0; i < big.size(); ++i)
    if (small[i] != big[i] && small[i] != 1) return false;
  return true;
}

// Calls f(out_flat_index, small_flat_index) over the big shape's index space.
template <class F>
void for_each_broadcast(const Shape& big, const Shape& small, F&& f) {
  const int r = static_cast<int>(big.size());
  std::vector<int64_t> stride(static_cast<size_t>(r));
  int64_t s = 1;
  for (int i = r - 1; i >= 0; --i) {
    stride[static_cast<size_t>(i)] = (small[static_cast<size_t>(i)] == 1 && big[static_cast<size_t>(i)] != 1) ? 0 : s;
    s *= small[static_cast<size_t>(i)];
  }
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  const int64_t total = shape_numel(big);
  int64_t bi = 0;
  for (int64_t ai = 0; ai < total; ++ai) {
    f(ai, bi);
    for (int i = r - 1; i >= 0; --i) {
      auto ui = static_cast<size_t>(i);
      ++idx[ui];
      bi += stride[ui];
      if (idx[ui] < big[ui]) break;
      idx[ui] = 0;
      bi -= stride[ui] * big[ui];
    }
  }
}

namespace detail {

enum class BinKind { add, sub, mul };

template <class T>
TensorT<T> binary_op(BinKind kind, const TensorT<T>& a, const TensorT<T>& b) {
  const char* name = kind == BinKind::add ? "add" : kind == BinKind::sub ? "sub" : "mul";
  // Orient so `big` carries the output shape.
  bool b_small = broadcastable_into(b.shape(), a.shape());
  bool a_small = !b_small && broadcastable_into(a.shape(), b.shape());
  check_arg(b_small || a_small,
            std::string(name) + ": incompatible shapes " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  const TensorT<T>& big = b_small ? a : b;
  const TensorT<T>& small = b_small ? b : a;
  const bool flipped = !b_small;  // true when `a` is the broadcast side

  auto out = TensorT<T>::zeros(big.shape());
  T* o = out.ptr();
  const T* pb = big.ptr();
  const T* ps = small.ptr();
  const bool same = big.shape() == small.shape();

  auto apply = [&](T x, T y) {  // x from big, y from small, in (a, b) order
    T lhs = flipped ? y : x;
    T rhs = flipped ? x : y;
    switch (kind) {
      case BinKind::add: return lhs + rhs;
      case BinKind::sub: return lhs - rhs;
      default: return lhs * rhs;
    }
  };

  if (same) {
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) o[i] = apply(pb[i], ps[i]);
  } else {
    for_each_broadcast(big.shape(), small.shape(),
                       [&](int64_t i, int64_t j) { o[i] = apply(pb[i], ps[j]); });
  }

  TensorT<T> big_t = big, small_t = small, out_t = out;
  auto backward = [kind, flipped, big_t, small_t, out_t]() mutable {
    const std::vector<T>& g = out_t.grad();
    const bool same_shape = big_t.shape() == small_t.shape();
    // Signs of d/d(big), d/d(small) in the (a, b) orientation.
    const T sign_big = (kind == BinKind::sub && flipped) ? T(-1) : T(1);
    const T sign_small = (kind == BinKind::sub && !flipped) ? T(-1) : T(1);
    if (big_t.requires_grad()) {
      T* db = big_t.grad_ptr();
      if (kind == BinKind::mul) {
        const T* ps = small_t.ptr();
        if (same_shape) {
          for (int64_t i = 0; i < big_t.numel(); ++i) db[i] += g[static_cast<size_t>(i)] * ps[i];
        } else {
          for_each_broadcast(big_t.shape(), small_t.shape(),
                             [&](int64_t i, int64_t j) { db[i] += g[static_cast<size_t>(i)] * ps[j]; });
        }
      } else {
        for (int64_t i = 0; i < big_t.numel(); ++i) db[i] += sign_big * g[static_cast<size_t>(i)];
      }
    }
    if (small_t.requires_grad()) {
      T* ds = small_t.grad_ptr();
      if (kind == BinKind::mul) {
        const T* pb = big_t.ptr();
        if (same_shape) {
          for (int64_t i = 0; i < small_t.numel(); ++i) ds[i] += g[static_cast<size_t>(i)] * pb[i];
        } else {
          for_each_broadcast(big_t.shape(), small_t.shape(),
                             [&](int64_t i, int64_t j) { ds[j] += g[static_cast<size_t>(i)] * pb[i]; });
        }
      } else {
        if (same_shape) {
          for (int64_t i = 0; i < small_t.numel(); ++i) ds[i] += sign_small * g[static_cast<size_t>(i)];
        } else {
          for_each_broadcast(big_t.shape(), small_t.shape(),
                             [&](int64_t i, int64_t j) { ds[j] += sign_small * g[static_cast<size_t>(i)]; });
        }
      }
    }
  };
  return finish_op(name, std::move(out), {a, b}, std::move(backward));
}

}  // namespace detail

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(detail::BinKind::add, a, b);
}
template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(detail::BinKind::sub, a, b);
}
template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
  return detail::binary_op(detail::BinKind::mul, a, b);
}

template <class T>
TensorT<T> relu(const TensorT<T>& x) {
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.ptr();
  T* po = out.ptr();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > T(0) ? px[i] : T(0);
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    const T* px = xt.ptr();
    T* dx = xt.grad_ptr();
    for (int64_t i = 0; i < xt.numel(); ++i)
      if (px[i] > T(0)) dx[i] += g[static_cast<size_t>(i)];
  };
  return finish_op("relu", std::move(out), {x}, std::move(backward));
}

template <class T>
TensorT<T> sigmoid(const TensorT<T>& x) {
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.ptr();
  T* po = out.ptr();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    const T v = px[i];
    po[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                      : std::exp(v) / (T(1) + std::exp(v));
  }
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    const T* py = ot.ptr();
    T* dx = xt.grad_ptr();
    for (int64_t i = 0; i < xt.numel(); ++i) {
      const T y = py[i];
      dx[i] += g[static_cast<size_t>(i)] * y * (T(1) - y);
    }
  };
  return finish_op("sigmoid", std::move(out), {x}, std::move(backward));
}

// y = c * x for a plain constant c.
template <class T>
TensorT<T> scale(const TensorT<T>& x, double c) {
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.ptr();
  T* po = out.ptr();
  const T cc = static_cast<T>(c);
  for (int64_t i = 0; i < x.numel(); ++i) po[i] = cc * px[i];
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot, cc]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t i = 0; i < xt.numel(); ++i) dx[i] += cc * g[static_cast<size_t>(i)];
  };
  return finish_op("scale", std::move(out), {x}, std::move(backward));
}

template <class T>
TensorT<T> matmul(const TensorT<T>& a, const TensorT<T>& b) {
  check_arg(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank-2");
  check_arg(a.dim(1) == b.dim(0),
            "matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                shape_str(b.shape()));
  const int64_t M = a.dim(0), K = a.dim(1), N = b.dim(1);
  auto out = TensorT<T>::zeros({M, N});
  gemm_nn(M, N, K, a.ptr(), b.ptr(), out.ptr(), false);
  TensorT<T> at = a, bt = b, ot = out;
  auto backward = [at, bt, ot, M, K, N]() mutable {
    const T* g = ot.grad().data();
    if (at.requires_grad()) gemm_nt(M, K, N, g, bt.ptr(), at.grad_ptr(), true);
    if (bt.requires_grad()) gemm_tn(K, N, M, at.ptr(), g, bt.grad_ptr(), true);
  };
  return finish_op("matmul", std::move(out), {a, b}, std::move(backward));
}

// Row-wise softmax with max-subtraction. Accepts rank-1 [N] or rank-2 [R,C].
template <class T>
TensorT<T> softmax(const TensorT<T>& x) {
  check_arg(x.rank() == 1 || x.rank() == 2, "softmax: expects rank-1 or rank-2");
  const int64_t R = x.rank() == 1 ? 1 : x.dim(0);
  const int64_t C = x.rank() == 1 ? x.dim(0) : x.dim(1);
  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t r = 0; r < R; ++r) {
    const T* row = px + r * C;
    T* orow = po + r * C;
    T mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T sum = 0;
    for (int64_t c = 0; c < C; ++c) {
      orow[c] = std::exp(row[c] - mx);
      sum += orow[c];
    }
    for (int64_t c = 0; c < C; ++c) orow[c] /= sum;
  }
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot, R, C]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    const T* py = ot.ptr();
    T* dx = xt.grad_ptr();
    for (int64_t r = 0; r < R; ++r) {
      const T* y = py + r * C;
      const T* gr = g.data() + r * C;
      T dot = 0;
      for (int64_t c = 0; c < C; ++c) dot += gr[c] * y[c];
      for (int64_t c = 0; c < C; ++c) dx[r * C + c] += y[c] * (gr[c] - dot);
    }
  };
  return finish_op("softmax", std::move(out), {x}, std::move(backward));
}

template <class T>
TensorT<T> sum(const TensorT<T>& x) {
  T s = 0;
  const T* px = x.ptr();
  for (int64_t i = 0; i < x.numel(); ++i) s += px[i];
  auto out = TensorT<T>::scalar(s);
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot]() mutable {
    if (!xt.requires_grad()) return;
    const T g = ot.grad()[0];
    T* dx = xt.grad_ptr();
    for (int64_t i = 0; i < xt.numel(); ++i) dx[i] += g;
  };
  return finish_op("sum", std::move(out), {x}, std::move(backward));
}

template <class T>
TensorT<T> mean(const TensorT<T>& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

// Copy-based reshape; backward copies the gradient back.
template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape shape) {
  check_arg(shape_numel(shape) == x.numel(),
            "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  auto out = TensorT<T>::from_values(std::move(shape), x.data());
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t i = 0; i < xt.numel(); ++i) dx[i] += g[static_cast<size_t>(i)];
  };
  return finish_op("reshape", std::move(out), {x}, std::move(backward));
}

// Concatenation along `dim`; all other extents must match.
template <class T>
TensorT<T> concat(const std::vector<TensorT<T>>& parts, int dim) {
  check_arg(!parts.empty(), "concat: no inputs");
  const Shape& s0 = parts[0].shape();
  check_arg(dim >= 0 && dim < static_cast<int>(s0.size()), "concat: bad dim");
  Shape out_shape = s0;
  int64_t total_dim = 0;
  for (const auto& p : parts) {
    check_arg(p.rank() == static_cast<int>(s0.size()), "concat: rank mismatch");
    for (int i = 0; i < p.rank(); ++i)
      if (i != dim)
        check_arg(p.dim(i) == s0[static_cast<size_t>(i)], "concat: extent mismatch");
    total_dim += p.dim(dim);
  }
  out_shape[static_cast<size_t>(dim)] = total_dim;

  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s0[static_cast<size_t>(i)];
  for (size_t i = static_cast<size_t>(dim) + 1; i < s0.size(); ++i) inner *= s0[i];

  auto out = TensorT<T>::zeros(out_shape);
  T* po = out.ptr();
  const int64_t out_row = total_dim * inner;
  int64_t offset = 0;
  for (const auto& p : parts) {
    const int64_t piece = p.dim(dim) * inner;
    const T* pp = p.ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::copy(pp + o * piece, pp + (o + 1) * piece, po + o * out_row + offset);
    offset += piece;
  }

  std::vector<TensorT<T>> inputs = parts;
  TensorT<T> ot = out;
  auto backward = [inputs, ot, outer, inner, total_dim]() mutable {
    const std::vector<T>& g = ot.grad();
    const int64_t out_row2 = total_dim * inner;
    int64_t off = 0;
    for (auto& p : inputs) {
      int64_t pdim = p.numel() / (outer * inner);
      const int64_t piece = pdim * inner;
      if (p.requires_grad()) {
        T* dp = p.grad_ptr();
        for (int64_t o = 0; o < outer; ++o) {
          const T* src = g.data() + o * out_row2 + off;
          for (int64_t i = 0; i < piece; ++i) dp[o * piece + i] += src[i];
        }
      }
      off += piece;
    }
  };
  return finish_op("concat", std::move(out), std::move(inputs), std::move(backward));
}

// Contiguous slice along `dim` (copy). Backward scatters into the slice range.
template <class T>
TensorT<T> narrow(const TensorT<T>& x, int dim, int64_t start, int64_t len) {
  check_arg(dim >= 0 && dim < x.rank(), "narrow: bad dim");
  check_arg(start >= 0 && len >= 1 && start + len <= x.dim(dim), "narrow: bad range");
  Shape out_shape = x.shape();
  out_shape[static_cast<size_t>(dim)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= x.dim(i);
  for (int i = dim + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const int64_t in_row = x.dim(dim) * inner;
  const int64_t out_row = len * inner;

  auto out = TensorT<T>::zeros(out_shape);
  T* po = out.ptr();
  const T* px = x.ptr();
  for (int64_t o = 0; o < outer; ++o)
    std::copy(px + o * in_row + start * inner, px + o * in_row + (start + len) * inner,
              po + o * out_row);

  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot, outer, inner, in_row, out_row, start]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t o = 0; o < outer; ++o) {
      const T* src = g.data() + o * out_row;
      T* dst = dx + o * in_row + start * inner;
      for (int64_t i = 0; i < out_row; ++i) dst[i] += src[i];
    }
  };
  return finish_op("narrow", std::move(out), {x}, std::move(backward));
}

// Per-position channel mean: [N,C,H,W] -> [N,1,H,W].
template <class T>
TensorT<T> channel_mean(const TensorT<T>& x) {
  check_arg(x.rank() == 4, "channel_mean: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  auto out = TensorT<T>::zeros({N, 1, x.dim(2), x.dim(3)});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* src = px + (n * C + c) * HW;
      T* dst = po + n * HW;
      for (int64_t i = 0; i < HW; ++i) dst[i] += src[i];
    }
  const T inv = T(1) / static_cast<T>(C);
  for (int64_t i = 0; i < out.numel(); ++i) po[i] *= inv;
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot, N, C, HW, inv]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        T* dst = dx + (n * C + c) * HW;
        const T* src = g.data() + n * HW;
        for (int64_t i = 0; i < HW; ++i) dst[i] += inv * src[i];
      }
  };
  return finish_op("channel_mean", std::move(out), {x}, std::move(backward));
}

// Per-position channel max: [N,C,H,W] -> [N,1,H,W]. First channel wins ties.
template <class T>
TensorT<T> channel_max(const TensorT<T>& x) {
  check_arg(x.rank() == 4, "channel_max: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  auto out = TensorT<T>::zeros({N, 1, x.dim(2), x.dim(3)});
  auto argmax = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(N * HW), 0);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < HW; ++i) {
      T best = px[(n * C) * HW + i];
      int32_t bc = 0;
      for (int64_t c = 1; c < C; ++c) {
        const T v = px[(n * C + c) * HW + i];
        if (v > best) {
          best = v;
          bc = static_cast<int32_t>(c);
        }
      }
      po[n * HW + i] = best;
      (*argmax)[static_cast<size_t>(n * HW + i)] = bc;
    }
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot, argmax, N, C, HW]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t i = 0; i < HW; ++i) {
        const int64_t c = (*argmax)[static_cast<size_t>(n * HW + i)];
        dx[(n * C + c) * HW + i] += g[static_cast<size_t>(n * HW + i)];
      }
  };
  return finish_op("channel_max", std::move(out), {x}, std::move(backward));
}

// --- loss primitives --------------------------------------------------------
//
// Targets and per-element weights are plain value tensors; gradients flow into
// the prediction operand only.

// sum_i w_i * BCE(sigmoid(z_i), t_i) / norm, numerically stable form.
template <class T>
TensorT<T> bce_with_logits_sum(const TensorT<T>& logits, const TensorT<T>& targets,
                               const TensorT<T>& weights, double norm) {
  check_arg(logits.shape() == targets.shape() && logits.shape() == weights.shape(),
            "bce_with_logits_sum: shape mismatch");
  check_arg(norm > 0, "bce_with_logits_sum: norm must be positive");
  const T* z = logits.ptr();
  const T* t = targets.ptr();
  const T* w = weights.ptr();
  T acc = 0;
  for (int64_t i = 0; i < logits.numel(); ++i) {
    const T zi = z[i];
    const T l = std::max(zi, T(0)) - zi * t[i] + std::log1p(std::exp(-std::abs(zi)));
    acc += w[i] * l;
  }
  auto out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<T>(norm)));
  TensorT<T> zt = logits, tt = targets, wt = weights, ot = out;
  const T inv = T(1) / static_cast<T>(norm);
  auto backward = [zt, tt, wt, ot, inv]() mutable {
    if (!zt.requires_grad()) return;
    const T g = ot.grad()[0];
    const T* z = zt.ptr();
    const T* t = tt.ptr();
    const T* w = wt.ptr();
    T* dz = zt.grad_ptr();
    for (int64_t i = 0; i < zt.numel(); ++i) {
      const T zi = z[i];
      const T sig = zi >= T(0) ? T(1) / (T(1) + std::exp(-zi))
                               : std::exp(zi) / (T(1) + std::exp(zi));
      dz[i] += g * inv * w[i] * (sig - t[i]);
    }
  };
  return finish_op("bce_with_logits_sum", std::move(out), {logits, targets, weights},
                   std::move(backward));
}

// sum_i w_i * smooth_l1(p_i - t_i) / norm with the beta=1 piecewise form.
template <class T>
TensorT<T> smooth_l1_sum(const TensorT<T>& pred, const TensorT<T>& target,
                         const TensorT<T>& weights, double norm) {
  check_arg(pred.shape() == target.shape() && pred.shape() == weights.shape(),
            "smooth_l1_sum: shape mismatch");
  check_arg(norm > 0, "smooth_l1_sum: norm must be positive");
  const T* p = pred.ptr();
  const T* t = target.ptr();
  const T* w = weights.ptr();
  T acc = 0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const T e = p[i] - t[i];
    const T a = std::abs(e);
    acc += w[i] * (a < T(1) ? T(0.5) * e * e : a - T(0.5));
  }
  auto out = TensorT<T>::scalar(static_cast<T>(acc / static_cast<T>(norm)));
  TensorT<T> pt = pred, tt = target, wt = weights, ot = out;
  const T inv = T(1) / static_cast<T>(norm);
  auto backward = [pt, tt, wt, ot, inv]() mutable {
    if (!pt.requires_grad()) return;
    const T g = ot.grad()[0];
    const T* p = pt.ptr();
    const T* t = tt.ptr();
    const T* w = wt.ptr();
    T* dp = pt.grad_ptr();
    for (int64_t i = 0; i < pt.numel(); ++i) {
      const T e = p[i] - t[i];
      const T d = std::abs(e) < T(1) ? e : (e > T(0) ? T(1) : T(-1));
      dp[i] += g * inv * w[i] * d;
    }
  };
  return finish_op("smooth_l1_sum", std::move(out), {pred, target, weights},
                   std::move(backward));
}

// Mean softmax cross-entropy over rows of [R,C] against integer labels.
template <class T>
TensorT<T> cross_entropy_mean(const TensorT<T>& logits, const std::vector<int>& labels) {
  check_arg(logits.rank() == 2, "cross_entropy_mean: expects [R,C]");
  const int64_t R = logits.dim(0), C = logits.dim(1);
  check_arg(static_cast<int64_t>(labels.size()) == R, "cross_entropy_mean: label count");
  for (int l : labels) check_arg(l >= 0 && l < C, "cross_entropy_mean: label range");
  const T* z = logits.ptr();
  T acc = 0;
  for (int64_t r = 0; r < R; ++r) {
    const T* row = z + r * C;
    T mx = row[0];
    for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    T lse = 0;
    for (int64_t c = 0; c < C; ++c) lse += std::exp(row[c] - mx);
    acc += std::log(lse) + mx - row[labels[static_cast<size_t>(r)]];
  }
  auto out = TensorT<T>::scalar(acc / static_cast<T>(R));
  TensorT<T> zt = logits, ot = out;
  auto backward = [zt, ot, labels, R, C]() mutable {
    if (!zt.requires_grad()) return;
    const T g = ot.grad()[0] / static_cast<T>(R);
    const T* z = zt.ptr();
    T* dz = zt.grad_ptr();
    for (int64_t r = 0; r < R; ++r) {
      const T* row = z + r * C;
      T mx = row[0];
      for (int64_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
      T lse = 0;
      for (int64_t c = 0; c < C; ++c) lse += std::exp(row[c] - mx);
      for (int64_t c = 0; c < C; ++c) {
        const T p = std::exp(row[c] - mx) / lse;
        const T onehot = (c == labels[static_cast<size_t>(r)]) ? T(1) : T(0);
        dz[r * C + c] += g * (p - onehot);
      }
    }
  };
  return finish_op("cross_entropy_mean", std::move(out), {logits}, std::move(backward));
}

}  // namespace smrnet
