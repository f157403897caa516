#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "smrnet/rng.hpp"
#include "smrnet/tensor.hpp"

namespace smrnet {

enum class ParamKind { trainable, buffer };

template <class T>
using ParamVisitor = std::function<void(const std::string&, TensorT<T>&, ParamKind)>;

inline int64_t conv_out_extent(int64_t in, int64_t kernel, int64_t stride,
                               int64_t padding, int64_t dilation) {
  return (in + 2 * padding - dilation * (kernel - 1) - 1) / stride + 1;
}

// 2-D convolution (cross-correlation) with stride, zero padding, and dilation.
// Two interchangeable execution paths: im2col+GEMM (default) and direct loops.
template <class T>
struct Conv2dLayer {
  TensorT<T> weight;  // [Cout, Cin, Kh, Kw]
  TensorT<T> bias;    // [Cout]
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t dilation = 1;
  enum class Algo { im2col, direct };
  Algo algo = Algo::im2col;

  Conv2dLayer() = default;
  Conv2dLayer(int64_t out_ch, int64_t in_ch, int64_t kernel, int64_t stride_ = 1,
              int64_t padding_ = 0, int64_t dilation_ = 1)
      : weight(TensorT<T>::zeros({out_ch, in_ch, kernel, kernel})),
        bias(TensorT<T>::zeros({out_ch})),
        stride(stride_),
        padding(padding_),
        dilation(dilation_) {
    check_arg(stride >= 1 && padding >= 0 && dilation >= 1, "conv2d: bad geometry");
  }

  int64_t out_channels() const { return weight.dim(0); }
  int64_t in_channels() const { return weight.dim(1); }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".weight", weight, ParamKind::trainable);
    v(prefix + ".bias", bias, ParamKind::trainable);
  }
};

namespace detail {

// Gathers conv patches: col[(c*Kh+kh)*Kw+kw, oh*Wout+ow].
template <class T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t Kh, int64_t Kw,
            int64_t stride, int64_t padding, int64_t dilation, int64_t Hout,
            int64_t Wout, T* col) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t kh = 0; kh < Kh; ++kh)
      for (int64_t kw = 0; kw < Kw; ++kw) {
        T* dst = col + ((c * Kh + kh) * Kw + kw) * (Hout * Wout);
        for (int64_t oh = 0; oh < Hout; ++oh) {
          const int64_t ih = oh * stride - padding + kh * dilation;
          if (ih < 0 || ih >= H) {
            for (int64_t ow = 0; ow < Wout; ++ow) dst[oh * Wout + ow] = T(0);
            continue;
          }
          const T* src = x + (c * H + ih) * W;
          for (int64_t ow = 0; ow < Wout; ++ow) {
            const int64_t iw = ow * stride - padding + kw * dilation;
            dst[oh * Wout + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
          }
        }
      }
}

// Scatter-adds a col-layout gradient back onto the input image.
template <class T>
void col2im_add(const T* col, int64_t C, int64_t H, int64_t W, int64_t Kh, int64_t Kw,
                int64_t stride, int64_t padding, int64_t dilation, int64_t Hout,
                int64_t Wout, T* dx) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t kh = 0; kh < Kh; ++kh)
      for (int64_t kw = 0; kw < Kw; ++kw) {
        const T* src = col + ((c * Kh + kh) * Kw + kw) * (Hout * Wout);
        for (int64_t oh = 0; oh < Hout; ++oh) {
          const int64_t ih = oh * stride - padding + kh * dilation;
          if (ih < 0 || ih >= H) continue;
          T* dst = dx + (c * H + ih) * W;
          for (int64_t ow = 0; ow < Wout; ++ow) {
            const int64_t iw = ow * stride - padding + kw * dilation;
            if (iw >= 0 && iw < W) dst[iw] += src[oh * Wout + ow];
          }
        }
      }
}

}  // namespace detail

template <class T>
TensorT<T> conv2d(const Conv2dLayer<T>& layer, const TensorT<T>& x) {
  check_arg(x.rank() == 4, "conv2d: expects [N,Cin,H,W]");
  const int64_t N = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_arg(Cin == layer.in_channels(),
            "conv2d: input has " + std::to_string(Cin) + " channels, layer expects " +
                std::to_string(layer.in_channels()));
  const int64_t Cout = layer.out_channels();
  const int64_t Kh = layer.weight.dim(2), Kw = layer.weight.dim(3);
  const int64_t s = layer.stride, p = layer.padding, d = layer.dilation;
  const int64_t Hout = conv_out_extent(H, Kh, s, p, d);
  const int64_t Wout = conv_out_extent(W, Kw, s, p, d);
  check_arg(Hout >= 1 && Wout >= 1, "conv2d: degenerate output extent");

  auto out = TensorT<T>::zeros({N, Cout, Hout, Wout});
  const T* px = x.ptr();
  const T* pw = layer.weight.ptr();
  const T* pb = layer.bias.ptr();
  T* po = out.ptr();
  const int64_t K = Cin * Kh * Kw;
  const int64_t HWo = Hout * Wout;

  if (layer.algo == Conv2dLayer<T>::Algo::im2col) {
    std::vector<T> col(static_cast<size_t>(K * HWo));
    for (int64_t n = 0; n < N; ++n) {
      detail::im2col(px + n * Cin * H * W, Cin, H, W, Kh, Kw, s, p, d, Hout, Wout,
                     col.data());
      gemm_nn(Cout, HWo, K, pw, col.data(), po + n * Cout * HWo, false);
    }
  } else {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t co = 0; co < Cout; ++co)
        for (int64_t oh = 0; oh < Hout; ++oh)
          for (int64_t ow = 0; ow < Wout; ++ow) {
            T acc = 0;
            for (int64_t ci = 0; ci < Cin; ++ci)
              for (int64_t kh = 0; kh < Kh; ++kh)
                for (int64_t kw = 0; kw < Kw; ++kw) {
                  const int64_t ih = oh * s - p + kh * d;
                  const int64_t iw = ow * s - p + kw * d;
                  if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                  acc += px[((n * Cin + ci) * H + ih) * W + iw] *
                         pw[((co * Cin + ci) * Kh + kh) * Kw + kw];
                }
            po[((n * Cout + co) * Hout + oh) * Wout + ow] = acc;
          }
  }
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Cout; ++co) {
      T* dst = po + (n * Cout + co) * HWo;
      for (int64_t i = 0; i < HWo; ++i) dst[i] += pb[co];
    }

  TensorT<T> xt = x, wt = layer.weight, bt = layer.bias, ot = out;
  auto backward = [xt, wt, bt, ot, N, Cin, H, W, Cout, Kh, Kw, s, p, d, Hout, Wout, K,
                   HWo]() mutable {
    const T* g = ot.grad().data();
    if (bt.requires_grad()) {
      T* db = bt.grad_ptr();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Cout; ++co) {
          const T* src = g + (n * Cout + co) * HWo;
          T acc = 0;
          for (int64_t i = 0; i < HWo; ++i) acc += src[i];
          db[co] += acc;
        }
    }
    std::vector<T> col(static_cast<size_t>(K * HWo));
    std::vector<T> dcol(static_cast<size_t>(K * HWo));
    const bool need_w = wt.requires_grad();
    const bool need_x = xt.requires_grad();
    if (!need_w && !need_x) return;
    T* dw = need_w ? wt.grad_ptr() : nullptr;
    T* dx = need_x ? xt.grad_ptr() : nullptr;
    for (int64_t n = 0; n < N; ++n) {
      const T* gn = g + n * Cout * HWo;
      if (need_w) {
        detail::im2col(xt.ptr() + n * Cin * H * W, Cin, H, W, Kh, Kw, s, p, d, Hout,
                       Wout, col.data());
        // dW[Cout,K] += dY[Cout,HWo] * col[K,HWo]^T
        gemm_nt(Cout, K, HWo, gn, col.data(), dw, true);
      }
      if (need_x) {
        // dcol[K,HWo] = W[Cout,K]^T * dY[Cout,HWo]
        gemm_tn(K, HWo, Cout, wt.ptr(), gn, dcol.data(), false);
        detail::col2im_add(dcol.data(), Cin, H, W, Kh, Kw, s, p, d, Hout, Wout,
                           dx + n * Cin * H * W);
      }
    }
  };
  return finish_op("conv2d", std::move(out), {x, layer.weight, layer.bias},
                   std::move(backward));
}

enum class PoolKind { max, avg };

// Square-window pooling. Max routes gradient to the first argmax in row-major
// scan; avg divides by the count of in-bounds taps.
template <class T>
TensorT<T> pool2d(PoolKind kind, const TensorT<T>& x, int64_t window, int64_t stride,
                  int64_t padding = 0) {
  check_arg(x.rank() == 4, "pool2d: expects [N,C,H,W]");
  check_arg(window >= 1 && stride >= 1 && padding >= 0, "pool2d: bad geometry");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  check_arg(window <= H + 2 * padding && window <= W + 2 * padding,
            "pool2d: window exceeds spatial extent");
  const int64_t Hout = (H + 2 * padding - window) / stride + 1;
  const int64_t Wout = (W + 2 * padding - window) / stride + 1;
  check_arg(Hout >= 1 && Wout >= 1, "pool2d: degenerate output extent");

  auto out = TensorT<T>::zeros({N, C, Hout, Wout});
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (kind == PoolKind::max) argmax->assign(static_cast<size_t>(out.numel()), -1);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T* plane = px + (n * C + c) * H * W;
      for (int64_t oh = 0; oh < Hout; ++oh)
        for (int64_t ow = 0; ow < Wout; ++ow) {
          const int64_t h0 = oh * stride - padding, w0 = ow * stride - padding;
          T best = 0;
          int64_t best_idx = -1;
          T acc = 0;
          int64_t count = 0;
          for (int64_t kh = 0; kh < window; ++kh) {
            const int64_t ih = h0 + kh;
            if (ih < 0 || ih >= H) continue;
            for (int64_t kw = 0; kw < window; ++kw) {
              const int64_t iw = w0 + kw;
              if (iw < 0 || iw >= W) continue;
              const T v = plane[ih * W + iw];
              if (kind == PoolKind::max) {
                if (best_idx < 0 || v > best) {
                  best = v;
                  best_idx = ih * W + iw;
                }
              } else {
                acc += v;
                ++count;
              }
            }
          }
          const int64_t oi = ((n * C + c) * Hout + oh) * Wout + ow;
          if (kind == PoolKind::max) {
            po[oi] = best;
            (*argmax)[static_cast<size_t>(oi)] = best_idx;
          } else {
            po[oi] = acc / static_cast<T>(count);
          }
        }
    }

  TensorT<T> xt = x, ot = out;
  auto backward = [kind, xt, ot, argmax, N, C, H, W, Hout, Wout, window, stride,
                   padding]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t n = 0; n < N; ++n)
      for (int64_t c = 0; c < C; ++c) {
        T* dplane = dx + (n * C + c) * H * W;
        for (int64_t oh = 0; oh < Hout; ++oh)
          for (int64_t ow = 0; ow < Wout; ++ow) {
            const int64_t oi = ((n * C + c) * Hout + oh) * Wout + ow;
            const T go = g[static_cast<size_t>(oi)];
            if (kind == PoolKind::max) {
              const int64_t bi = (*argmax)[static_cast<size_t>(oi)];
              if (bi >= 0) dplane[bi] += go;
            } else {
              const int64_t h0 = oh * stride - padding, w0 = ow * stride - padding;
              int64_t count = 0;
              for (int64_t kh = 0; kh < window; ++kh) {
                const int64_t ih = h0 + kh;
                if (ih < 0 || ih >= H) continue;
                for (int64_t kw = 0; kw < window; ++kw) {
                  const int64_t iw = w0 + kw;
                  if (iw >= 0 && iw < W) ++count;
                }
              }
              const T share = go / static_cast<T>(count);
              for (int64_t kh = 0; kh < window; ++kh) {
                const int64_t ih = h0 + kh;
                if (ih < 0 || ih >= H) continue;
                for (int64_t kw = 0; kw < window; ++kw) {
                  const int64_t iw = w0 + kw;
                  if (iw >= 0 && iw < W) dplane[ih * W + iw] += share;
                }
              }
            }
          }
      }
  };
  return finish_op(kind == PoolKind::max ? "maxpool2d" : "avgpool2d", std::move(out),
                   {x}, std::move(backward));
}

// Spatial reduction to [N,C,1,1].
template <class T>
TensorT<T> global_pool(PoolKind kind, const TensorT<T>& x) {
  check_arg(x.rank() == 4, "global_pool: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  auto out = TensorT<T>::zeros({N, C, 1, 1});
  auto argmax = std::make_shared<std::vector<int64_t>>();
  if (kind == PoolKind::max) argmax->assign(static_cast<size_t>(N * C), 0);
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = px + nc * HW;
    if (kind == PoolKind::max) {
      T best = plane[0];
      int64_t bi = 0;
      for (int64_t i = 1; i < HW; ++i)
        if (plane[i] > best) {
          best = plane[i];
          bi = i;
        }
      po[nc] = best;
      (*argmax)[static_cast<size_t>(nc)] = bi;
    } else {
      T acc = 0;
      for (int64_t i = 0; i < HW; ++i) acc += plane[i];
      po[nc] = acc / static_cast<T>(HW);
    }
  }
  TensorT<T> xt = x, ot = out;
  auto backward = [kind, xt, ot, argmax, N, C, HW]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      const T go = g[static_cast<size_t>(nc)];
      if (kind == PoolKind::max) {
        dx[nc * HW + (*argmax)[static_cast<size_t>(nc)]] += go;
      } else {
        const T share = go / static_cast<T>(HW);
        T* dplane = dx + nc * HW;
        for (int64_t i = 0; i < HW; ++i) dplane[i] += share;
      }
    }
  };
  return finish_op(kind == PoolKind::max ? "global_maxpool" : "global_avgpool",
                   std::move(out), {x}, std::move(backward));
}

template <class T>
struct BatchNormLayer {
  TensorT<T> gamma, beta;               // [C], trainable
  TensorT<T> running_mean, running_var;  // [C], buffers
  double momentum = 0.1;
  double eps = 1e-5;
  bool training = true;

  BatchNormLayer() = default;
  explicit BatchNormLayer(int64_t channels)
      : gamma(TensorT<T>::full({channels}, T(1))),
        beta(TensorT<T>::zeros({channels})),
        running_mean(TensorT<T>::zeros({channels})),
        running_var(TensorT<T>::full({channels}, T(1))) {}

  int64_t channels() const { return gamma.dim(0); }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".gamma", gamma, ParamKind::trainable);
    v(prefix + ".beta", beta, ParamKind::trainable);
    v(prefix + ".running_mean", running_mean, ParamKind::buffer);
    v(prefix + ".running_var", running_var, ParamKind::buffer);
  }
};

template <class T>
TensorT<T> batchnorm(BatchNormLayer<T>& layer, const TensorT<T>& x) {
  check_arg(x.rank() == 4, "batchnorm: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
  check_arg(C == layer.channels(), "batchnorm: channel mismatch");
  check_arg(!layer.training || N >= 2, "batchnorm: train mode requires batch >= 2");

  auto out = TensorT<T>::zeros(x.shape());
  const T* px = x.ptr();
  T* po = out.ptr();
  const T* gm = layer.gamma.ptr();
  const T* bt = layer.beta.ptr();
  const int64_t m = N * HW;

  if (layer.training) {
    auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) {
      T mu = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* src = px + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) mu += src[i];
      }
      mu /= static_cast<T>(m);
      T var = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* src = px + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          const T d = src[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      const T istd = T(1) / std::sqrt(var + static_cast<T>(layer.eps));
      (*inv_std)[static_cast<size_t>(c)] = istd;
      for (int64_t n = 0; n < N; ++n) {
        const T* src = px + (n * C + c) * HW;
        T* xh = xhat->data() + (n * C + c) * HW;
        T* dst = po + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          xh[i] = (src[i] - mu) * istd;
          dst[i] = gm[c] * xh[i] + bt[c];
        }
      }
      // Running stats: exponential update, unbiased variance.
      const T mom = static_cast<T>(layer.momentum);
      const T unbiased = var * static_cast<T>(m) / static_cast<T>(m - 1);
      layer.running_mean.data()[static_cast<size_t>(c)] =
          (T(1) - mom) * layer.running_mean.data()[static_cast<size_t>(c)] + mom * mu;
      layer.running_var.data()[static_cast<size_t>(c)] =
          (T(1) - mom) * layer.running_var.data()[static_cast<size_t>(c)] + mom * unbiased;
    }
    TensorT<T> xt = x, gt = layer.gamma, btt = layer.beta, ot = out;
    auto backward = [xt, gt, btt, ot, xhat, inv_std, N, C, HW, m]() mutable {
      const std::vector<T>& g = ot.grad();
      const T* gmp = gt.ptr();
      for (int64_t c = 0; c < C; ++c) {
        T sum_g = 0, sum_gx = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* gr = g.data() + (n * C + c) * HW;
          const T* xh = xhat->data() + (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) {
            sum_g += gr[i];
            sum_gx += gr[i] * xh[i];
          }
        }
        if (gt.requires_grad()) gt.grad()[static_cast<size_t>(c)] += sum_gx;
        if (btt.requires_grad()) btt.grad()[static_cast<size_t>(c)] += sum_g;
        if (xt.requires_grad()) {
          T* dx = xt.grad_ptr();
          const T istd = (*inv_std)[static_cast<size_t>(c)];
          const T mean_g = sum_g / static_cast<T>(m);
          const T mean_gx = sum_gx / static_cast<T>(m);
          for (int64_t n = 0; n < N; ++n) {
            const T* gr = g.data() + (n * C + c) * HW;
            const T* xh = xhat->data() + (n * C + c) * HW;
            T* dst = dx + (n * C + c) * HW;
            for (int64_t i = 0; i < HW; ++i)
              dst[i] += gmp[c] * istd * (gr[i] - mean_g - xh[i] * mean_gx);
          }
        }
      }
    };
    return finish_op("batchnorm", std::move(out), {x, layer.gamma, layer.beta},
                     std::move(backward));
  }

  // Eval: affine map by running statistics.
  const T* rm = layer.running_mean.ptr();
  const T* rv = layer.running_var.ptr();
  auto xhat = std::make_shared<std::vector<T>>(static_cast<size_t>(x.numel()));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const T istd = T(1) / std::sqrt(rv[c] + static_cast<T>(layer.eps));
      const T* src = px + (n * C + c) * HW;
      T* xh = xhat->data() + (n * C + c) * HW;
      T* dst = po + (n * C + c) * HW;
      for (int64_t i = 0; i < HW; ++i) {
        xh[i] = (src[i] - rm[c]) * istd;
        dst[i] = gm[c] * xh[i] + bt[c];
      }
    }
  TensorT<T> xt = x, gt = layer.gamma, btt = layer.beta, ot = out;
  TensorT<T> rvt = layer.running_var;
  const T epsT = static_cast<T>(layer.eps);
  auto backward = [xt, gt, btt, ot, xhat, rvt, epsT, N, C, HW]() mutable {
    const std::vector<T>& g = ot.grad();
    const T* gmp = gt.ptr();
    const T* rv = rvt.ptr();
    for (int64_t c = 0; c < C; ++c) {
      const T istd = T(1) / std::sqrt(rv[c] + epsT);
      T sum_g = 0, sum_gx = 0;
      for (int64_t n = 0; n < N; ++n) {
        const T* gr = g.data() + (n * C + c) * HW;
        const T* xh = xhat->data() + (n * C + c) * HW;
        for (int64_t i = 0; i < HW; ++i) {
          sum_g += gr[i];
          sum_gx += gr[i] * xh[i];
        }
      }
      if (gt.requires_grad()) gt.grad()[static_cast<size_t>(c)] += sum_gx;
      if (btt.requires_grad()) btt.grad()[static_cast<size_t>(c)] += sum_g;
      if (xt.requires_grad()) {
        T* dx = xt.grad_ptr();
        for (int64_t n = 0; n < N; ++n) {
          const T* gr = g.data() + (n * C + c) * HW;
          T* dst = dx + (n * C + c) * HW;
          for (int64_t i = 0; i < HW; ++i) dst[i] += gmp[c] * istd * gr[i];
        }
      }
    }
  };
  return finish_op("batchnorm", std::move(out), {x, layer.gamma, layer.beta},
                   std::move(backward));
}

template <class T>
struct LinearLayer {
  TensorT<T> weight;  // [Out, In]
  TensorT<T> bias;    // [Out]

  LinearLayer() = default;
  LinearLayer(int64_t out, int64_t in)
      : weight(TensorT<T>::zeros({out, in})), bias(TensorT<T>::zeros({out})) {}

  int64_t out_features() const { return weight.dim(0); }
  int64_t in_features() const { return weight.dim(1); }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    v(prefix + ".weight", weight, ParamKind::trainable);
    v(prefix + ".bias", bias, ParamKind::trainable);
  }
};

// y[R,Out] = x[R,In] * W^T + b
template <class T>
TensorT<T> linear(const LinearLayer<T>& layer, const TensorT<T>& x) {
  check_arg(x.rank() == 2, "linear: expects [R,In]");
  const int64_t R = x.dim(0), In = x.dim(1), Out = layer.out_features();
  check_arg(In == layer.in_features(), "linear: feature size mismatch");
  auto out = TensorT<T>::zeros({R, Out});
  gemm_nt(R, Out, In, x.ptr(), layer.weight.ptr(), out.ptr(), false);
  T* po = out.ptr();
  const T* pb = layer.bias.ptr();
  for (int64_t r = 0; r < R; ++r)
    for (int64_t o = 0; o < Out; ++o) po[r * Out + o] += pb[o];

  TensorT<T> xt = x, wt = layer.weight, bt = layer.bias, ot = out;
  auto backward = [xt, wt, bt, ot, R, In, Out]() mutable {
    const T* g = ot.grad().data();
    if (xt.requires_grad()) gemm_nn(R, In, Out, g, wt.ptr(), xt.grad_ptr(), true);
    if (wt.requires_grad()) gemm_tn(Out, In, R, g, xt.ptr(), wt.grad_ptr(), true);
    if (bt.requires_grad()) {
      T* db = bt.grad_ptr();
      for (int64_t r = 0; r < R; ++r)
        for (int64_t o = 0; o < Out; ++o) db[o] += g[r * Out + o];
    }
  };
  return finish_op("linear", std::move(out), {x, layer.weight, layer.bias},
                   std::move(backward));
}

// Nearest-neighbor upsampling by an integer factor; backward sums each block.
template <class T>
TensorT<T> upsample_nearest(const TensorT<T>& x, int64_t factor) {
  check_arg(x.rank() == 4, "upsample_nearest: expects [N,C,H,W]");
  check_arg(factor >= 1, "upsample_nearest: factor must be >= 1");
  if (factor == 1) return scale(x, 1.0);
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Ho = H * factor, Wo = W * factor;
  auto out = TensorT<T>::zeros({N, C, Ho, Wo});
  const T* px = x.ptr();
  T* po = out.ptr();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* plane = px + nc * H * W;
    T* oplane = po + nc * Ho * Wo;
    for (int64_t oh = 0; oh < Ho; ++oh) {
      const T* row = plane + (oh / factor) * W;
      T* orow = oplane + oh * Wo;
      for (int64_t ow = 0; ow < Wo; ++ow) orow[ow] = row[ow / factor];
    }
  }
  TensorT<T> xt = x, ot = out;
  auto backward = [xt, ot, N, C, H, W, Ho, Wo, factor]() mutable {
    if (!xt.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dx = xt.grad_ptr();
    for (int64_t nc = 0; nc < N * C; ++nc) {
      T* dplane = dx + nc * H * W;
      const T* gplane = g.data() + nc * Ho * Wo;
      for (int64_t oh = 0; oh < Ho; ++oh) {
        T* drow = dplane + (oh / factor) * W;
        const T* grow = gplane + oh * Wo;
        for (int64_t ow = 0; ow < Wo; ++ow) drow[ow / factor] += grow[ow];
      }
    }
  };
  return finish_op("upsample_nearest", std::move(out), {x}, std::move(backward));
}

// He-normal weights, zero biases.
template <class T>
void init_params(Conv2dLayer<T>& layer, Rng& rng) {
  const int64_t fan_in = layer.weight.dim(1) * layer.weight.dim(2) * layer.weight.dim(3);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& w : layer.weight.data()) w = static_cast<T>(rng.normal(0.0, std_dev));
  std::fill(layer.bias.data().begin(), layer.bias.data().end(), T(0));
}

template <class T>
void init_params(LinearLayer<T>& layer, Rng& rng) {
  const int64_t fan_in = layer.weight.dim(1);
  const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& w : layer.weight.data()) w = static_cast<T>(rng.normal(0.0, std_dev));
  std::fill(layer.bias.data().begin(), layer.bias.data().end(), T(0));
}

template <class T>
void init_params(BatchNormLayer<T>& layer, Rng&) {
  std::fill(layer.gamma.data().begin(), layer.gamma.data().end(), T(1));
  std::fill(layer.beta.data().begin(), layer.beta.data().end(), T(0));
  std::fill(layer.running_mean.data().begin(), layer.running_mean.data().end(), T(0));
  std::fill(layer.running_var.data().begin(), layer.running_var.data().end(), T(1));
}

}  // namespace smrnet
