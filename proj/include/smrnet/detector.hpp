#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "smrnet/box.hpp"
#include "smrnet/layers.hpp"

namespace smrnet {

// Multi-kernel RPN head: parallel 5x5 / 3x3 / 1x1 convolutions over the fused
// map, combined by elementwise sum (or concat + 1x1 behind a flag), then ReLU
// and the two 1x1 prediction convs.
template <class T>
struct RpnHead {
  Conv2dLayer<T> conv5, conv3, conv1;
  std::optional<Conv2dLayer<T>> combine_proj;  // concat mode only
  Conv2dLayer<T> objectness;  // 1x1, Cf -> A
  Conv2dLayer<T> box_deltas;  // 1x1, Cf -> 4A
  bool concat_combine = false;

  RpnHead() = default;
  RpnHead(int64_t fused_ch, int anchors_per_cell, bool concat_combine_ = false)
      : conv5(fused_ch, fused_ch, 5, 1, 2, 1),
        conv3(fused_ch, fused_ch, 3, 1, 1, 1),
        conv1(fused_ch, fused_ch, 1, 1, 0, 1),
        objectness(anchors_per_cell, fused_ch, 1, 1, 0, 1),
        box_deltas(4 * anchors_per_cell, fused_ch, 1, 1, 0, 1),
        concat_combine(concat_combine_) {
    if (concat_combine) combine_proj.emplace(fused_ch, 3 * fused_ch, 1, 1, 0, 1);
  }

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    conv5.visit(prefix + ".conv5", v);
    conv3.visit(prefix + ".conv3", v);
    conv1.visit(prefix + ".conv1", v);
    if (combine_proj) combine_proj->visit(prefix + ".combine_proj", v);
    objectness.visit(prefix + ".objectness", v);
    box_deltas.visit(prefix + ".box_deltas", v);
  }

  void init(Rng& rng) {
    init_params(conv5, rng);
    init_params(conv3, rng);
    init_params(conv1, rng);
    if (combine_proj) init_params(*combine_proj, rng);
    init_params(objectness, rng);
    init_params(box_deltas, rng);
  }
};

template <class T>
struct RpnOut {
  TensorT<T> logits;  // [N, A, h, w]
  TensorT<T> deltas;  // [N, 4A, h, w]
};

template <class T>
RpnOut<T> rpn_forward(const RpnHead<T>& head, const TensorT<T>& fused) {
  auto y5 = conv2d(head.conv5, fused);
  auto y3 = conv2d(head.conv3, fused);
  auto y1 = conv2d(head.conv1, fused);
  TensorT<T> combined;
  if (head.concat_combine)
    combined = conv2d(*head.combine_proj, concat<T>({y5, y3, y1}, 1));
  else
    combined = add(add(y5, y3), y1);
  auto shared = relu(combined);
  return {conv2d(head.objectness, shared), conv2d(head.box_deltas, shared)};
}

// Max-pools the RoI's feature-space rectangle into an out x out grid with
// floor/ceil integer bin edges. Empty bins yield 0. Gradients route to the
// per-bin argmax.
template <class T>
TensorT<T> roi_pool(const TensorT<T>& fused, int64_t sample, const BBox& roi,
                    double stride, int64_t out_size = 7) {
  check_arg(fused.rank() == 4, "roi_pool: expects [N,C,h,w]");
  check_arg(sample >= 0 && sample < fused.dim(0), "roi_pool: bad sample index");
  check_arg(roi.valid(), "roi_pool: degenerate roi");
  const int64_t C = fused.dim(1), h = fused.dim(2), w = fused.dim(3);

  const int64_t x1 = static_cast<int64_t>(std::floor(roi.x1 / stride));
  const int64_t y1 = static_cast<int64_t>(std::floor(roi.y1 / stride));
  const int64_t x2 = static_cast<int64_t>(std::ceil(roi.x2 / stride));
  const int64_t y2 = static_cast<int64_t>(std::ceil(roi.y2 / stride));
  check_arg(x2 > 0 && y2 > 0 && x1 < w && y1 < h,
            "roi_pool: roi lies fully outside the feature map");
  const int64_t roi_w = std::max<int64_t>(x2 - x1, 1);
  const int64_t roi_h = std::max<int64_t>(y2 - y1, 1);

  auto out = TensorT<T>::zeros({C, out_size, out_size});
  auto argmax = std::make_shared<std::vector<int64_t>>(
      static_cast<size_t>(out.numel()), int64_t{-1});
  const T* base = fused.ptr() + sample * C * h * w;
  T* po = out.ptr();
  for (int64_t bi = 0; bi < out_size; ++bi) {
    int64_t hs = y1 + (bi * roi_h) / out_size;
    int64_t he = y1 + ((bi + 1) * roi_h + out_size - 1) / out_size;
    hs = std::max<int64_t>(hs, 0);
    he = std::min<int64_t>(he, h);
    for (int64_t bj = 0; bj < out_size; ++bj) {
      int64_t ws = x1 + (bj * roi_w) / out_size;
      int64_t we = x1 + ((bj + 1) * roi_w + out_size - 1) / out_size;
      ws = std::max<int64_t>(ws, 0);
      we = std::min<int64_t>(we, w);
      if (hs >= he || ws >= we) continue;  // empty bin stays 0
      for (int64_t c = 0; c < C; ++c) {
        const T* plane = base + c * h * w;
        T best = plane[hs * w + ws];
        int64_t best_idx = hs * w + ws;
        for (int64_t y = hs; y < he; ++y)
          for (int64_t x = ws; x < we; ++x) {
            const T v = plane[y * w + x];
            if (v > best) {
              best = v;
              best_idx = y * w + x;
            }
          }
        const int64_t oi = (c * out_size + bi) * out_size + bj;
        po[oi] = best;
        (*argmax)[static_cast<size_t>(oi)] = c * h * w + best_idx;
      }
    }
  }

  TensorT<T> ft = fused, ot = out;
  const int64_t plane = C * h * w;
  auto backward = [ft, ot, argmax, sample, plane]() mutable {
    if (!ft.requires_grad()) return;
    const std::vector<T>& g = ot.grad();
    T* dst = ft.grad_ptr() + sample * plane;
    for (size_t i = 0; i < argmax->size(); ++i) {
      const int64_t src = (*argmax)[i];
      if (src >= 0) dst[src] += g[i];
    }
  };
  return finish_op("roi_pool", std::move(out), {fused}, std::move(backward));
}

// Pools a list of (sample, roi) pairs and flattens them into [R, C*out*out]
// rows for the detection head.
template <class T>
TensorT<T> roi_pool_rows(const TensorT<T>& fused,
                         const std::vector<std::pair<int64_t, BBox>>& rois,
                         double stride, int64_t out_size = 7) {
  check_arg(!rois.empty(), "roi_pool_rows: no rois");
  const int64_t D = fused.dim(1) * out_size * out_size;
  std::vector<TensorT<T>> rows;
  rows.reserve(rois.size());
  for (const auto& [n, box] : rois)
    rows.push_back(reshape(roi_pool(fused, n, box, stride, out_size), {1, D}));
  return rows.size() == 1 ? rows[0] : concat(rows, 0);
}

// Two hidden linear layers with ReLU, then classification logits and per-class
// box regression outputs.
template <class T>
struct DetectionHead {
  LinearLayer<T> fc1, fc2;
  LinearLayer<T> cls;  // hidden -> num_classes
  LinearLayer<T> reg;  // hidden -> 4*num_classes

  DetectionHead() = default;
  DetectionHead(int64_t in_features, int64_t hidden, int num_classes)
      : fc1(hidden, in_features),
        fc2(hidden, hidden),
        cls(num_classes, hidden),
        reg(4 * num_classes, hidden) {}

  void visit(const std::string& prefix, const ParamVisitor<T>& v) {
    fc1.visit(prefix + ".fc1", v);
    fc2.visit(prefix + ".fc2", v);
    cls.visit(prefix + ".cls", v);
    reg.visit(prefix + ".reg", v);
  }

  void init(Rng& rng) {
    init_params(fc1, rng);
    init_params(fc2, rng);
    init_params(cls, rng);
    init_params(reg, rng);
  }
};

template <class T>
struct HeadOut {
  TensorT<T> cls_logits;  // [R, num_classes]
  TensorT<T> reg;         // [R, 4*num_classes]
};

template <class T>
HeadOut<T> detection_head(const DetectionHead<T>& head, const TensorT<T>& pooled_rows) {
  auto hid = relu(linear(head.fc2, relu(linear(head.fc1, pooled_rows))));
  return {linear(head.cls, hid), linear(head.reg, hid)};
}

struct ProposalParams {
  int pre_nms_topk = 1000;
  int post_nms = 100;
  double nms_thresh = 0.7;
  double min_side = 4.0;
};

// Decodes every anchor against its predicted deltas, clips to the image,
// drops boxes below the minimum side, ranks by objectness (ties by anchor
// index), applies NMS, and keeps the first post_nms survivors.
//
// logits/deltas point at one sample's [A,h,w] / [4A,h,w] planes; anchors are
// ordered (cell row-major, scale, ratio) as produced by generate_anchors.
template <class T>
std::vector<BBox> select_proposals(const T* logits, const T* deltas,
                                   const std::vector<Anchor>& anchors, int A, int h,
                                   int w, double img_w, double img_h,
                                   const ProposalParams& params) {
  const int64_t hw = static_cast<int64_t>(h) * w;
  std::vector<Detection> candidates;
  candidates.reserve(anchors.size());
  for (size_t k = 0; k < anchors.size(); ++k) {
    const Anchor& a = anchors[k];
    // Anchor k at cell (i,j) with per-cell slot s maps to plane s at (i,j).
    const int slot = static_cast<int>(k % static_cast<size_t>(A));
    const int64_t cell = static_cast<int64_t>(a.cell_i) * w + a.cell_j;
    const T logit = logits[slot * hw + cell];
    std::array<double, 4> d;
    for (int t = 0; t < 4; ++t)
      d[static_cast<size_t>(t)] = static_cast<double>(deltas[(4 * slot + t) * hw + cell]);
    BBox box = clip_box(decode_box(d, a.box), img_w, img_h);
    if (box.width() < params.min_side || box.height() < params.min_side) continue;
    const double score =
        logit >= T(0) ? 1.0 / (1.0 + std::exp(-static_cast<double>(logit)))
                      : std::exp(static_cast<double>(logit)) /
                            (1.0 + std::exp(static_cast<double>(logit)));
    candidates.push_back(Detection{box, 0, score});
  }
  std::vector<size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t x, size_t y) {
    if (candidates[x].score != candidates[y].score)
      return candidates[x].score > candidates[y].score;
    return x < y;
  });
  if (static_cast<int>(order.size()) > params.pre_nms_topk)
    order.resize(static_cast<size_t>(params.pre_nms_topk));
  std::vector<Detection> ranked;
  ranked.reserve(order.size());
  for (size_t i : order) ranked.push_back(candidates[i]);
  auto kept = nms(ranked, params.nms_thresh);
  if (static_cast<int>(kept.size()) > params.post_nms)
    kept.resize(static_cast<size_t>(params.post_nms));
  std::vector<BBox> out;
  out.reserve(kept.size());
  for (const auto& d : kept) out.push_back(d.box);
  return out;
}

}  // namespace smrnet
