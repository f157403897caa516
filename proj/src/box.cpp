#include "smrnet/box.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "smrnet/common.hpp"

namespace smrnet {

namespace {
// Matches the clamp used by the standard Faster R-CNN decoder.
constexpr double kDeltaClip = 4.135166556742356;  // log(1000/16)
}  // namespace

double iou(const BBox& p, const BBox& q) {
  check_arg(p.valid(), "iou: degenerate first box");
  check_arg(q.valid(), "iou: degenerate second box");
  const double ix1 = std::max(p.x1, q.x1);
  const double iy1 = std::max(p.y1, q.y1);
  const double ix2 = std::min(p.x2, q.x2);
  const double iy2 = std::min(p.y2, q.y2);
  const double iw = ix2 - ix1;
  const double ih = iy2 - iy1;
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  return inter / (p.area() + q.area() - inter);
}

BBox clip_box(const BBox& b, double img_w, double img_h) {
  BBox out;
  out.x1 = std::min(std::max(b.x1, 0.0), img_w);
  out.y1 = std::min(std::max(b.y1, 0.0), img_h);
  out.x2 = std::min(std::max(b.x2, 0.0), img_w);
  out.y2 = std::min(std::max(b.y2, 0.0), img_h);
  return out;
}

std::vector<Anchor> generate_anchors(int grid_h, int grid_w, double stride,
                                     const std::vector<double>& scales,
                                     const std::vector<double>& ratios) {
  check_arg(grid_h >= 1 && grid_w >= 1, "generate_anchors: empty grid");
  check_arg(!scales.empty() && !ratios.empty(), "generate_anchors: empty config");
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<size_t>(grid_h) * static_cast<size_t>(grid_w) *
                  scales.size() * ratios.size());
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const double cx = (j + 0.5) * stride;
      const double cy = (i + 0.5) * stride;
      for (size_t si = 0; si < scales.size(); ++si)
        for (size_t ri = 0; ri < ratios.size(); ++ri) {
          const double w = scales[si] * std::sqrt(ratios[ri]);
          const double h = scales[si] / std::sqrt(ratios[ri]);
          Anchor a;
          a.box = BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
          a.cell_i = i;
          a.cell_j = j;
          a.scale_idx = static_cast<int>(si);
          a.ratio_idx = static_cast<int>(ri);
          anchors.push_back(a);
        }
    }
  return anchors;
}

std::array<double, 4> encode_box(const BBox& gt, const BBox& anchor) {
  check_arg(anchor.valid(), "encode_box: degenerate anchor");
  check_arg(gt.valid(), "encode_box: degenerate box");
  const double wa = anchor.width(), ha = anchor.height();
  return {(gt.cx() - anchor.cx()) / wa, (gt.cy() - anchor.cy()) / ha,
          std::log(gt.width() / wa), std::log(gt.height() / ha)};
}

BBox decode_box(const std::array<double, 4>& delta, const BBox& anchor) {
  check_arg(anchor.valid(), "decode_box: degenerate anchor");
  const double wa = anchor.width(), ha = anchor.height();
  const double cx = anchor.cx() + delta[0] * wa;
  const double cy = anchor.cy() + delta[1] * ha;
  const double w = wa * std::exp(std::min(delta[2], kDeltaClip));
  const double h = ha * std::exp(std::min(delta[3], kDeltaClip));
  return BBox{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (dets[a].score != dets[b].score) return dets[a].score > dets[b].score;
    return a < b;
  });
  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    const size_t i = order[oi];
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      const size_t j = order[oj];
      if (suppressed[j]) continue;
      if (iou(dets[i].box, dets[j].box) > iou_threshold) suppressed[j] = true;
    }
  }
  return kept;
}

}  // namespace smrnet
