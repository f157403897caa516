#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace smrnet {

// Axis-aligned box in pixel coordinates, corners (x1,y1) top-left exclusive of
// (x2,y2). Valid boxes have strictly positive width and height.
struct BBox {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

struct Detection {
  BBox box;
  int class_id = 0;  // 0 = background, 1 = type A, 2 = type B
  double score = 0;
};

// Reference box tiled over the proposal grid; indices record its provenance.
struct Anchor {
  BBox box;
  int cell_i = 0, cell_j = 0;
  int scale_idx = 0, ratio_idx = 0;
};

// Intersection area over union area; 0 for disjoint boxes. Throws on
// degenerate (zero-area) operands.
double iou(const BBox& p, const BBox& q);

BBox clip_box(const BBox& b, double img_w, double img_h);

// Anchors centered at ((j+0.5)*stride, (i+0.5)*stride), one per (scale,
// ratio), ordered by (cell row-major, scale, ratio). width = s*sqrt(r),
// height = s/sqrt(r).
std::vector<Anchor> generate_anchors(int grid_h, int grid_w, double stride,
                                     const std::vector<double>& scales,
                                     const std::vector<double>& ratios);

// Standard box regression parameterization: (dx, dy, dw, dh) relative to the
// anchor. decode clamps dw/dh at log(1000/16) against exploding exponents.
std::array<double, 4> encode_box(const BBox& gt, const BBox& anchor);
BBox decode_box(const std::array<double, 4>& delta, const BBox& anchor);

// Greedy non-maximum suppression: keep the highest-scoring box, discard boxes
// overlapping it beyond the threshold, repeat. Ties break by input index.
std::vector<Detection> nms(const std::vector<Detection>& dets, double iou_threshold);

}  // namespace smrnet
