#pragma once

#include <optional>
#include <string>
#include <vector>

#include "smrnet/box.hpp"

namespace smrnet {

// Ground truth and predictions for one evaluated image.
struct EvalRecord {
  std::vector<BBox> gt_boxes;
  std::vector<int> gt_classes;
  std::vector<Detection> detections;
};

struct MetricReport {
  std::string dataset;  // snap type id, "A" | "B"
  double mean_iou = 0;
  double map = 0;
  std::optional<double> ap_a;
  std::optional<double> ap_b;
  int sample_count = 0;
};

// Mean over images of IoU(highest-scoring detection, the single GT box);
// images with no detections contribute 0. Requires exactly one GT per image.
double mean_best_iou(const std::vector<EvalRecord>& records);

// Pascal-VOC-style AP at the given IoU threshold, all-points interpolation.
// Returns nullopt when the class has no ground-truth instances.
std::optional<double> average_precision(const std::vector<EvalRecord>& records,
                                        int class_id, double iou_thresh = 0.5);

// Mean over classes of the defined per-class APs. Classes without ground
// truth are excluded (reported through `undefined` when non-null). Throws
// when every class is undefined.
double mean_average_precision(const std::vector<EvalRecord>& records,
                              const std::vector<int>& classes, double iou_thresh = 0.5,
                              std::vector<int>* undefined = nullptr);

}  // namespace smrnet
