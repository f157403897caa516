#include "smrnet/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "smrnet/common.hpp"

namespace smrnet {

double mean_best_iou(const std::vector<EvalRecord>& records) {
  check_arg(!records.empty(), "mean_best_iou: empty record set");
  double acc = 0;
  for (const auto& r : records) {
    check_arg(r.gt_boxes.size() == 1, "mean_best_iou: expects exactly one GT per image");
    if (r.detections.empty()) continue;
    const Detection* best = &r.detections[0];
    for (const auto& d : r.detections)
      if (d.score > best->score) best = &d;
    acc += iou(best->box, r.gt_boxes[0]);
  }
  return acc / static_cast<double>(records.size());
}

std::optional<double> average_precision(const std::vector<EvalRecord>& records,
                                        int class_id, double iou_thresh) {
  check_arg(!records.empty(), "average_precision: empty record set");

  int64_t total_gt = 0;
  for (const auto& r : records)
    for (int c : r.gt_classes)
      if (c == class_id) ++total_gt;
  if (total_gt == 0) return std::nullopt;

  // All predictions of the class, ranked by (score desc, image, index).
  struct Pred {
    double score;
    size_t image;
    size_t index;
  };
  std::vector<Pred> preds;
  for (size_t i = 0; i < records.size(); ++i)
    for (size_t j = 0; j < records[i].detections.size(); ++j)
      if (records[i].detections[j].class_id == class_id)
        preds.push_back({records[i].detections[j].score, i, j});
  std::stable_sort(preds.begin(), preds.end(), [](const Pred& a, const Pred& b) {
    return a.score > b.score;
  });

  // Greedy matching: each prediction takes the best unmatched GT above the
  // IoU threshold; matched GTs are consumed.
  std::vector<std::vector<bool>> gt_used(records.size());
  for (size_t i = 0; i < records.size(); ++i)
    gt_used[i].assign(records[i].gt_boxes.size(), false);

  std::vector<double> precision, recall;
  int64_t tp = 0, fp = 0;
  for (const auto& p : preds) {
    const auto& rec = records[p.image];
    double best_iou = 0;
    int best_gt = -1;
    for (size_t g = 0; g < rec.gt_boxes.size(); ++g) {
      if (rec.gt_classes[g] != class_id || gt_used[p.image][g]) continue;
      const double v = iou(rec.detections[p.index].box, rec.gt_boxes[g]);
      if (v > best_iou) {
        best_iou = v;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best_iou >= iou_thresh) {
      gt_used[p.image][static_cast<size_t>(best_gt)] = true;
      ++tp;
    } else {
      ++fp;
    }
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
  }

  // Area under the precision envelope vs recall (all-points interpolation).
  std::vector<double> envelope(precision.size());
  double running = 0;
  for (size_t i = precision.size(); i-- > 0;) {
    running = std::max(running, precision[i]);
    envelope[i] = running;
  }
  double ap = 0;
  double prev_recall = 0;
  for (size_t i = 0; i < envelope.size(); ++i) {
    ap += (recall[i] - prev_recall) * envelope[i];
    prev_recall = recall[i];
  }
  return ap;
}

double mean_average_precision(const std::vector<EvalRecord>& records,
                              const std::vector<int>& classes, double iou_thresh,
                              std::vector<int>* undefined) {
  check_arg(!classes.empty(), "map: no classes");
  double acc = 0;
  int defined = 0;
  for (int c : classes) {
    auto ap = average_precision(records, c, iou_thresh);
    if (ap) {
      acc += *ap;
      ++defined;
    } else if (undefined) {
      undefined->push_back(c);
    }
  }
  check_arg(defined > 0, "map: AP undefined for every class (no ground truth)");
  return acc / defined;
}

}  // namespace smrnet
