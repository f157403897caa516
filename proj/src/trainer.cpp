#include "smrnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <tuple>

#include "smrnet/common.hpp"

namespace smrnet {

namespace {

std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

MetricReport score_records(const std::string& dataset_id,
                           const std::vector<EvalRecord>& records) {
  MetricReport r;
  r.dataset = dataset_id;
  r.sample_count = static_cast<int>(records.size());
  r.mean_iou = mean_best_iou(records);
  std::vector<int> undefined;
  r.map = mean_average_precision(records, {1, 2}, 0.5, &undefined);
  for (int c : undefined)
    std::fprintf(stderr, "warning: class %s has no ground truth in dataset %s; "
                         "AP undefined, excluded from mAP\n",
                 c == 1 ? "A" : "B", dataset_id.c_str());
  r.ap_a = average_precision(records, 1, 0.5);
  r.ap_b = average_precision(records, 2, 0.5);
  return r;
}

}  // namespace

EvalOutcome evaluate_dataset(Model* model, const LoadedDataset& ds,
                             const std::vector<int>& indices, Predictor predictor) {
  check_arg(!indices.empty(), "evaluate_dataset: no indices");
  std::vector<EvalRecord> records(indices.size());
  if (predictor == Predictor::model) {
    check_arg(model != nullptr, "evaluate_dataset: model required");
    model->set_training(false);
    parallel_for(static_cast<int64_t>(indices.size()), [&](int64_t k) {
      const int i = indices[static_cast<size_t>(k)];
      const Tensor& img = ds.images[static_cast<size_t>(i)];
      auto batch1 = reshape(img, {1, 1, img.dim(1), img.dim(2)});
      EvalRecord rec;
      rec.gt_boxes = {ds.entries[static_cast<size_t>(i)].gt_box};
      rec.gt_classes = {ds.entries[static_cast<size_t>(i)].gt_class};
      rec.detections = infer(*model, batch1);
      records[static_cast<size_t>(k)] = std::move(rec);
    });
  } else {
    for (size_t k = 0; k < indices.size(); ++k) {
      const int i = indices[k];
      EvalRecord rec;
      rec.gt_boxes = {ds.entries[static_cast<size_t>(i)].gt_box};
      rec.gt_classes = {ds.entries[static_cast<size_t>(i)].gt_class};
      if (predictor == Predictor::oracle)
        rec.detections = {Detection{ds.entries[static_cast<size_t>(i)].gt_box,
                                    ds.entries[static_cast<size_t>(i)].gt_class, 1.0}};
      records[k] = std::move(rec);
    }
  }
  EvalOutcome out;
  out.records = std::move(records);
  out.report = score_records(ds.id, out.records);
  return out;
}

TrainOutcome train_model(const RunConfig& cfg, const std::vector<LoadedDataset>& data,
                         Model& model, std::ostream* log) {
  check_arg(!data.empty(), "train_model: no datasets");
  for (const auto& ds : data)
    check_arg(!ds.train_indices().empty(), "train_model: empty train split in " + ds.dir);

  model.init(cfg.seed);
  SgdMomentum<float> opt(cfg.train.lr, cfg.train.momentum, cfg.train.clip_norm);
  Rng sampler(derive_seed(cfg.seed, 0x5a3b17));

  if (log) {
    *log << "epoch,loss";
    for (const auto& ds : data) *log << ",mean_iou_" << ds.id << ",map_" << ds.id;
    *log << "\n";
  }

  std::vector<std::pair<int, int>> items;  // (dataset, sample)
  for (size_t d = 0; d < data.size(); ++d)
    for (int i : data[d].train_indices()) items.emplace_back(static_cast<int>(d), i);

  const int64_t H = data[0].image_size, W = data[0].image_size;
  TrainOutcome out;

  for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    model.set_training(true);
    sampler.shuffle(items);

    double loss_acc = 0;
    int steps = 0;
    for (size_t at = 0; at < items.size(); at += static_cast<size_t>(cfg.train.batch_size)) {
      const size_t take = std::min(items.size() - at,
                                   static_cast<size_t>(cfg.train.batch_size));
      if (take < 2) break;  // batchnorm needs at least 2; drop the remainder
      auto images = Tensor::zeros({static_cast<int64_t>(take), 1, H, W});
      std::vector<GtSample> gts(take);
      for (size_t b = 0; b < take; ++b) {
        const auto [d, i] = items[at + b];
        const Tensor& img = data[static_cast<size_t>(d)].images[static_cast<size_t>(i)];
        std::copy(img.data().begin(), img.data().end(),
                  images.data().begin() + static_cast<int64_t>(b) * H * W);
        const auto& e = data[static_cast<size_t>(d)].entries[static_cast<size_t>(i)];
        gts[b].boxes = {e.gt_box};
        gts[b].classes = {e.gt_class};
      }
      loss_acc += training_step(model, opt, images, gts, cfg.train, sampler).total;
      ++steps;
    }
    const double mean_loss = steps > 0 ? loss_acc / steps : 0.0;
    if (!std::isfinite(mean_loss))
      throw NumericError("train", "non-finite epoch loss");

    if (log) *log << epoch << "," << fmt_metric(mean_loss);
    out.reports.clear();
    for (const auto& ds : data) {
      auto eval = evaluate_dataset(&model, ds, ds.eval_indices());
      if (log) *log << "," << fmt_metric(eval.report.mean_iou) << ","
                    << fmt_metric(eval.report.map);
      out.reports.push_back(eval.report);
    }
    if (log) *log << "\n";
    out.final_loss = mean_loss;
  }
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<LoadedDataset>& data,
                                      const std::vector<uint64_t>& seeds,
                                      std::ostream* progress) {
  check_arg(!seeds.empty(), "ablate: no seeds");

  struct Variant {
    const char* name;
    void (*apply)(ModelConfig&);
    // Published reference cells (%), keyed A/B; measured on the original
    // proprietary sensor data, so not comparable with synthetic runs.
    double ref_iou_a, ref_iou_b, ref_map_a, ref_map_b;
  };
  const Variant variants[] = {
      {"without SAFE-Net", [](ModelConfig& m) { m.attention_enabled = false; },
       85.22, 89.34, 97.2, 97.1},
      {"without MSFF-Net", [](ModelConfig& m) { m.msff_enabled = false; },
       86.32, 88.37, 98.5, 98.3},
      {"without RW-Net", [](ModelConfig& m) { m.rw_enabled = false; },
       90.11, 90.23, 98.9, 99.1},
      {"Ours", [](ModelConfig&) {}, 91.78, 92.12, 99.3, 99.4},
  };

  std::vector<AblationRow> rows;
  for (const auto& variant : variants) {
    // metric samples per dataset, across seeds
    std::vector<std::vector<double>> ious(data.size()), maps(data.size());
    for (uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.seed = seed;
      variant.apply(cfg.model);
      Model model(cfg.model);
      if (progress)
        *progress << "# training variant '" << variant.name << "' seed " << seed
                  << "\n";
      auto outcome = train_model(cfg, data, model, nullptr);
      for (size_t d = 0; d < outcome.reports.size(); ++d) {
        ious[d].push_back(outcome.reports[d].mean_iou);
        maps[d].push_back(outcome.reports[d].map);
      }
    }
    for (size_t d = 0; d < data.size(); ++d) {
      auto stats = [](const std::vector<double>& v) {
        double m = 0;
        for (double x : v) m += x;
        m /= static_cast<double>(v.size());
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        s = v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0;
        return std::pair<double, double>{m, s};
      };
      AblationRow row;
      row.variant = variant.name;
      row.dataset = data[d].id;
      std::tie(row.mean_iou_avg, row.mean_iou_std) = stats(ious[d]);
      std::tie(row.map_avg, row.map_std) = stats(maps[d]);
      if (data[d].id == "A") {
        row.ref_iou_pct = variant.ref_iou_a;
        row.ref_map_pct = variant.ref_map_a;
      } else if (data[d].id == "B") {
        row.ref_iou_pct = variant.ref_iou_b;
        row.ref_map_pct = variant.ref_map_b;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "# ablation results; reference columns are the original SMR-Net study's\n"
     << "# cells on its proprietary sensor data: NOT-COMPARABLE (different data)\n";
  os << "variant,dataset,mean_iou_pct,mean_iou_std,map_pct,map_std,"
        "ref_iou_pct_NOT_COMPARABLE,ref_map_pct_NOT_COMPARABLE\n";
  for (const auto& r : rows) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%s,%.4f,%.4f,%.4f,%.4f,", r.variant.c_str(),
                  r.dataset.c_str(), 100.0 * r.mean_iou_avg, 100.0 * r.mean_iou_std,
                  100.0 * r.map_avg, 100.0 * r.map_std);
    os << buf;
    if (r.ref_iou_pct)
      os << *r.ref_iou_pct << "," << *r.ref_map_pct << "\n";
    else
      os << "-,-\n";
  }
  return os.str();
}

}  // namespace smrnet
