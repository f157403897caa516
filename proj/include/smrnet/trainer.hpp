#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "smrnet/config.hpp"
#include "smrnet/dataset.hpp"
#include "smrnet/metrics.hpp"

namespace smrnet {

struct EvalOutcome {
  MetricReport report;
  std::vector<EvalRecord> records;
};

enum class Predictor { model, oracle, empty };

// Runs inference (or an oracle/empty stand-in) over the given indices and
// scores the results. Model inference parallelizes across images under
// SMRNET_THREADS.
EvalOutcome evaluate_dataset(Model* model, const LoadedDataset& ds,
                             const std::vector<int>& indices,
                             Predictor predictor = Predictor::model);

struct TrainOutcome {
  double final_loss = 0;
  std::vector<MetricReport> reports;  // per dataset, eval split
};

// Full training loop: per-epoch passes of training_step over the combined
// train splits, with per-epoch eval metrics. The CSV log (fixed header
// `epoch,loss[,mean_iou_<id>,map_<id>...]`) goes to `log` when non-null.
TrainOutcome train_model(const RunConfig& cfg, const std::vector<LoadedDataset>& data,
                         Model& model, std::ostream* log);

struct AblationRow {
  std::string variant;
  std::string dataset;
  double mean_iou_avg = 0, mean_iou_std = 0;
  double map_avg = 0, map_std = 0;
  std::optional<double> ref_iou_pct;  // published reference cell, when known
  std::optional<double> ref_map_pct;
};

// Trains and evaluates the four variants (full model and the three module
// ablations) across the given seeds. Rows follow the fixed variant x dataset
// order.
std::vector<AblationRow> run_ablation(const RunConfig& base,
                                      const std::vector<LoadedDataset>& data,
                                      const std::vector<uint64_t>& seeds,
                                      std::ostream* progress);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

}  // namespace smrnet
