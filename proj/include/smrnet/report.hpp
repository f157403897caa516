#pragma once

#include <string>

#include "smrnet/config.hpp"
#include "smrnet/metrics.hpp"

namespace smrnet {

// JSON report carrying the metrics, the full RunConfig text, the dataset
// manifest digest, and the metric conventions used.
std::string report_to_json(const MetricReport& report, const RunConfig& cfg,
                           uint64_t manifest_digest, const std::string& checkpoint);

// CSV row `dataset,mean_iou,map,ap_A,ap_B,n`; undefined APs print as nan.
std::string report_csv_header();
std::string report_csv_row(const MetricReport& report);

}  // namespace smrnet
