#include "smrnet/report.hpp"

#include <cmath>
#include <cstdio>

#include "nlohmann/json.hpp"
#include "smrnet/common.hpp"

namespace smrnet {

std::string report_to_json(const MetricReport& report, const RunConfig& cfg,
                           uint64_t manifest_digest, const std::string& checkpoint) {
  nlohmann::json j;
  j["dataset"] = report.dataset;
  j["mean_iou"] = report.mean_iou;
  j["map"] = report.map;
  j["ap"]["A"] = report.ap_a ? nlohmann::json(*report.ap_a) : nlohmann::json(nullptr);
  j["ap"]["B"] = report.ap_b ? nlohmann::json(*report.ap_b) : nlohmann::json(nullptr);
  j["n"] = report.sample_count;
  j["map_protocol"] = "VOC all-points interpolation at IoU 0.5";
  j["manifest_digest"] = hex64(manifest_digest);
  j["checkpoint"] = checkpoint;
  j["config"] = cfg.to_text();
  return j.dump(2) + "\n";
}

std::string report_csv_header() { return "dataset,mean_iou,map,ap_A,ap_B,n"; }

std::string report_csv_row(const MetricReport& report) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%d",
                report.dataset.c_str(), report.mean_iou, report.map,
                report.ap_a ? *report.ap_a : std::nan(""),
                report.ap_b ? *report.ap_b : std::nan(""), report.sample_count);
  return buf;
}

}  // namespace smrnet
