#pragma once

#include <string>
#include <vector>

#include "smrnet/model.hpp"

namespace smrnet {

// One run's full configuration: model hyperparameters, optimizer settings,
// seed, and dataset paths. Serializes to flat `key = value` text (with `#`
// comments) and is persisted verbatim into reports and checkpoint headers.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  uint64_t seed = 1;
  std::vector<std::string> data_dirs;

  std::string to_text() const;
  static RunConfig from_text(const std::string& text);
  static RunConfig from_file(const std::string& path);
};

}  // namespace smrnet
