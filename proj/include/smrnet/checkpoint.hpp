#pragma once

#include <string>

#include "smrnet/config.hpp"

namespace smrnet {

// Binary checkpoint: "SMRN" magic, format version, the RunConfig text, a named
// parameter table (name, kind, shape, little-endian float32 data), and a
// 64-bit FNV-1a checksum over the payload. Loading reconstructs the model
// from the embedded config and restores every tensor bit-exactly.
void save_checkpoint(const std::string& path, const RunConfig& cfg, Model& model);

struct LoadedModel {
  RunConfig cfg;
  Model model;
};

// Throws CheckpointError on bad magic, version, checksum, or table mismatch.
LoadedModel load_checkpoint(const std::string& path);

}  // namespace smrnet
