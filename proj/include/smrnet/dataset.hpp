#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smrnet/box.hpp"
#include "smrnet/tensor.hpp"

namespace smrnet {

struct DatasetEntry {
  std::string file;
  int gt_class = 1;
  BBox gt_box;
  uint64_t seed = 0;
};

// A dataset directory: PNG images plus a JSONL manifest. Images load eagerly
// into [1,H,W] tensors in [0,1]. The first 80% of indices are the train
// split, the rest the eval split.
struct LoadedDataset {
  std::string id;  // snap type, "A" | "B"
  std::string dir;
  int image_size = 0;
  uint64_t manifest_digest = 0;
  std::vector<DatasetEntry> entries;
  std::vector<Tensor> images;

  std::vector<int> train_indices() const;
  std::vector<int> eval_indices() const;
};

LoadedDataset load_dataset(const std::string& dir);

}  // namespace smrnet
