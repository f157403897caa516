#include "smrnet/dataset.hpp"

#include <fstream>
#include <sstream>

#include "nlohmann/json.hpp"
#include "smrnet/common.hpp"
#include "smrnet/png_io.hpp"

namespace smrnet {

std::vector<int> LoadedDataset::train_indices() const {
  const int n = static_cast<int>(entries.size());
  const int cut = n * 8 / 10;
  std::vector<int> out;
  for (int i = 0; i < cut; ++i) out.push_back(i);
  return out;
}

std::vector<int> LoadedDataset::eval_indices() const {
  const int n = static_cast<int>(entries.size());
  const int cut = n * 8 / 10;
  std::vector<int> out;
  for (int i = cut; i < n; ++i) out.push_back(i);
  return out;
}

LoadedDataset load_dataset(const std::string& dir) {
  const std::string manifest_path = dir + "/manifest.jsonl";
  std::ifstream f(manifest_path, std::ios::binary);
  if (!f) throw ConfigError("dataset: missing manifest " + manifest_path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  LoadedDataset ds;
  ds.dir = dir;
  ds.manifest_digest = fnv1a64(bytes.data(), bytes.size());

  std::stringstream ss(bytes);
  std::string line;
  bool header_seen = false;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("dataset: bad manifest line " + std::to_string(lineno) + ": " +
                        e.what());
    }
    if (!header_seen) {
      if (!j.contains("generator") || !j.contains("image_size"))
        throw ConfigError("dataset: first manifest line must be the header");
      ds.id = j.value("type", "A");
      ds.image_size = j["image_size"].get<int>();
      header_seen = true;
      continue;
    }
    DatasetEntry e;
    e.file = j.at("file").get<std::string>();
    const std::string type = j.at("type").get<std::string>();
    e.gt_class = type == "A" ? 1 : 2;
    e.gt_box = BBox{j.at("x1").get<double>(), j.at("y1").get<double>(),
                    j.at("x2").get<double>(), j.at("y2").get<double>()};
    e.seed = j.at("seed").get<uint64_t>();
    ds.entries.push_back(std::move(e));
  }
  if (!header_seen) throw ConfigError("dataset: empty manifest " + manifest_path);
  if (ds.entries.empty()) throw ConfigError("dataset: no samples in " + manifest_path);

  ds.images.resize(ds.entries.size());
  parallel_for(static_cast<int64_t>(ds.entries.size()), [&](int64_t i) {
    const auto img = read_gray_png(dir + "/" + ds.entries[static_cast<size_t>(i)].file);
    if (img.width != ds.image_size || img.height != ds.image_size)
      throw ConfigError("dataset: image size mismatch in " +
                        ds.entries[static_cast<size_t>(i)].file);
    auto t = Tensor::zeros({1, img.height, img.width});
    float* p = t.ptr();
    for (size_t k = 0; k < img.pixels.size(); ++k)
      p[k] = static_cast<float>(img.pixels[k]) / 255.0f;
    ds.images[static_cast<size_t>(i)] = std::move(t);
  });
  return ds;
}

}  // namespace smrnet
