#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smrnet/box.hpp"
#include "smrnet/rng.hpp"
#include "smrnet/tensor.hpp"

namespace smrnet {

// Pose of one rendered snap silhouette.
struct SnapShape {
  char type = 'A';    // A: rectangular body with cantilever hook; B: ring + boss
  double cx = 0, cy = 0;  // center, pixels
  double theta = 0;       // rotation, radians
  double scale = 0;       // nominal silhouette width, pixels
};

// Brightness phenomenology of the gel sensor image: bright contact interior,
// dark band along silhouette edges, mid-gray background.
struct GelRenderParams {
  int image_size = 96;
  double mu_contact = 0.80;
  double mu_edge = 0.20;
  double mu_background = 0.50;
  int edge_band_px = 2;  // total band width, centered on the boundary
  double noise_sigma = 0.02;
  double min_margin = 4;      // silhouette distance from image border
  double min_span_frac = 0.20;  // silhouette extent as fraction of width
  double max_span_frac = 0.60;
};

struct Sample {
  Tensor image;  // [1,H,W], values in [0,1] quantized to the 8-bit grid
  BBox gt_box;   // tight silhouette bounds, pixel units
  int gt_class = 1;  // 1 = type A, 2 = type B
  uint64_t seed = 0;
  SnapShape shape;
};

// Silhouette membership test in image coordinates (after pose transform).
bool snap_silhouette_contains(const SnapShape& shape, double px, double py);

// Renders one sample: rasterize the silhouette, paint interior/edge-band/
// background levels, add Gaussian noise, clamp, quantize to 8 bits.
// Pose is rejection-sampled (at most 100 tries) until the margin and span
// constraints hold.
Sample render_sample(char type, Rng& rng, const GelRenderParams& params);

struct DatasetManifest {
  std::string path;        // manifest file location
  std::string dir;
  char type = 'A';
  int count = 0;
  uint64_t seed = 0;
  uint64_t digest = 0;     // FNV-1a over the manifest bytes
};

// Writes n samples (PNG + JSONL manifest) with per-sample seeds derived from
// (seed, index). The first 80% of indices form the train split.
DatasetManifest generate_dataset(char type, int n, uint64_t seed,
                                 const std::string& out_dir,
                                 const GelRenderParams& params = {});

}  // namespace smrnet
