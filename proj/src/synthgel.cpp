#include "smrnet/synthgel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "nlohmann/json.hpp"
#include "smrnet/common.hpp"
#include "smrnet/png_io.hpp"

namespace smrnet {

namespace {

// Type A local geometry (nominal width 1): rectangular body with a horizontal
// cantilever slot and a hook tooth protruding from the beam tip.
constexpr double kBodyHalfW = 0.5, kBodyHalfH = 0.31;
constexpr double kSlotX1 = -0.38, kSlotX2 = 0.30, kSlotY1 = 0.08, kSlotY2 = 0.20;
constexpr double kToothX1 = 0.24, kToothX2 = 0.36, kToothY1 = 0.31, kToothY2 = 0.40;

// Type B local geometry: annular ring with a central boss.
constexpr double kRingOuter = 0.5, kRingInner = 0.30, kBossRadius = 0.14;

bool in_rect(double x, double y, double x1, double y1, double x2, double y2) {
  return x >= x1 && x <= x2 && y >= y1 && y <= y2;
}

bool local_contains(char type, double x, double y) {
  if (type == 'A') {
    const bool body = in_rect(x, y, -kBodyHalfW, -kBodyHalfH, kBodyHalfW, kBodyHalfH);
    const bool tooth = in_rect(x, y, kToothX1, kToothY1, kToothX2, kToothY2);
    const bool slot = in_rect(x, y, kSlotX1, kSlotY1, kSlotX2, kSlotY2);
    return (body || tooth) && !slot;
  }
  const double d = std::sqrt(x * x + y * y);
  return (d <= kRingOuter && d >= kRingInner) || d <= kBossRadius;
}

// Chebyshev-radius-1 morphology on a boolean mask.
std::vector<uint8_t> morph(const std::vector<uint8_t>& mask, int w, int h, bool dilate) {
  std::vector<uint8_t> out(mask.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      uint8_t v = dilate ? 0 : 1;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const int ny = y + dy, nx = x + dx;
          const uint8_t nv = (ny >= 0 && ny < h && nx >= 0 && nx < w)
                                 ? mask[static_cast<size_t>(ny) * w + nx]
                                 : 0;
          if (dilate)
            v = std::max(v, nv);
          else
            v = std::min(v, nv);
        }
      out[static_cast<size_t>(y) * w + x] = v;
    }
  return out;
}

struct Raster {
  std::vector<uint8_t> mask;
  int min_x, min_y, max_x, max_y;  // inclusive pixel bounds; min_x > max_x if empty
};

Raster rasterize(const SnapShape& shape, int size) {
  Raster r;
  r.mask.assign(static_cast<size_t>(size) * size, 0);
  r.min_x = r.min_y = size;
  r.max_x = r.max_y = -1;
  const double c = std::cos(shape.theta), s = std::sin(shape.theta);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double px = (x + 0.5 - shape.cx) / shape.scale;
      const double py = (y + 0.5 - shape.cy) / shape.scale;
      // Inverse rotation into local coordinates.
      const double lx = c * px + s * py;
      const double ly = -s * px + c * py;
      if (local_contains(shape.type, lx, ly)) {
        r.mask[static_cast<size_t>(y) * size + x] = 1;
        r.min_x = std::min(r.min_x, x);
        r.max_x = std::max(r.max_x, x);
        r.min_y = std::min(r.min_y, y);
        r.max_y = std::max(r.max_y, y);
      }
    }
  return r;
}

}  // namespace

bool snap_silhouette_contains(const SnapShape& shape, double px, double py) {
  const double c = std::cos(shape.theta), s = std::sin(shape.theta);
  const double rx = (px - shape.cx) / shape.scale;
  const double ry = (py - shape.cy) / shape.scale;
  return local_contains(shape.type, c * rx + s * ry, -s * rx + c * ry);
}

Sample render_sample(char type, Rng& rng, const GelRenderParams& params) {
  check_arg(type == 'A' || type == 'B', "render_sample: type must be A or B");
  const int size = params.image_size;
  const double W = static_cast<double>(size);

  SnapShape shape;
  Raster raster;
  bool placed = false;
  for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
    shape.type = type;
    shape.scale = rng.uniform(0.25, 0.48) * W;
    shape.theta = rng.uniform(0.0, 6.283185307179586);
    shape.cx = rng.uniform(0.30, 0.70) * W;
    shape.cy = rng.uniform(0.30, 0.70) * W;
    raster = rasterize(shape, size);
    if (raster.max_x < 0) continue;
    const double span = std::max(raster.max_x - raster.min_x + 1,
                                 raster.max_y - raster.min_y + 1);
    const bool margin_ok = raster.min_x >= params.min_margin &&
                           raster.min_y >= params.min_margin &&
                           raster.max_x < W - params.min_margin &&
                           raster.max_y < W - params.min_margin;
    placed = margin_ok && span >= params.min_span_frac * W &&
             span <= params.max_span_frac * W;
  }
  if (!placed) throw IoError("render_sample: failed to place silhouette in 100 tries");

  // Interior / edge-band decomposition: band = dilate(mask) \ erode(mask),
  // repeated for wider bands.
  std::vector<uint8_t> eroded = raster.mask;
  std::vector<uint8_t> dilated = raster.mask;
  const int steps = std::max(1, params.edge_band_px / 2);
  for (int i = 0; i < steps; ++i) {
    eroded = morph(eroded, size, size, false);
    dilated = morph(dilated, size, size, true);
  }

  Sample out;
  out.shape = shape;
  out.gt_class = type == 'A' ? 1 : 2;
  out.gt_box = BBox{static_cast<double>(raster.min_x), static_cast<double>(raster.min_y),
                    static_cast<double>(raster.max_x + 1),
                    static_cast<double>(raster.max_y + 1)};
  out.image = Tensor::zeros({1, size, size});
  float* px = out.image.ptr();
  for (int i = 0; i < size * size; ++i) {
    double v = params.mu_background;
    if (dilated[static_cast<size_t>(i)] && !eroded[static_cast<size_t>(i)])
      v = params.mu_edge;
    else if (eroded[static_cast<size_t>(i)])
      v = params.mu_contact;
    if (params.noise_sigma > 0) v += rng.normal(0.0, params.noise_sigma);
    v = std::clamp(v, 0.0, 1.0);
    // Quantize to the 8-bit grid so the in-memory sample matches its PNG.
    px[i] = static_cast<float>(std::lround(v * 255.0) / 255.0);
  }
  return out;
}

DatasetManifest generate_dataset(char type, int n, uint64_t seed,
                                 const std::string& out_dir,
                                 const GelRenderParams& params) {
  check_arg(n >= 1, "generate_dataset: count must be >= 1");
  check_arg(type == 'A' || type == 'B', "generate_dataset: type must be A or B");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("generate_dataset: cannot create " + out_dir);

  const std::string manifest_path = out_dir + "/manifest.jsonl";
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw IoError("generate_dataset: cannot write " + manifest_path);

  nlohmann::json header = {
      {"generator", "synthgel"},
      {"version", 1},
      {"type", std::string(1, type)},
      {"count", n},
      {"seed", seed},
      {"image_size", params.image_size},
      {"mu_contact", params.mu_contact},
      {"mu_edge", params.mu_edge},
      {"mu_background", params.mu_background},
      {"edge_band_px", params.edge_band_px},
      {"noise_sigma", params.noise_sigma},
      // Sensor constants carried for provenance; the renderer reproduces only
      // the brightness phenomenology, not membrane mechanics.
      {"substrate_mm", {40, 40, 4}},
      {"shear_modulus_mpa", 0.145},
  };
  manifest << header.dump() << "\n";

  // Per-index seeds keep generation order-independent; parallel and serial
  // runs produce identical bytes.
  std::vector<Sample> samples(static_cast<size_t>(n));
  std::vector<std::string> names(static_cast<size_t>(n));
  parallel_for(n, [&](int64_t i) {
    const uint64_t sample_seed = derive_seed(seed, static_cast<uint64_t>(i));
    Rng rng(sample_seed);
    Sample s = render_sample(type, rng, params);
    s.seed = sample_seed;
    char name[32];
    std::snprintf(name, sizeof(name), "%c_%05lld.png", type, static_cast<long long>(i));
    names[static_cast<size_t>(i)] = name;

    GrayImage img;
    img.width = img.height = params.image_size;
    img.pixels.resize(s.image.data().size());
    const float* p = s.image.ptr();
    for (size_t k = 0; k < img.pixels.size(); ++k)
      img.pixels[k] = static_cast<uint8_t>(std::lround(p[k] * 255.0f));
    write_gray_png(out_dir + "/" + name, img);
    samples[static_cast<size_t>(i)] = std::move(s);
  });

  for (int i = 0; i < n; ++i) {
    const Sample& s = samples[static_cast<size_t>(i)];
    nlohmann::json row = {
        {"file", names[static_cast<size_t>(i)]},
        {"type", std::string(1, type)},
        {"x1", s.gt_box.x1},
        {"y1", s.gt_box.y1},
        {"x2", s.gt_box.x2},
        {"y2", s.gt_box.y2},
        {"seed", s.seed},
    };
    manifest << row.dump() << "\n";
  }
  manifest.close();
  if (!manifest) throw IoError("generate_dataset: short write to " + manifest_path);

  std::ifstream readback(manifest_path, std::ios::binary);
  std::vector<char> bytes((std::istreambuf_iterator<char>(readback)),
                          std::istreambuf_iterator<char>());

  DatasetManifest m;
  m.path = manifest_path;
  m.dir = out_dir;
  m.type = type;
  m.count = n;
  m.seed = seed;
  m.digest = fnv1a64(bytes.data(), bytes.size());
  return m;
}

}  // namespace smrnet
