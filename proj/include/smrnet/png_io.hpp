#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace smrnet {

// Minimal 8-bit grayscale PNG support (non-interlaced), enough for the
// dataset pipeline. Compression and CRC come from zlib.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // row-major, height*width
};

void write_gray_png(const std::string& path, const GrayImage& img);
GrayImage read_gray_png(const std::string& path);

}  // namespace smrnet
