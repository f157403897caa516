#include "smrnet/png_io.hpp"

#include <zlib.h>

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "smrnet/common.hpp"

namespace smrnet {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32(const uint8_t* p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void append_chunk(std::vector<uint8_t>& out, const char type[4],
                  const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  const size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start)));
  put_u32(out, crc);
}

constexpr uint8_t kSignature[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};

int paeth(int a, int b, int c) {
  const int p = a + b - c;
  const int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_gray_png(const std::string& path, const GrayImage& img) {
  check_arg(img.width > 0 && img.height > 0 &&
                img.pixels.size() == static_cast<size_t>(img.width) * img.height,
            "write_gray_png: inconsistent image");

  // Scanlines with filter byte 0 (None).
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(img.height) * (img.width + 1));
  for (int y = 0; y < img.height; ++y) {
    raw.push_back(0);
    const uint8_t* row = img.pixels.data() + static_cast<size_t>(y) * img.width;
    raw.insert(raw.end(), row, row + img.width);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    throw IoError("write_gray_png: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(img.width));
  put_u32(ihdr, static_cast<uint32_t>(img.height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // color type: grayscale
  ihdr.push_back(0);  // compression
  ihdr.push_back(0);  // filter
  ihdr.push_back(0);  // interlace
  append_chunk(out, "IHDR", ihdr);
  append_chunk(out, "IDAT", compressed);
  append_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("write_gray_png: cannot open " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("write_gray_png: short write to " + path);
}

GrayImage read_gray_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("read_gray_png: cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw IoError("read_gray_png: not a PNG: " + path);

  GrayImage img;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_ihdr = false;
  while (pos + 8 <= bytes.size()) {
    const uint32_t len = get_u32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw IoError("read_gray_png: truncated chunk");
    const char* type = reinterpret_cast<const char*>(bytes.data() + pos + 4);
    const uint8_t* payload = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      img.width = static_cast<int>(get_u32(payload));
      img.height = static_cast<int>(get_u32(payload + 4));
      const uint8_t depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || color != 0 || interlace != 0)
        throw IoError("read_gray_png: only 8-bit non-interlaced grayscale supported");
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || img.width <= 0 || img.height <= 0)
    throw IoError("read_gray_png: missing IHDR: " + path);

  const size_t stride = static_cast<size_t>(img.width) + 1;
  std::vector<uint8_t> raw(stride * static_cast<size_t>(img.height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size())) !=
          Z_OK ||
      raw_len != raw.size())
    throw IoError("read_gray_png: inflate failed: " + path);

  img.pixels.assign(static_cast<size_t>(img.width) * img.height, 0);
  for (int y = 0; y < img.height; ++y) {
    const uint8_t filter = raw[static_cast<size_t>(y) * stride];
    const uint8_t* src = raw.data() + static_cast<size_t>(y) * stride + 1;
    uint8_t* dst = img.pixels.data() + static_cast<size_t>(y) * img.width;
    const uint8_t* up = y > 0 ? dst - img.width : nullptr;
    for (int x = 0; x < img.width; ++x) {
      const int a = x > 0 ? dst[x - 1] : 0;
      const int b = up ? up[x] : 0;
      const int c = (x > 0 && up) ? up[x - 1] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("read_gray_png: unknown filter type");
      }
      dst[x] = static_cast<uint8_t>(v & 0xff);
    }
  }
  return img;
}

}  // namespace smrnet
