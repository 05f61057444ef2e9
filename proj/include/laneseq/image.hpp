#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace laneseq {

// 8-bit raster image, row-major, interleaved channels (1 = gray, 3 = RGB).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;

  std::vector<uint8_t> pixels;

  Image() = default;
  Image(int w, int h, int c, uint8_t fill = 0)
      : width(w), height(h), channels(c),
        pixels(static_cast<size_t>(w) * h * c, fill) {}

  uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  bool in_bounds(int x, int y) const {
    return x >= 0 && x < width && y >= 0 && y < height;
  }
  size_t size() const { return pixels.size(); }
};

// Binary PGM (P5) for grayscale, PPM (P6) for RGB. Maxval 255.
void write_pnm(const Image& img, const std::string& path);
Image read_pnm(const std::string& path);

}  // namespace laneseq
