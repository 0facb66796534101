#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hinerv {

struct PngImage {
  int width = 0, height = 0, channels = 0;
  std::vector<uint8_t> pixels;  // row-major, interleaved
};

// 8-bit non-interlaced PNGs (gray, gray+alpha, RGB, RGBA).
PngImage read_png(const std::string& path);
void write_png_rgb8(const std::string& path, int width, int height, const uint8_t* rgb);

}  // namespace hinerv
