#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hinerv/common.hpp"

namespace hinerv {

// T frames of H x W x 3 pixels, frame-major, values in [0, 1].
struct VideoClip {
  int frames = 0, height = 0, width = 0;
  std::vector<float> data;

  static VideoClip create(int frames, int height, int width);
  int64_t frame_values() const { return (int64_t)height * width * 3; }
  const float* frame(int t) const { return data.data() + (int64_t)t * frame_values(); }
  float* frame(int t) { return data.data() + (int64_t)t * frame_values(); }
};

enum class VideoFormat { kPngDir, kRaw };

VideoFormat parse_video_format(const std::string& name);  // "png" | "raw"

// PNG directory: frames named 000000.png, 000001.png, ... Raw: interleaved
// RGB8 with a "<path>.dims" sidecar holding "width height frames".
VideoClip read_video(const std::string& path, VideoFormat format);
void write_video(const VideoClip& clip, const std::string& path, VideoFormat format);

// 8-bit conversions: v / 255 on read, round(v * 255) clamped on write.
uint8_t pixel_to_byte(float v);
float byte_to_pixel(uint8_t b);
std::vector<uint8_t> frame_to_bytes(const VideoClip& clip, int t);

}  // namespace hinerv
