#include "hinerv/video.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "hinerv/png.hpp"

namespace fs = std::filesystem;

namespace hinerv {

VideoClip VideoClip::create(int frames, int height, int width) {
  VideoClip c;
  c.frames = frames;
  c.height = height;
  c.width = width;
  c.data.assign((size_t)frames * height * width * 3, 0.0f);
  return c;
}

VideoFormat parse_video_format(const std::string& name) {
  if (name == "png") return VideoFormat::kPngDir;
  if (name == "raw") return VideoFormat::kRaw;
  throw UsageError("unknown video format '" + name + "' (expected png or raw)");
}

uint8_t pixel_to_byte(float v) {
  long r = std::lround((double)v * 255.0);
  if (r < 0) r = 0;
  if (r > 255) r = 255;
  return (uint8_t)r;
}

float byte_to_pixel(uint8_t b) { return (float)b / 255.0f; }

std::vector<uint8_t> frame_to_bytes(const VideoClip& clip, int t) {
  const float* f = clip.frame(t);
  std::vector<uint8_t> out((size_t)clip.frame_values());
  for (size_t i = 0; i < out.size(); ++i) out[i] = pixel_to_byte(f[i]);
  return out;
}

namespace {

std::string frame_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", t);
  return buf;
}

VideoClip read_png_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw IoError(path + " is not a directory");
  // Highest contiguous-looking index present, to report gaps by name.
  int max_index = -1;
  for (const auto& entry : fs::directory_iterator(path)) {
    const std::string name = entry.path().filename().string();
    if (name.size() == 10 && name.ends_with(".png")) {
      bool digits = true;
      for (int i = 0; i < 6; ++i) digits = digits && name[(size_t)i] >= '0' && name[(size_t)i] <= '9';
      if (digits) max_index = std::max(max_index, std::stoi(name.substr(0, 6)));
    }
  }
  if (max_index < 0) throw IoError(path + ": no frames (expected 000000.png, ...)");

  VideoClip clip;
  for (int t = 0; t <= max_index; ++t) {
    fs::path p = fs::path(path) / frame_name(t);
    if (!fs::exists(p)) throw IoError(path + ": missing frame " + frame_name(t));
    PngImage img = read_png(p.string());
    if (t == 0) {
      clip = VideoClip::create(max_index + 1, img.height, img.width);
    } else if (img.width != clip.width || img.height != clip.height) {
      throw IoError(path + ": frame " + frame_name(t) + " is " + std::to_string(img.width) + "x" +
                    std::to_string(img.height) + ", expected " + std::to_string(clip.width) + "x" +
                    std::to_string(clip.height));
    }
    float* dst = clip.frame(t);
    size_t n = (size_t)img.width * img.height;
    for (size_t i = 0; i < n; ++i) {
      uint8_t r, g, b;
      switch (img.channels) {
        case 1: r = g = b = img.pixels[i]; break;
        case 2: r = g = b = img.pixels[2 * i]; break;
        case 3: r = img.pixels[3 * i]; g = img.pixels[3 * i + 1]; b = img.pixels[3 * i + 2]; break;
        default: r = img.pixels[4 * i]; g = img.pixels[4 * i + 1]; b = img.pixels[4 * i + 2]; break;
      }
      dst[3 * i] = byte_to_pixel(r);
      dst[3 * i + 1] = byte_to_pixel(g);
      dst[3 * i + 2] = byte_to_pixel(b);
    }
  }
  return clip;
}

void write_png_dir(const VideoClip& clip, const std::string& path) {
  fs::create_directories(path);
  for (int t = 0; t < clip.frames; ++t) {
    auto bytes = frame_to_bytes(clip, t);
    write_png_rgb8((fs::path(path) / frame_name(t)).string(), clip.width, clip.height,
                   bytes.data());
  }
}

VideoClip read_raw(const std::string& path) {
  std::ifstream dims(path + ".dims");
  if (!dims) throw IoError("missing sidecar " + path + ".dims");
  int w = 0, h = 0, t = 0;
  dims >> w >> h >> t;
  if (!dims || w < 1 || h < 1 || t < 1)
    throw IoError(path + ".dims: expected 'width height frames'");
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  int64_t size = (int64_t)f.tellg();
  int64_t expect = (int64_t)w * h * t * 3;
  if (size != expect)
    throw IoError(path + ": size " + std::to_string(size) + " != expected " +
                  std::to_string(expect) + " for " + std::to_string(w) + "x" + std::to_string(h) +
                  "x" + std::to_string(t));
  f.seekg(0);
  std::vector<uint8_t> bytes((size_t)size);
  f.read((char*)bytes.data(), size);
  if (!f) throw IoError("read failed for " + path);
  VideoClip clip = VideoClip::create(t, h, w);
  for (size_t i = 0; i < bytes.size(); ++i) clip.data[i] = byte_to_pixel(bytes[i]);
  return clip;
}

void write_raw(const VideoClip& clip, const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  for (int t = 0; t < clip.frames; ++t) {
    auto bytes = frame_to_bytes(clip, t);
    f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  }
  if (!f) throw IoError("write failed for " + path);
  std::ofstream dims(path + ".dims");
  if (!dims) throw IoError("cannot write " + path + ".dims");
  dims << clip.width << ' ' << clip.height << ' ' << clip.frames << '\n';
}

}  // namespace

VideoClip read_video(const std::string& path, VideoFormat format) {
  return format == VideoFormat::kPngDir ? read_png_dir(path) : read_raw(path);
}

void write_video(const VideoClip& clip, const std::string& path, VideoFormat format) {
  if (clip.frames < 1) throw UsageError("write_video: empty clip");
  if (format == VideoFormat::kPngDir)
    write_png_dir(clip, path);
  else
    write_raw(clip, path);
}

}  // namespace hinerv
