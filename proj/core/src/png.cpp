#include "hinerv/png.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "hinerv/serial.hpp"

namespace hinerv {

namespace {

const uint8_t kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

uint32_t be32(const uint8_t* p) {
  return ((uint32_t)p[0] << 24) | ((uint32_t)p[1] << 16) | ((uint32_t)p[2] << 8) | p[3];
}

void push_be32(std::vector<uint8_t>& v, uint32_t x) {
  v.push_back((uint8_t)(x >> 24));
  v.push_back((uint8_t)(x >> 16));
  v.push_back((uint8_t)(x >> 8));
  v.push_back((uint8_t)x);
}

void push_chunk(std::vector<uint8_t>& out, const char type[4], const uint8_t* data, size_t n) {
  push_be32(out, (uint32_t)n);
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  if (n) out.insert(out.end(), data, data + n);
  uint32_t crc = crc32(out.data() + start, out.size() - start);
  push_be32(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

PngImage read_png(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kSignature, 8) != 0)
    throw IoError(path + ": not a PNG file");

  PngImage img;
  int bit_depth = 0, color_type = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  bool seen_end = false;
  while (pos + 8 <= bytes.size() && !seen_end) {
    uint32_t len = be32(bytes.data() + pos);
    if (pos + 12 + len > bytes.size()) throw IoError(path + ": truncated PNG chunk");
    const char* type = (const char*)bytes.data() + pos + 4;
    const uint8_t* data = bytes.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError(path + ": bad IHDR");
      img.width = (int)be32(data);
      img.height = (int)be32(data + 4);
      bit_depth = data[8];
      color_type = data[9];
      if (data[10] != 0 || data[11] != 0) throw IoError(path + ": unsupported PNG compression");
      if (data[12] != 0) throw IoError(path + ": interlaced PNG not supported");
      if (bit_depth != 8) throw IoError(path + ": only 8-bit PNG supported");
      switch (color_type) {
        case 0: img.channels = 1; break;
        case 2: img.channels = 3; break;
        case 4: img.channels = 2; break;
        case 6: img.channels = 4; break;
        default: throw IoError(path + ": palette PNG not supported");
      }
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_end = true;
    }
    pos += 12 + len;
  }
  if (img.width <= 0 || img.height <= 0 || img.channels == 0)
    throw IoError(path + ": missing IHDR");
  if (idat.empty()) throw IoError(path + ": missing IDAT");

  size_t stride = (size_t)img.width * img.channels;
  uLongf raw_size = (uLongf)((stride + 1) * img.height);
  std::vector<uint8_t> raw(raw_size);
  if (uncompress(raw.data(), &raw_size, idat.data(), (uLong)idat.size()) != Z_OK ||
      raw_size != (stride + 1) * (size_t)img.height)
    throw IoError(path + ": PNG inflate failed");

  img.pixels.resize(stride * img.height);
  int bpp = img.channels;
  for (int y = 0; y < img.height; ++y) {
    uint8_t filter = raw[(stride + 1) * (size_t)y];
    const uint8_t* src = raw.data() + (stride + 1) * (size_t)y + 1;
    uint8_t* cur = img.pixels.data() + stride * (size_t)y;
    const uint8_t* up = y > 0 ? img.pixels.data() + stride * (size_t)(y - 1) : nullptr;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= (size_t)bpp ? cur[x - bpp] : 0;
      int b = up ? up[x] : 0;
      int c = up && x >= (size_t)bpp ? up[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError(path + ": bad PNG filter type");
      }
      cur[x] = (uint8_t)v;
    }
  }
  return img;
}

void write_png_rgb8(const std::string& path, int width, int height, const uint8_t* rgb) {
  size_t stride = (size_t)width * 3;
  std::vector<uint8_t> raw((stride + 1) * (size_t)height);
  for (int y = 0; y < height; ++y) {
    raw[(stride + 1) * (size_t)y] = 0;  // no per-row filtering
    std::memcpy(raw.data() + (stride + 1) * (size_t)y + 1, rgb + stride * (size_t)y, stride);
  }
  uLongf bound = compressBound((uLong)raw.size());
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(), (uLong)raw.size(), 6) != Z_OK)
    throw IoError(path + ": PNG deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out(kSignature, kSignature + 8);
  uint8_t ihdr[13];
  ihdr[0] = (uint8_t)(width >> 24);
  ihdr[1] = (uint8_t)(width >> 16);
  ihdr[2] = (uint8_t)(width >> 8);
  ihdr[3] = (uint8_t)width;
  ihdr[4] = (uint8_t)(height >> 24);
  ihdr[5] = (uint8_t)(height >> 16);
  ihdr[6] = (uint8_t)(height >> 8);
  ihdr[7] = (uint8_t)height;
  ihdr[8] = 8;   // bit depth
  ihdr[9] = 2;   // RGB
  ihdr[10] = ihdr[11] = ihdr[12] = 0;
  push_chunk(out, "IHDR", ihdr, 13);
  push_chunk(out, "IDAT", compressed.data(), compressed.size());
  push_chunk(out, "IEND", nullptr, 0);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write((const char*)out.data(), (std::streamsize)out.size());
  if (!f) throw IoError("write failed for " + path);
}

}  // namespace hinerv
