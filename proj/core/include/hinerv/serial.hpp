#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "hinerv/common.hpp"

namespace hinerv {

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc = 0);

// Little-endian byte sink used by the checkpoint and bitstream writers.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void varint(uint64_t v);  // LEB128
  void bytes(const uint8_t* p, size_t n);
  void raw(const std::string& s) { bytes((const uint8_t*)s.data(), s.size()); }

  size_t size() const { return buf_.size(); }
  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  std::vector<uint8_t> buf_;
};

// Bounds-checked reader; overruns throw CorruptError.
class ByteReader {
 public:
  ByteReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : p_(v.data()), n_(v.size()) {}

  uint8_t u8();
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  uint64_t varint();
  void bytes(uint8_t* out, size_t n);
  void skip(size_t n);

  size_t pos() const { return pos_; }
  size_t remaining() const { return n_ - pos_; }
  bool at_end() const { return pos_ == n_; }

 private:
  void need(size_t n) const;
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

}  // namespace hinerv
