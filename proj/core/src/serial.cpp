#include "hinerv/serial.hpp"

#include <array>
#include <sstream>

namespace hinerv {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

namespace {
std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}
}  // namespace

uint32_t crc32(const uint8_t* data, size_t n, uint32_t crc) {
  static const auto table = make_crc_table();
  crc = ~crc;
  for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xff] ^ (crc >> 8);
  return ~crc;
}

void ByteWriter::u16(uint16_t v) {
  u8((uint8_t)(v & 0xff));
  u8((uint8_t)(v >> 8));
}
void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) u8((uint8_t)(v >> (8 * i)));
}
void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) u8((uint8_t)(v >> (8 * i)));
}
void ByteWriter::f32(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  u32(bits);
}
void ByteWriter::varint(uint64_t v) {
  while (v >= 0x80) {
    u8((uint8_t)(v | 0x80));
    v >>= 7;
  }
  u8((uint8_t)v);
}
void ByteWriter::bytes(const uint8_t* p, size_t n) { buf_.insert(buf_.end(), p, p + n); }

void ByteReader::need(size_t n) const {
  if (pos_ + n > n_) throw CorruptError("bitstream truncated: need " + std::to_string(n) +
                                        " bytes at offset " + std::to_string(pos_));
}
uint8_t ByteReader::u8() {
  need(1);
  return p_[pos_++];
}
uint16_t ByteReader::u16() {
  uint16_t a = u8();
  return (uint16_t)(a | (u8() << 8));
}
uint32_t ByteReader::u32() {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= (uint32_t)u8() << (8 * i);
  return v;
}
uint64_t ByteReader::u64() {
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= (uint64_t)u8() << (8 * i);
  return v;
}
float ByteReader::f32() {
  uint32_t bits = u32();
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}
uint64_t ByteReader::varint() {
  uint64_t v = 0;
  int shift = 0;
  while (true) {
    uint8_t b = u8();
    if (shift >= 63 && (b & 0x7f) > 1) throw CorruptError("varint overflow");
    v |= (uint64_t)(b & 0x7f) << shift;
    if (!(b & 0x80)) break;
    shift += 7;
  }
  return v;
}
void ByteReader::bytes(uint8_t* out, size_t n) {
  need(n);
  std::memcpy(out, p_ + pos_, n);
  pos_ += n;
}
void ByteReader::skip(size_t n) {
  need(n);
  pos_ += n;
}

}  // namespace hinerv
