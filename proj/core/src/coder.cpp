#include "hinerv/coder.hpp"

#include <algorithm>

#include "hinerv/serial.hpp"

namespace hinerv {

namespace {

constexpr uint64_t kTop = 0xFFFFFFFFull;
constexpr uint64_t kHalf = 0x80000000ull;
constexpr uint64_t kQuarter = 0x40000000ull;
constexpr uint64_t kThreeQuarters = 0xC0000000ull;
constexpr uint64_t kMaxTotal = 1ull << 30;

class BitWriter {
 public:
  void bit(int b) {
    cur_ = (uint8_t)((cur_ << 1) | (b & 1));
    if (++nbits_ == 8) {
      out_.push_back(cur_);
      cur_ = 0;
      nbits_ = 0;
    }
  }
  void bit_with_pending(int b, uint64_t& pending) {
    bit(b);
    for (; pending > 0; --pending) bit(!b);
  }
  std::vector<uint8_t> finish() {
    while (nbits_ != 0) bit(0);
    return std::move(out_);
  }

 private:
  std::vector<uint8_t> out_;
  uint8_t cur_ = 0;
  int nbits_ = 0;
};

class BitReader {
 public:
  BitReader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  int bit() {
    if (pos_ >= n_ * 8) return 0;  // past the stream: zero fill
    int b = (p_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1;
    ++pos_;
    return b;
  }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

}  // namespace

FreqTable FreqTable::from_counts(std::vector<uint32_t> counts) {
  FreqTable t;
  t.counts = std::move(counts);
  t.cum.resize(t.counts.size() + 1, 0);
  for (size_t i = 0; i < t.counts.size(); ++i) t.cum[i + 1] = t.cum[i] + t.counts[i];
  t.total = t.cum.back();
  if (t.total == 0) throw UsageError("frequency model is empty");
  if (t.total >= kMaxTotal) throw UsageError("frequency model total exceeds 2^30");
  return t;
}

std::vector<uint8_t> arith_encode(const std::vector<uint32_t>& symbols, const FreqTable& model) {
  BitWriter out;
  uint64_t low = 0, high = kTop, pending = 0;
  for (uint32_t s : symbols) {
    if (s >= model.counts.size() || model.counts[s] == 0)
      throw UsageError("symbol " + std::to_string(s) + " has zero model frequency");
    uint64_t range = high - low + 1;
    high = low + range * model.cum[s + 1] / model.total - 1;
    low = low + range * model.cum[s] / model.total;
    for (;;) {
      if (high < kHalf) {
        out.bit_with_pending(0, pending);
      } else if (low >= kHalf) {
        out.bit_with_pending(1, pending);
        low -= kHalf;
        high -= kHalf;
      } else if (low >= kQuarter && high < kThreeQuarters) {
        ++pending;
        low -= kQuarter;
        high -= kQuarter;
      } else {
        break;
      }
      low <<= 1;
      high = (high << 1) | 1;
    }
  }
  ++pending;
  if (low < kQuarter)
    out.bit_with_pending(0, pending);
  else
    out.bit_with_pending(1, pending);
  return out.finish();
}

std::vector<uint32_t> arith_decode(const uint8_t* data, size_t size, const FreqTable& model,
                                   size_t count) {
  BitReader in(data, size);
  uint64_t low = 0, high = kTop, value = 0;
  for (int i = 0; i < 32; ++i) value = (value << 1) | (uint64_t)in.bit();
  std::vector<uint32_t> out;
  out.reserve(count);
  for (size_t k = 0; k < count; ++k) {
    uint64_t range = high - low + 1;
    uint64_t scaled = ((value - low + 1) * model.total - 1) / range;
    if (scaled >= model.total) throw CorruptError("arithmetic decoder out of range");
    auto it = std::upper_bound(model.cum.begin() + 1, model.cum.end(), scaled);
    uint32_t s = (uint32_t)(it - model.cum.begin() - 1);
    out.push_back(s);
    high = low + range * model.cum[s + 1] / model.total - 1;
    low = low + range * model.cum[s] / model.total;
    for (;;) {
      if (high < kHalf) {
        // nothing
      } else if (low >= kHalf) {
        low -= kHalf;
        high -= kHalf;
        value -= kHalf;
      } else if (low >= kQuarter && high < kThreeQuarters) {
        low -= kQuarter;
        high -= kQuarter;
        value -= kQuarter;
      } else {
        break;
      }
      low <<= 1;
      high = (high << 1) | 1;
      value = (value << 1) | (uint64_t)in.bit();
    }
  }
  return out;
}

std::vector<uint8_t> rle_encode_mask(const std::vector<uint8_t>& mask) {
  ByteWriter w;
  size_t i = 0;
  int expect = 0;  // runs alternate starting with kept(0)
  while (i < mask.size()) {
    size_t run = 0;
    while (i + run < mask.size() && (mask[i + run] != 0) == (expect != 0)) ++run;
    w.varint(run);
    i += run;
    expect ^= 1;
  }
  if (mask.empty()) w.varint(0);
  return w.take();
}

std::vector<uint8_t> rle_decode_mask(const uint8_t* data, size_t size, size_t count) {
  ByteReader r(data, size);
  std::vector<uint8_t> mask;
  mask.reserve(count);
  int bit = 0;
  while (mask.size() < count) {
    uint64_t run = r.varint();
    if (run > count - mask.size()) throw CorruptError("mask run-length exceeds tensor size");
    mask.insert(mask.end(), (size_t)run, (uint8_t)bit);
    bit ^= 1;
  }
  return mask;
}

}  // namespace hinerv
