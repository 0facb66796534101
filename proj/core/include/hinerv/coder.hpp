#pragma once

#include <cstdint>
#include <vector>

#include "hinerv/common.hpp"

namespace hinerv {

// Static frequency model for the arithmetic coder: a histogram of symbol
// counts plus its prefix sums. Total count must stay below 2^30 so the
// coder's 32-bit registers never overflow.
struct FreqTable {
  std::vector<uint32_t> counts;
  std::vector<uint64_t> cum;  // size counts.size() + 1
  uint64_t total = 0;

  static FreqTable from_counts(std::vector<uint32_t> counts);
};

// Binary arithmetic coder over a static model; lossless for any symbol
// stream the model assigns nonzero frequency.
std::vector<uint8_t> arith_encode(const std::vector<uint32_t>& symbols, const FreqTable& model);
std::vector<uint32_t> arith_decode(const uint8_t* data, size_t size, const FreqTable& model,
                                   size_t count);

// Prune-mask run lengths: alternating LEB128 runs of kept(0) / pruned(1)
// bits, starting with a kept run (possibly zero-length).
std::vector<uint8_t> rle_encode_mask(const std::vector<uint8_t>& mask);
std::vector<uint8_t> rle_decode_mask(const uint8_t* data, size_t size, size_t count);

}  // namespace hinerv
