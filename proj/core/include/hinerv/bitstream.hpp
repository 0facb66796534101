#pragma once

#include <string>
#include <vector>

#include "hinerv/compress.hpp"
#include "hinerv/serial.hpp"

namespace hinerv {

inline constexpr char kMagic[4] = {'H', 'N', 'R', 'V'};
inline constexpr uint16_t kFormatVersion = 1;

void write_config(ByteWriter& w, const ModelConfig& cfg);
ModelConfig read_config(ByteReader& r);

// Checkpoint: magic, version, length-prefixed config block, then every
// parameter in registration order as little-endian f32.
void save_checkpoint(const HiNeRVModel& model, const std::string& path);
HiNeRVModel load_checkpoint(const std::string& path);

// Compressed container. Layout, all little-endian:
//   magic "HNRV" | version u16 | config block (u32 length + bytes)
//   | tensor count u32 | per tensor:
//       name-id u32, rank u8, dims u32[], bitwidth u8, scale f32,
//       mask RLE (u32 length + bytes), histogram (2^bits u32 counts),
//       coded payload (u32 length + bytes)
//   | crc32 u32 over all preceding bytes.
// The payload codes only unpruned elements; the mask restores positions.
std::vector<uint8_t> serialize_model(const HiNeRVModel& model, const PruneMask& mask, int bits);
HiNeRVModel deserialize_model(const std::vector<uint8_t>& bytes);

struct TensorRecordInfo {
  std::string name;
  Shape dims;
  int bits = 0;
  float scale = 0;
  int64_t pruned = 0, elems = 0;
  size_t mask_bytes = 0, histogram_bytes = 0, payload_bytes = 0;
  size_t record_bytes = 0;  // whole per-tensor record including its header
};

struct BitstreamInfo {
  uint16_t version = 0;
  ModelConfig config;
  size_t header_bytes = 0;  // magic + version + config block + tensor count
  size_t total_bytes = 0;
  std::vector<TensorRecordInfo> tensors;

  int64_t pruned_total() const;
  int64_t elems_total() const;
  double sparsity() const;
};

BitstreamInfo inspect_bitstream(const std::vector<uint8_t>& bytes);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace hinerv
