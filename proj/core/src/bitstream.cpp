#include "hinerv/bitstream.hpp"

#include <cstring>
#include <fstream>

#include "hinerv/coder.hpp"

namespace hinerv {

namespace {

// Quantized value to histogram slot: symmetric range shifted to [0, 2^b - 2].
uint32_t to_symbol(int32_t q, int32_t qmax) { return (uint32_t)(q + qmax); }
int32_t from_symbol(uint32_t s, int32_t qmax) { return (int32_t)s - qmax; }

Rng& dummy_rng() {
  static thread_local Rng rng(0);
  return rng;
}

}  // namespace

void write_config(ByteWriter& w, const ModelConfig& cfg) {
  w.u32((uint32_t)cfg.frame_h);
  w.u32((uint32_t)cfg.frame_w);
  w.u32((uint32_t)cfg.frames);
  w.u32((uint32_t)cfg.patch_size);
  w.u8((uint8_t)cfg.blocks);
  for (int n = 0; n < cfg.blocks; ++n) {
    w.u16((uint16_t)cfg.depths[(size_t)n]);
    w.u16((uint16_t)cfg.scales[(size_t)n]);
  }
  w.u32((uint32_t)cfg.base_width);
  w.f32(cfg.reduction);
  w.u8((uint8_t)cfg.kernel);
  w.u8((uint8_t)cfg.out_channels);
  w.u8(cfg.hierarchical ? 1 : 0);
  w.u32((uint32_t)cfg.base_grid.t_grid);
  w.u32((uint32_t)cfg.base_grid.h_grid);
  w.u32((uint32_t)cfg.base_grid.w_grid);
  w.u32((uint32_t)cfg.base_grid.c_grid);
  w.u8((uint8_t)cfg.base_grid.levels);
  w.u32((uint32_t)cfg.local_grid.t_local);
  w.u32((uint32_t)cfg.local_grid.c_local);
  w.u8((uint8_t)cfg.local_grid.levels);
  w.u8((uint8_t)cfg.paddings.size());
  for (int p : cfg.paddings) w.u16((uint16_t)p);
}

ModelConfig read_config(ByteReader& r) {
  ModelConfig cfg;
  cfg.frame_h = (int)r.u32();
  cfg.frame_w = (int)r.u32();
  cfg.frames = (int)r.u32();
  cfg.patch_size = (int)r.u32();
  cfg.blocks = r.u8();
  cfg.depths.resize((size_t)cfg.blocks);
  cfg.scales.resize((size_t)cfg.blocks);
  for (int n = 0; n < cfg.blocks; ++n) {
    cfg.depths[(size_t)n] = r.u16();
    cfg.scales[(size_t)n] = r.u16();
  }
  cfg.base_width = (int)r.u32();
  cfg.reduction = r.f32();
  cfg.kernel = r.u8();
  cfg.out_channels = r.u8();
  cfg.hierarchical = r.u8() != 0;
  cfg.base_grid.t_grid = (int)r.u32();
  cfg.base_grid.h_grid = (int)r.u32();
  cfg.base_grid.w_grid = (int)r.u32();
  cfg.base_grid.c_grid = (int)r.u32();
  cfg.base_grid.levels = r.u8();
  cfg.local_grid.t_local = (int)r.u32();
  cfg.local_grid.c_local = (int)r.u32();
  cfg.local_grid.levels = r.u8();
  int pads = r.u8();
  cfg.paddings.resize((size_t)pads);
  for (int i = 0; i < pads; ++i) cfg.paddings[(size_t)i] = r.u16();
  return cfg;
}

std::vector<uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  f.seekg(0, std::ios::end);
  auto size = f.tellg();
  f.seekg(0);
  std::vector<uint8_t> bytes((size_t)size);
  f.read((char*)bytes.data(), size);
  if (!f) throw IoError("read failed for " + path);
  return bytes;
}

void write_file(const std::string& path, const std::vector<uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write((const char*)bytes.data(), (std::streamsize)bytes.size());
  if (!f) throw IoError("write failed for " + path);
}

// ---- checkpoint ----

void save_checkpoint(const HiNeRVModel& model, const std::string& path) {
  ByteWriter w;
  w.bytes((const uint8_t*)kMagic, 4);
  w.u16(kFormatVersion);
  ByteWriter cfg;
  write_config(cfg, model.config());
  w.u32((uint32_t)cfg.size());
  w.bytes(cfg.data().data(), cfg.size());
  for (const auto& p : model.params())
    for (float v : p.tensor.value()) w.f32(v);
  write_file(path, w.data());
}

HiNeRVModel load_checkpoint(const std::string& path) {
  auto bytes = read_file(path);
  ByteReader r(bytes);
  char magic[4];
  r.bytes((uint8_t*)magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptError("checkpoint: bad magic");
  uint16_t version = r.u16();
  if (version != kFormatVersion)
    throw CorruptError("checkpoint: unsupported version " + std::to_string(version));
  uint32_t cfg_len = r.u32();
  size_t cfg_end = r.pos() + cfg_len;
  ModelConfig cfg = read_config(r);
  if (r.pos() != cfg_end) throw CorruptError("checkpoint: config block length mismatch");
  HiNeRVModel model(cfg, dummy_rng());
  for (auto& p : model.params()) {
    auto& w = p.tensor.mutable_value();
    for (auto& v : w) v = r.f32();
  }
  if (!r.at_end()) throw CorruptError("checkpoint: trailing bytes");
  return model;
}

// ---- compressed container ----

std::vector<uint8_t> serialize_model(const HiNeRVModel& model, const PruneMask& mask, int bits) {
  const auto& params = model.params();
  if (!mask.bits.empty() && mask.bits.size() != params.size())
    throw ConfigError("serialize: mask does not match the parameter list");

  ByteWriter w;
  w.bytes((const uint8_t*)kMagic, 4);
  w.u16(kFormatVersion);
  ByteWriter cfg;
  write_config(cfg, model.config());
  w.u32((uint32_t)cfg.size());
  w.bytes(cfg.data().data(), cfg.size());
  w.u32((uint32_t)params.size());

  for (size_t i = 0; i < params.size(); ++i) {
    const auto& values = params[i].tensor.value();
    const std::vector<uint8_t>* bits_mask =
        !mask.bits.empty() && !mask.bits[i].empty() ? &mask.bits[i] : nullptr;

    QuantSpec spec = make_quant_spec(values, bits);
    std::vector<uint32_t> symbols;
    symbols.reserve(values.size());
    {
      std::vector<float> kept;
      kept.reserve(values.size());
      for (size_t e = 0; e < values.size(); ++e) {
        if (bits_mask && (*bits_mask)[e]) continue;
        kept.push_back(values[e]);
      }
      auto q = quantize_tensor(kept, spec);
      for (int32_t v : q) symbols.push_back(to_symbol(v, spec.qmax()));
    }

    std::vector<uint32_t> hist((size_t)1 << bits, 0);
    for (uint32_t s : symbols) ++hist[s];

    w.u32((uint32_t)i);
    w.u8((uint8_t)params[i].tensor.rank());
    for (int d = 0; d < params[i].tensor.rank(); ++d) w.u32((uint32_t)params[i].tensor.dim(d));
    w.u8(spec.bits);
    w.f32(spec.scale);

    std::vector<uint8_t> rle = bits_mask
                                   ? rle_encode_mask(*bits_mask)
                                   : rle_encode_mask(std::vector<uint8_t>(values.size(), 0));
    w.u32((uint32_t)rle.size());
    w.bytes(rle.data(), rle.size());

    for (uint32_t h : hist) w.u32(h);

    std::vector<uint8_t> payload;
    if (!symbols.empty()) payload = arith_encode(symbols, FreqTable::from_counts(hist));
    w.u32((uint32_t)payload.size());
    w.bytes(payload.data(), payload.size());
  }

  uint32_t crc = crc32(w.data().data(), w.size());
  w.u32(crc);
  return w.take();
}

namespace {

struct ParsedHeader {
  uint16_t version;
  ModelConfig config;
  size_t header_bytes;
  uint32_t tensor_count;
};

ParsedHeader parse_header(ByteReader& r, const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 10) throw CorruptError("bitstream too short");
  uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  uint32_t computed = crc32(bytes.data(), bytes.size() - 4);
  if (stored_crc != computed) throw CorruptError("bitstream checksum failure");

  char magic[4];
  r.bytes((uint8_t*)magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw CorruptError("bitstream: bad magic");
  ParsedHeader h;
  h.version = r.u16();
  if (h.version != kFormatVersion)
    throw CorruptError("bitstream: unsupported version " + std::to_string(h.version));
  uint32_t cfg_len = r.u32();
  size_t cfg_end = r.pos() + cfg_len;
  h.config = read_config(r);
  if (r.pos() != cfg_end) throw CorruptError("bitstream: config block length mismatch");
  h.tensor_count = r.u32();
  h.header_bytes = r.pos();
  return h;
}

}  // namespace

HiNeRVModel deserialize_model(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  ParsedHeader h = parse_header(r, bytes);
  HiNeRVModel model(h.config, dummy_rng());
  auto& params = model.params();
  if (h.tensor_count != params.size())
    throw CorruptError("bitstream: tensor count " + std::to_string(h.tensor_count) +
                       " does not match the config's " + std::to_string(params.size()));

  for (size_t i = 0; i < params.size(); ++i) {
    uint32_t name_id = r.u32();
    if (name_id != i) throw CorruptError("bitstream: tensor records out of order");
    int rank = r.u8();
    Shape dims((size_t)rank);
    for (int d = 0; d < rank; ++d) dims[(size_t)d] = (int)r.u32();
    if (dims != params[i].tensor.shape())
      throw CorruptError("bitstream: tensor " + params[i].name + " has shape " +
                         shape_str(dims) + ", expected " + shape_str(params[i].tensor.shape()));
    QuantSpec spec;
    spec.bits = r.u8();
    spec.scale = r.f32();
    if (spec.bits < 2 || spec.bits > 8) throw CorruptError("bitstream: invalid bitwidth");
    if (!(spec.scale > 0)) throw CorruptError("bitstream: invalid scale");

    uint32_t rle_len = r.u32();
    std::vector<uint8_t> rle((size_t)rle_len);
    r.bytes(rle.data(), rle.size());
    size_t elems = (size_t)params[i].tensor.numel();
    std::vector<uint8_t> mask = rle_decode_mask(rle.data(), rle.size(), elems);

    std::vector<uint32_t> hist((size_t)1 << spec.bits);
    for (auto& hv : hist) hv = r.u32();

    uint32_t payload_len = r.u32();
    std::vector<uint8_t> payload((size_t)payload_len);
    r.bytes(payload.data(), payload.size());

    size_t kept = 0;
    for (uint8_t m : mask) kept += m == 0;
    std::vector<int32_t> q;
    if (kept > 0) {
      auto symbols = arith_decode(payload.data(), payload.size(), FreqTable::from_counts(hist),
                                  kept);
      q.reserve(kept);
      for (uint32_t s : symbols) {
        if (s >= ((uint32_t)1 << spec.bits)) throw CorruptError("bitstream: symbol out of range");
        q.push_back(from_symbol(s, spec.qmax()));
      }
    }
    auto dq = dequantize_tensor(q, spec);
    auto& w = params[i].tensor.mutable_value();
    size_t k = 0;
    for (size_t e = 0; e < elems; ++e) w[e] = mask[e] ? 0.0f : dq[k++];
  }
  if (r.remaining() != 4) throw CorruptError("bitstream: trailing bytes");
  return model;
}

BitstreamInfo inspect_bitstream(const std::vector<uint8_t>& bytes) {
  ByteReader r(bytes);
  ParsedHeader h = parse_header(r, bytes);
  BitstreamInfo info;
  info.version = h.version;
  info.config = h.config;
  info.header_bytes = h.header_bytes;
  info.total_bytes = bytes.size();

  // Reconstruct canonical names without materializing parameter storage.
  HiNeRVModel model(h.config, dummy_rng());
  const auto& params = model.params();
  if (h.tensor_count != params.size())
    throw CorruptError("bitstream: tensor count mismatch");

  for (size_t i = 0; i < params.size(); ++i) {
    size_t start = r.pos();
    TensorRecordInfo t;
    uint32_t name_id = r.u32();
    if (name_id != i) throw CorruptError("bitstream: tensor records out of order");
    t.name = params[i].name;
    int rank = r.u8();
    t.dims.resize((size_t)rank);
    for (int d = 0; d < rank; ++d) t.dims[(size_t)d] = (int)r.u32();
    t.elems = shape_numel(t.dims);
    t.bits = r.u8();
    t.scale = r.f32();
    uint32_t rle_len = r.u32();
    t.mask_bytes = rle_len;
    std::vector<uint8_t> rle((size_t)rle_len);
    r.bytes(rle.data(), rle.size());
    auto mask = rle_decode_mask(rle.data(), rle.size(), (size_t)t.elems);
    for (uint8_t m : mask) t.pruned += m != 0;
    t.histogram_bytes = ((size_t)1 << t.bits) * 4;
    r.skip(t.histogram_bytes);
    uint32_t payload_len = r.u32();
    t.payload_bytes = payload_len;
    r.skip(payload_len);
    t.record_bytes = r.pos() - start;
    info.tensors.push_back(std::move(t));
  }
  if (r.remaining() != 4) throw CorruptError("bitstream: trailing bytes");
  return info;
}

int64_t BitstreamInfo::pruned_total() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += t.pruned;
  return n;
}

int64_t BitstreamInfo::elems_total() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += t.elems;
  return n;
}

double BitstreamInfo::sparsity() const {
  int64_t total = elems_total();
  return total == 0 ? 0.0 : (double)pruned_total() / (double)total;
}

}  // namespace hinerv
