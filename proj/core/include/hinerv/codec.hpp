#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "hinerv/bitstream.hpp"
#include "hinerv/training.hpp"
#include "hinerv/video.hpp"

namespace hinerv {

// Compression stage knobs; defaults are the codec's standard recipe.
struct CodecParams {
  double prune_ratio = 0.15;
  int prune_epochs = 60;   // fine-tune length after pruning
  int qat_epochs = 30;     // Quant-Noise fine-tune length
  double noise_ratio = 0.9;
  int bits = 6;
};

struct RunReport {
  std::vector<double> frame_psnr, frame_msssim;
  double psnr = 0, msssim = 0;  // averages over frames
  double psnr_unquantized = 0;  // encode only: reconstruction before quantization
  int64_t bitstream_bytes = 0;
  double bpp = 0;
  double encode_seconds = 0, decode_seconds = 0;
  uint64_t seed = 0;
  std::string config_echo;

  void write_csv(const std::string& path) const;  // frame,psnr,msssim (+ avg row)
  void print(std::ostream& os) const;
};

double bits_per_pixel(int64_t bytes, int frames, int height, int width);

struct EncodeResult {
  std::vector<uint8_t> bitstream;
  RunReport report;
};

// Encoding is training: fit the model, prune + fine-tune, quantization-aware
// fine-tune, quantize, entropy-code. Any stage error is rethrown with the
// stage name prefixed.
EncodeResult encode_video(const VideoClip& video, const ModelConfig& model_cfg,
                          const TrainConfig& train_cfg, const CodecParams& codec,
                          const std::string& checkpoint_out = "");

enum class DecodeMode { kFrame, kPatch };

// Frames [first, last) of the compressed model; -1 decodes to the end. Both
// modes emit identical pixels.
VideoClip decode_video(const std::vector<uint8_t>& bitstream, DecodeMode mode, int first = 0,
                       int last = -1);
VideoClip decode_model(const HiNeRVModel& model, DecodeMode mode, int first = 0, int last = -1);

RunReport evaluate(const VideoClip& original, const VideoClip& reconstructed,
                   int64_t bitstream_bytes);

// Flat key=value file; '#' comments, unknown keys rejected. Frame geometry
// comes from the input video.
struct ParsedConfig {
  ModelConfig model;
  TrainConfig train;
  CodecParams codec;
};
ParsedConfig parse_config_text(const std::string& text, int frame_h, int frame_w, int frames);
ParsedConfig parse_config_file(const std::string& path, int frame_h, int frame_w, int frames);

}  // namespace hinerv
