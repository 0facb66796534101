#pragma once

#include <cstdint>
#include <vector>

#include "hinerv/model.hpp"
#include "hinerv/training.hpp"

namespace hinerv {

// Per-parameter prune bits (1 = pruned); entries stay empty for parameters
// that are exempt from pruning. Pruned weights are exactly zero and receive
// zero gradient during fine-tuning.
struct PruneMask {
  std::vector<std::vector<uint8_t>> bits;

  static PruneMask empty_for(const HiNeRVModel& model);
  int64_t pruned_count() const;
  int64_t prunable_count() const;  // total elements of tensors carrying a mask
  double sparsity() const;
};

// Importance of one weight: |w| / P^lambda with P the element count of the
// weight's own tensor, so wide layers prune before narrow ones.
double prune_score(float w, int64_t tensor_elems, double lambda = 0.5);

// Globally masks the floor(ratio * unpruned) lowest-score weights across the
// prunable tensors (conv/linear weight matrices; grids, biases and norm
// affines are exempt), extending `mask` and zeroing the weights in place.
// Ties break on (parameter index, flat index).
void prune(HiNeRVModel& model, double ratio, PruneMask& mask, double lambda = 0.5);

// Symmetric per-tensor fixed-point quantization to a signed range
// [-(2^(b-1)-1), 2^(b-1)-1].
struct QuantSpec {
  uint8_t bits = 6;
  float scale = 1.0f;
  int32_t qmax() const { return (1 << (bits - 1)) - 1; }
};

QuantSpec make_quant_spec(const std::vector<float>& w, int bits);
std::vector<int32_t> quantize_tensor(const std::vector<float>& w, const QuantSpec& spec);
std::vector<float> dequantize_tensor(const std::vector<int32_t>& q, const QuantSpec& spec);

// Quant-Noise forward: a fresh random noise_ratio fraction of the elements
// is replaced by its dequantized value; replaced elements are treated as
// constants and receive zero gradient, the rest pass through untouched.
FTensor quant_noise_forward(const FTensor& w, const QuantSpec& spec, double noise_ratio, Rng& rng);

// Applies per-tensor quantization (all parameters, grids included) in place.
void quantize_model(HiNeRVModel& model, int bits);

// Quantization-aware fine-tuning: Quant-Noise in the forward path, specs
// refreshed from the live weights every step, 10% of the configured rate.
TrainResult qat_finetune(HiNeRVModel& model, const VideoClip& video, TrainConfig cfg, int epochs,
                         int bits, double noise_ratio, const PruneMask* mask);

}  // namespace hinerv
