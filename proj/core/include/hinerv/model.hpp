#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hinerv/grids.hpp"
#include "hinerv/rng.hpp"
#include "hinerv/tensor.hpp"

namespace hinerv {

// One spatial patch of one frame: column i, row j, frame t.
struct PatchCoordinate {
  int i = 0;
  int j = 0;
  int t = 0;
};

struct ModelConfig {
  int frame_h = 0, frame_w = 0, frames = 0;
  int patch_size = 0;            // M; frames are tiled into M x M patches
  int blocks = 0;                // N
  std::vector<int> depths;       // D_n, one per block
  std::vector<int> scales;       // S_n, one per block
  int base_width = 0;            // C_0
  float reduction = 2.0f;        // R; width_n = floor(C_0 / R^(n-1))
  int kernel = 3;
  int out_channels = 3;
  bool hierarchical = true;      // toggles the per-block encodings
  BaseGridConfig base_grid;
  LocalGridConfig local_grid;    // t_local == 0 means "use frame count"
  std::vector<int> paddings;     // N+1 entries, stem first; empty = computed

  int upsample_total() const;
  int base_patch() const;                  // M_0
  int base_h() const;                      // frame extent at stem resolution
  int base_w() const;
  int stage_h(int n) const;                // frame extent after block n
  int stage_w(int n) const;
  int stage_size(int n) const;             // M_n (patch extent after block n)
  int width(int n) const;                  // C_n; width(0) == C_0
  int expansion(int n) const;              // 4, last block 1
  int local_channels(int n) const;         // floor(c_local / R^(n-1)), may be 0
  int local_t() const;                     // t_local with the == frames default
  int patches_x() const;
  int patches_y() const;

  void validate() const;  // structural checks; throws ConfigError
};

// Zero padding a single K x K convolution needs on each side.
int conv_padding_need(int kernel);

// Per-stage paddings (stem + one per block) sufficient for the padded-patch
// execution to reproduce frame-wise outputs exactly: requirements accumulate
// top-down from the head, each upsampling stage covering its interpolation
// support plus the convolution pollution of the stage above it.
std::vector<int> padding_schedule(const ModelConfig& cfg);

// Audits a padding schedule: tracks the invalid margin through every stage
// and throws ConfigError if polluted pixels could reach the final crop.
void validate_padding_schedule(const ModelConfig& cfg);

struct ParamRef {
  std::string name;
  FTensor tensor;
  bool prunable = false;  // conv / linear weight matrices only
};

// The network: stem convolution over the base encoding, `blocks` upsampling
// blocks (norm, bilinear upsample, encoding add, ConvNeXt layers), and a
// per-pixel linear head with sigmoid. One instance serves both frame-wise
// and padded patch-wise execution and produces identical pixels in both.
class HiNeRVModel {
 public:
  HiNeRVModel(ModelConfig cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<int>& paddings() const { return pad_; }

  std::vector<ParamRef>& params() { return params_; }
  const std::vector<ParamRef>& params() const { return params_; }
  int64_t param_count() const;

  // M x M x 3 pixels of one patch, computed on padded footprints.
  FTensor forward_patch(const PatchCoordinate& pc) const;
  // H x W x 3 pixels of one frame, computed without padding.
  FTensor forward_frame(int t) const;

  // Optional per-parameter substitution applied on every forward read
  // (index into params(), leaf tensor) -> effective tensor. Used by
  // quantization-aware training.
  std::function<FTensor(int, const FTensor&)> weight_transform;

 private:
  struct Layer {
    int dw_w, dw_b, ln_g, ln_b, pw1_w, pw1_b, pw2_w, pw2_b;  // param indices
    int c_in, c_out, hidden;
  };
  struct Block {
    int norm_g, norm_b;
    int enc_w = -1, enc_b = -1;
    int grid_first = -1;
    FeatureGridSet grids;
    std::vector<Layer> layers;
  };

  FTensor run(int i, int j, int t, bool padded) const;
  FTensor p(int idx) const;  // effective parameter
  int push_param(const std::string& name, FTensor t, bool prunable = false);

  ModelConfig cfg_;
  std::vector<int> pad_;
  std::vector<ParamRef> params_;
  FeatureGridSet base_grids_;
  int stem_w_, stem_b_;
  std::vector<Block> blocks_;
  int head_w_, head_b_;
};

}  // namespace hinerv
