#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hinerv/metrics.hpp"
#include "hinerv/model.hpp"
#include "hinerv/rng.hpp"
#include "hinerv/video.hpp"

namespace hinerv {

struct TrainConfig {
  int epochs = 300;
  double base_lr = 2e-3;
  double warmup_fraction = 0.1;  // linear warmup over the first steps
  int batch_frames = 1;          // batch size in frames; patches scale with it
  double grad_clip_norm = 1.0;
  float loss_alpha = 0.7f;       // alpha * L1 + (1 - alpha) * (1 - MS-SSIM)
  int msssim_window = 5;
  uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::string log_csv;  // optional per-step log path
};

// Uniform patch coordinates; without_replacement shuffles the full cover and
// takes a prefix instead of independent draws.
std::vector<PatchCoordinate> sample_patches(Rng& rng, int frames, int patches_y, int patches_x,
                                            int64_t count, bool without_replacement = false);

// Linear warmup into cosine decay; at(total_steps) is exactly zero.
struct LrSchedule {
  double base_lr = 0;
  int total_steps = 0;
  double warmup_fraction = 0;
  double at(int step) const;
};

// Adam with global-norm clipping. Per-parameter prune masks (1 = pruned) zero
// the gradient and re-project the weight to zero after every update.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ParamRef>& params, const TrainConfig& cfg);

  void set_masks(const std::vector<std::vector<uint8_t>>* masks);
  void step(double lr);
  double last_clipped_norm() const { return last_norm_; }

 private:
  std::vector<ParamRef>& params_;
  double beta1_, beta2_, eps_, clip_;
  int64_t t_ = 0;
  double last_norm_ = 0;
  std::vector<std::vector<double>> m_, v_;
  const std::vector<std::vector<uint8_t>>* masks_ = nullptr;
};

struct EpochStat {
  int epoch = 0;
  double loss = 0;
  double psnr = 0;
};

struct TrainResult {
  std::vector<EpochStat> epochs;
  double final_loss = 0;
  double final_psnr = 0;
  int64_t steps = 0;
};

// Called right before each optimization step (quantization-aware fine-tuning
// uses it to refresh its per-step weight substitution).
using StepHook = std::function<void(int64_t step)>;

// Per-video optimization: one epoch covers every patch once in shuffled
// order, each step accumulates gradients over `batch_frames` worth of
// patches, clips, and applies Adam under the warmup + cosine schedule.
TrainResult train(HiNeRVModel& model, const VideoClip& video, const TrainConfig& cfg,
                  const std::vector<std::vector<uint8_t>>* prune_masks = nullptr,
                  StepHook pre_step = nullptr);

// M x M x 3 target patch cut from a frame.
FTensor target_patch(const VideoClip& video, const ModelConfig& cfg, const PatchCoordinate& pc);

}  // namespace hinerv
