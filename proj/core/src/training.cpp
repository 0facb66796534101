#include "hinerv/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace hinerv {

std::vector<PatchCoordinate> sample_patches(Rng& rng, int frames, int patches_y, int patches_x,
                                            int64_t count, bool without_replacement) {
  if (frames < 1 || patches_y < 1 || patches_x < 1 || count < 1)
    throw UsageError("sample_patches: empty partition or count");
  std::vector<PatchCoordinate> out;
  out.reserve((size_t)count);
  if (without_replacement) {
    int64_t total = (int64_t)frames * patches_y * patches_x;
    if (count > total)
      throw UsageError("sample_patches: count " + std::to_string(count) +
                       " exceeds the " + std::to_string(total) + " distinct patches");
    std::vector<PatchCoordinate> all;
    all.reserve((size_t)total);
    for (int t = 0; t < frames; ++t)
      for (int j = 0; j < patches_y; ++j)
        for (int i = 0; i < patches_x; ++i) all.push_back({i, j, t});
    rng.shuffle(all);
    out.assign(all.begin(), all.begin() + (size_t)count);
  } else {
    for (int64_t k = 0; k < count; ++k) {
      PatchCoordinate pc;
      pc.t = (int)rng.uniform_int((uint64_t)frames);
      pc.j = (int)rng.uniform_int((uint64_t)patches_y);
      pc.i = (int)rng.uniform_int((uint64_t)patches_x);
      out.push_back(pc);
    }
  }
  return out;
}

double LrSchedule::at(int step) const {
  if (total_steps <= 0) return base_lr;
  int warmup = (int)std::llround(warmup_fraction * total_steps);
  if (step < warmup) return base_lr * (double)(step + 1) / (double)warmup;
  int remaining = std::max(1, total_steps - warmup);
  double progress = (double)(step - warmup) / (double)remaining;
  progress = std::min(1.0, std::max(0.0, progress));
  return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamOptimizer::AdamOptimizer(std::vector<ParamRef>& params, const TrainConfig& cfg)
    : params_(params),
      beta1_(cfg.beta1),
      beta2_(cfg.beta2),
      eps_(cfg.adam_eps),
      clip_(cfg.grad_clip_norm) {
  m_.resize(params.size());
  v_.resize(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i].assign((size_t)params[i].tensor.numel(), 0.0);
    v_[i].assign((size_t)params[i].tensor.numel(), 0.0);
  }
}

void AdamOptimizer::set_masks(const std::vector<std::vector<uint8_t>>* masks) {
  if (masks && masks->size() != params_.size())
    throw ConfigError("optimizer: mask count does not match parameter count");
  masks_ = masks;
}

void AdamOptimizer::step(double lr) {
  double sq = 0;
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto& g = params_[i].tensor.grad();
    if (g.empty()) continue;
    const std::vector<uint8_t>* mask = masks_ ? &(*masks_)[i] : nullptr;
    for (size_t e = 0; e < g.size(); ++e) {
      if (mask && !mask->empty() && (*mask)[e]) continue;
      sq += (double)g[e] * (double)g[e];
    }
  }
  double norm = std::sqrt(sq);
  double cs = (clip_ > 0 && norm > clip_) ? clip_ / norm : 1.0;
  last_norm_ = norm * cs;

  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, (double)t_);
  double bc2 = 1.0 - std::pow(beta2_, (double)t_);
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i].tensor.mutable_value();
    const auto& g = params_[i].tensor.grad();
    const std::vector<uint8_t>* mask = masks_ ? &(*masks_)[i] : nullptr;
    bool masked_any = mask && !mask->empty();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t e = 0; e < w.size(); ++e) {
      double ge = g.empty() ? 0.0 : (double)g[e];
      if (masked_any && (*mask)[e]) ge = 0.0;
      ge *= cs;
      m[e] = beta1_ * m[e] + (1.0 - beta1_) * ge;
      v[e] = beta2_ * v[e] + (1.0 - beta2_) * ge * ge;
      double update = lr * (m[e] / bc1) / (std::sqrt(v[e] / bc2) + eps_);
      w[e] = (float)((double)w[e] - update);
      if (masked_any && (*mask)[e]) w[e] = 0.0f;
    }
    params_[i].tensor.zero_grad();
  }
}

FTensor target_patch(const VideoClip& video, const ModelConfig& cfg, const PatchCoordinate& pc) {
  int m = cfg.patch_size;
  std::vector<float> v((size_t)m * m * 3);
  const float* f = video.frame(pc.t);
  for (int y = 0; y < m; ++y) {
    const float* src = f + (((int64_t)pc.j * m + y) * cfg.frame_w + (int64_t)pc.i * m) * 3;
    std::copy_n(src, (size_t)m * 3, v.data() + (size_t)y * m * 3);
  }
  return FTensor::from_vec({m, m, 3}, std::move(v));
}

TrainResult train(HiNeRVModel& model, const VideoClip& video, const TrainConfig& cfg,
                  const std::vector<std::vector<uint8_t>>* prune_masks, StepHook pre_step) {
  const ModelConfig& mc = model.config();
  if (video.height != mc.frame_h || video.width != mc.frame_w || video.frames != mc.frames)
    throw ConfigError("train: video " + std::to_string(video.width) + "x" +
                      std::to_string(video.height) + "x" + std::to_string(video.frames) +
                      " does not match the model config");
  if (cfg.loss_alpha < 0.0f || cfg.loss_alpha > 1.0f)
    throw ConfigError("train: loss_alpha must be in [0, 1]");
  if (cfg.batch_frames < 1) throw ConfigError("train: batch_frames must be >= 1");

  int py = mc.patches_y(), px = mc.patches_x();
  int64_t per_frame = (int64_t)py * px;
  int64_t total_patches = per_frame * mc.frames;
  // Effective batch size rule: one frame batch = all patches of one frame.
  int64_t per_step = std::min<int64_t>(cfg.batch_frames * per_frame, total_patches);
  int64_t steps_per_epoch = (total_patches + per_step - 1) / per_step;
  int total_steps = (int)(steps_per_epoch * cfg.epochs);

  LrSchedule sched{cfg.base_lr, total_steps, cfg.warmup_fraction};
  AdamOptimizer opt(model.params(), cfg);
  opt.set_masks(prune_masks);
  Rng order_rng = Rng::derive(cfg.seed, 0x5350);

  std::ofstream log;
  if (!cfg.log_csv.empty()) {
    log.open(cfg.log_csv);
    if (!log) throw IoError("cannot write training log " + cfg.log_csv);
    log << "epoch,step,lr,loss,psnr\n";
  }

  TrainResult result;
  int64_t gstep = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = sample_patches(order_rng, mc.frames, py, px, total_patches, true);
    double epoch_loss = 0, epoch_se = 0;
    int64_t epoch_values = 0;
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      int64_t begin = s * per_step;
      int64_t end = std::min<int64_t>(begin + per_step, total_patches);
      int64_t count = end - begin;
      if (pre_step) pre_step(gstep);
      double step_loss = 0, step_se = 0;
      int64_t step_values = 0;
      for (int64_t k = begin; k < end; ++k) {
        const PatchCoordinate& pc = order[(size_t)k];
        FTensor target = target_patch(video, mc, pc);
        FTensor pred = model.forward_patch(pc);
        FTensor l = loss(pred, target, cfg.loss_alpha, cfg.msssim_window);
        double lv = (double)l.item();
        if (!std::isfinite(lv))
          throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) +
                             " step " + std::to_string(gstep) + " patch (" +
                             std::to_string(pc.i) + "," + std::to_string(pc.j) + "," +
                             std::to_string(pc.t) + ")");
        scale(l, 1.0f / (float)count).backward();
        step_loss += lv / (double)count;
        const auto& pv = pred.value();
        const auto& tv = target.value();
        for (size_t e = 0; e < pv.size(); ++e) {
          double d = (double)pv[e] - (double)tv[e];
          step_se += d * d;
        }
        step_values += (int64_t)pv.size();
      }
      double lr = sched.at((int)gstep);
      opt.step(lr);
      if (log)
        log << epoch << ',' << gstep << ',' << lr << ',' << step_loss << ','
            << psnr_from_mse(step_se / (double)step_values) << '\n';
      epoch_loss += step_loss;
      epoch_se += step_se;
      epoch_values += step_values;
      ++gstep;
    }
    result.epochs.push_back({epoch, epoch_loss / (double)steps_per_epoch,
                             psnr_from_mse(epoch_se / (double)epoch_values)});
  }
  result.steps = gstep;
  if (!result.epochs.empty()) {
    result.final_loss = result.epochs.back().loss;
    result.final_psnr = result.epochs.back().psnr;
  }
  return result;
}

}  // namespace hinerv
