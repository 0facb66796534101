#include "hinerv/compress.hpp"

#include <algorithm>
#include <cmath>

namespace hinerv {

PruneMask PruneMask::empty_for(const HiNeRVModel& model) {
  PruneMask m;
  m.bits.resize(model.params().size());
  return m;
}

int64_t PruneMask::pruned_count() const {
  int64_t n = 0;
  for (const auto& b : bits)
    for (uint8_t v : b) n += v != 0;
  return n;
}

int64_t PruneMask::prunable_count() const {
  int64_t n = 0;
  for (const auto& b : bits) n += (int64_t)b.size();
  return n;
}

double PruneMask::sparsity() const {
  int64_t total = prunable_count();
  return total == 0 ? 0.0 : (double)pruned_count() / (double)total;
}

double prune_score(float w, int64_t tensor_elems, double lambda) {
  return (double)std::fabs(w) / std::pow((double)tensor_elems, lambda);
}

void prune(HiNeRVModel& model, double ratio, PruneMask& mask, double lambda) {
  if (ratio < 0.0 || ratio >= 1.0)
    throw UsageError("prune: ratio must be in [0, 1), got " + std::to_string(ratio));
  auto& params = model.params();
  if (mask.bits.empty()) mask = PruneMask::empty_for(model);
  if (mask.bits.size() != params.size())
    throw ConfigError("prune: mask does not match the parameter list");
  if (ratio == 0.0) return;

  struct Candidate {
    double score;
    uint32_t param;
    uint32_t elem;
  };
  std::vector<Candidate> cands;
  int64_t unpruned = 0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].prunable) continue;
    auto& bits = mask.bits[i];
    const auto& w = params[i].tensor.value();
    if (bits.empty()) bits.assign(w.size(), 0);
    for (size_t e = 0; e < w.size(); ++e) {
      if (bits[e]) continue;
      cands.push_back({prune_score(w[e], (int64_t)w.size(), lambda), (uint32_t)i, (uint32_t)e});
      ++unpruned;
    }
  }
  int64_t target = (int64_t)std::floor(ratio * (double)unpruned);
  if (target <= 0) return;
  std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.param != b.param) return a.param < b.param;
    return a.elem < b.elem;
  });
  for (int64_t k = 0; k < target; ++k) {
    const Candidate& c = cands[(size_t)k];
    mask.bits[c.param][c.elem] = 1;
    params[c.param].tensor.mutable_value()[c.elem] = 0.0f;
  }
}

QuantSpec make_quant_spec(const std::vector<float>& w, int bits) {
  if (bits < 2 || bits > 8)
    throw UsageError("quantization bitwidth must be in [2, 8], got " + std::to_string(bits));
  float maxabs = 0.0f;
  for (float v : w) maxabs = std::max(maxabs, std::fabs(v));
  QuantSpec spec;
  spec.bits = (uint8_t)bits;
  spec.scale = maxabs > 0.0f ? maxabs / (float)spec.qmax() : 1.0f;
  return spec;
}

std::vector<int32_t> quantize_tensor(const std::vector<float>& w, const QuantSpec& spec) {
  std::vector<int32_t> q(w.size());
  int32_t qmax = spec.qmax();
  double inv = 1.0 / (double)spec.scale;
  for (size_t i = 0; i < w.size(); ++i) {
    long long r = std::llround((double)w[i] * inv);  // rounds half away from zero
    q[i] = (int32_t)std::clamp<long long>(r, -qmax, qmax);
  }
  return q;
}

std::vector<float> dequantize_tensor(const std::vector<int32_t>& q, const QuantSpec& spec) {
  std::vector<float> w(q.size());
  for (size_t i = 0; i < q.size(); ++i) w[i] = (float)((double)q[i] * (double)spec.scale);
  return w;
}

FTensor quant_noise_forward(const FTensor& w, const QuantSpec& spec, double noise_ratio,
                            Rng& rng) {
  if (noise_ratio < 0.0 || noise_ratio > 1.0)
    throw UsageError("quant_noise: noise ratio must be in [0, 1]");
  if (noise_ratio == 0.0) return w;
  std::vector<int32_t> q = quantize_tensor(w.value(), spec);
  std::vector<float> dq = dequantize_tensor(q, spec);
  size_t n = w.value().size();
  std::vector<float> keep(n);
  std::vector<float> replaced(n);
  for (size_t i = 0; i < n; ++i) {
    bool noise = rng.bernoulli(noise_ratio);
    keep[i] = noise ? 0.0f : 1.0f;
    replaced[i] = noise ? dq[i] : 0.0f;
  }
  FTensor keep_t = FTensor::from_vec(w.shape(), std::move(keep));
  FTensor replaced_t = FTensor::from_vec(w.shape(), std::move(replaced));
  return add(mul(w, keep_t), replaced_t);
}

void quantize_model(HiNeRVModel& model, int bits) {
  for (auto& p : model.params()) {
    QuantSpec spec = make_quant_spec(p.tensor.value(), bits);
    auto dq = dequantize_tensor(quantize_tensor(p.tensor.value(), spec), spec);
    p.tensor.mutable_value() = std::move(dq);
  }
}

TrainResult qat_finetune(HiNeRVModel& model, const VideoClip& video, TrainConfig cfg, int epochs,
                         int bits, double noise_ratio, const PruneMask* mask) {
  cfg.epochs = epochs;
  cfg.base_lr *= 0.1;  // fine-tune at 10% of the training rate
  if (epochs <= 0) return {};

  std::vector<QuantSpec> specs(model.params().size());
  Rng noise_rng = Rng::derive(cfg.seed, 0x514e);
  auto refresh = [&model, &specs, bits](int64_t) {
    for (size_t i = 0; i < model.params().size(); ++i)
      specs[i] = make_quant_spec(model.params()[i].tensor.value(), bits);
  };
  model.weight_transform = [&specs, &noise_rng, noise_ratio](int idx, const FTensor& w) {
    return quant_noise_forward(w, specs[(size_t)idx], noise_ratio, noise_rng);
  };
  TrainResult res;
  try {
    res = train(model, video, cfg, mask ? &mask->bits : nullptr, refresh);
  } catch (...) {
    model.weight_transform = nullptr;
    throw;
  }
  model.weight_transform = nullptr;
  return res;
}

}  // namespace hinerv
