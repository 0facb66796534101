#pragma once

#include "hinerv/tensor.hpp"

namespace hinerv {

// 10*log10(peak^2 / mse), capped at 100 dB; identical inputs report the cap.
double psnr_from_mse(double mse, double peak = 1.0);
double mse(const std::vector<float>& a, const std::vector<float>& b);

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double peak = 1.0);

// Largest usable scale count for an h x w image: window * 2^(levels-1) must
// fit the shorter side, at most the standard five scales.
int ms_ssim_levels(int h, int w, int window);

// Multi-scale SSIM over an (H, W, C) map pair in [0, 1], gaussian window
// (sigma 1.5), per-scale contrast-structure terms with luminance applied at
// the coarsest scale, dyadic average-pool downsampling between scales.
// Differentiable through both inputs; scale weights renormalize when fewer
// than five scales fit.
template <typename T>
Tensor<T> ms_ssim(const Tensor<T>& pred, const Tensor<T>& target, int window = 5);

// alpha * L1 + (1 - alpha) * (1 - MS-SSIM).
template <typename T>
Tensor<T> loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha, int window = 5);

}  // namespace hinerv
