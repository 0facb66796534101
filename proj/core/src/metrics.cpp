#include "hinerv/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace hinerv {

double psnr_from_mse(double mse, double peak) {
  if (mse <= 0.0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(peak * peak / mse));
}

double mse(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw ConfigError("mse: length mismatch");
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = (double)a[i] - (double)b[i];
    acc += d * d;
  }
  return a.empty() ? 0.0 : acc / (double)a.size();
}

template <typename T>
double psnr(const Tensor<T>& pred, const Tensor<T>& target, double peak) {
  if (pred.shape() != target.shape())
    throw ConfigError("psnr: shape mismatch " + shape_str(pred.shape()) + " vs " +
                      shape_str(target.shape()));
  const auto& a = pred.value();
  const auto& b = target.value();
  double acc = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = (double)a[i] - (double)b[i];
    acc += d * d;
  }
  return psnr_from_mse(a.empty() ? 0.0 : acc / (double)a.size(), peak);
}
template double psnr(const Tensor<float>&, const Tensor<float>&, double);
template double psnr(const Tensor<double>&, const Tensor<double>&, double);

int ms_ssim_levels(int h, int w, int window) {
  int side = std::min(h, w);
  int levels = 0;
  while (levels < 5 && window * (1 << levels) <= side) ++levels;
  return std::max(levels, 0);
}

namespace {

const double kScaleWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

template <typename T>
Tensor<T> gaussian_window(int window, int channels) {
  std::vector<double> g((size_t)window);
  double sigma = 1.5, sum = 0;
  for (int i = 0; i < window; ++i) {
    double d = i - 0.5 * (window - 1);
    g[(size_t)i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += g[(size_t)i];
  }
  for (auto& v : g) v /= sum;
  std::vector<T> k((size_t)channels * window * window);
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < window; ++y)
      for (int x = 0; x < window; ++x)
        k[((size_t)c * window + y) * window + x] = (T)(g[(size_t)y] * g[(size_t)x]);
  return Tensor<T>::from_vec({channels, 1, window, window}, std::move(k));
}

template <typename T>
struct SsimTerms {
  Tensor<T> ssim;  // mean of the luminance * cs map
  Tensor<T> cs;    // mean of the cs map
};

// Single-scale SSIM statistics with a valid (unpadded) window convolution.
template <typename T>
SsimTerms<T> ssim_scale(const Tensor<T>& x, const Tensor<T>& y, const Tensor<T>& kernel,
                        const Tensor<T>& zero_bias) {
  const T c1 = (T)1e-4;  // (0.01 * peak)^2
  const T c2 = (T)9e-4;  // (0.03 * peak)^2
  int ch = x.dim(2);
  auto blur = [&](const Tensor<T>& v) { return conv2d(v, kernel, zero_bias, 1, 0, ch); };
  Tensor<T> mu_x = blur(x);
  Tensor<T> mu_y = blur(y);
  Tensor<T> mu_xx = mul(mu_x, mu_x);
  Tensor<T> mu_yy = mul(mu_y, mu_y);
  Tensor<T> mu_xy = mul(mu_x, mu_y);
  Tensor<T> sxx = sub(blur(mul(x, x)), mu_xx);
  Tensor<T> syy = sub(blur(mul(y, y)), mu_yy);
  Tensor<T> sxy = sub(blur(mul(x, y)), mu_xy);
  Tensor<T> cs_map = div(add_scalar(scale(sxy, (T)2), c2), add_scalar(add(sxx, syy), c2));
  Tensor<T> l_map = div(add_scalar(scale(mu_xy, (T)2), c1), add_scalar(add(mu_xx, mu_yy), c1));
  return {mean(mul(l_map, cs_map)), mean(cs_map)};
}

}  // namespace

template <typename T>
Tensor<T> ms_ssim(const Tensor<T>& pred, const Tensor<T>& target, int window) {
  if (pred.rank() != 3 || target.rank() != 3 || pred.shape() != target.shape())
    throw ConfigError("ms_ssim: inputs must be matching (H, W, C) maps, got " +
                      shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  if (window < 3 || window % 2 == 0) throw ConfigError("ms_ssim: window must be odd and >= 3");
  int h = pred.dim(0), w = pred.dim(1), ch = pred.dim(2);
  int levels = ms_ssim_levels(h, w, window);
  if (levels < 1)
    throw ConfigError("ms_ssim: image " + shape_str(pred.shape()) +
                      " smaller than one " + std::to_string(window) + "x" +
                      std::to_string(window) + " window");

  double wsum = 0;
  for (int l = 0; l < levels; ++l) wsum += kScaleWeights[l];

  Tensor<T> kernel = gaussian_window<T>(window, ch);
  Tensor<T> zero_bias = Tensor<T>::zeros({ch});
  Tensor<T> x = pred, y = target;
  Tensor<T> result = Tensor<T>::scalar((T)1);
  for (int l = 0; l < levels; ++l) {
    SsimTerms<T> terms = ssim_scale(x, y, kernel, zero_bias);
    T weight = (T)(kScaleWeights[l] / wsum);
    if (l + 1 < levels) {
      result = mul(result, pow_scalar(relu(terms.cs), weight));
      x = avg_pool2(x);
      y = avg_pool2(y);
    } else {
      result = mul(result, pow_scalar(relu(terms.ssim), weight));
    }
  }
  return result;
}
template Tensor<float> ms_ssim(const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> ms_ssim(const Tensor<double>&, const Tensor<double>&, int);

template <typename T>
Tensor<T> loss(const Tensor<T>& pred, const Tensor<T>& target, T alpha, int window) {
  if (pred.shape() != target.shape())
    throw ConfigError("loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                      shape_str(target.shape()));
  if (alpha < (T)0 || alpha > (T)1) throw ConfigError("loss: alpha must be in [0, 1]");
  Tensor<T> l1 = mean(abs(sub(pred, target)));
  if (alpha == (T)1) return l1;
  Tensor<T> dssim = add_scalar(scale(ms_ssim(pred, target, window), (T)-1), (T)1);
  if (alpha == (T)0) return dssim;
  return add(scale(l1, alpha), scale(dssim, (T)1 - alpha));
}
template Tensor<float> loss(const Tensor<float>&, const Tensor<float>&, float, int);
template Tensor<double> loss(const Tensor<double>&, const Tensor<double>&, double, int);

}  // namespace hinerv
