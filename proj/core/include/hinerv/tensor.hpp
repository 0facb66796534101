#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "hinerv/common.hpp"

namespace hinerv {

namespace detail {

// One record of the define-by-run tape. Holds the forward value, saved
// parents and a closure that accumulates gradients into them. The tape is
// rebuilt on every forward pass; `seq` preserves insertion order so that
// backward() can replay the reachable records exactly once, newest first.
template <typename T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool leaf = true;
  bool backward_ran = false;
  uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
};

template <typename T>
std::vector<T>& grad_buf(Node<T>& n);

}  // namespace detail

// Value-semantic handle over a tape node. Tensors are immutable once an op
// has produced them; only leaf tensors (parameters) may be written, and only
// between forward/backward rounds.
template <typename T>
class Tensor {
 public:
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from_vec(Shape shape, std::vector<T> data, bool requires_grad = false);
  static Tensor scalar(T value) { return from_vec({1}, {value}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return (int)node_->shape.size(); }
  int dim(int i) const { return node_->shape[(size_t)i]; }
  int64_t numel() const { return (int64_t)node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }

  const std::vector<T>& value() const { return node_->value; }
  std::vector<T>& mutable_value();  // leaf tensors only
  // Accumulated gradient; empty vector when nothing reached this tensor yet.
  const std::vector<T>& grad() const { return node_->grad; }
  T item() const;

  void set_requires_grad(bool enable);  // leaf tensors only
  void zero_grad();

  // Reverse-mode sweep from a scalar. Visits each reachable record once in
  // reverse insertion order; running it twice on the same tape is an error.
  void backward() const;

  detail::Node<T>* node() const { return node_.get(); }
  NodePtr node_ptr() const { return node_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.node_ = std::move(n);
    return t;
  }

 private:
  NodePtr node_;
};

template <typename T>
bool all_finite(const Tensor<T>& t);

// ---- elementwise ----
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T c);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <typename T> Tensor<T> abs(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> pow_scalar(const Tensor<T>& a, T p);
template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);

// ---- reductions (64-bit accumulators) ----
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// ---- feature-map ops; maps are rank-3 (H, W, C) row-major ----

// Per-position affine over the channel (last) axis. weight is (out, in).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Per-position normalization over the channel axis.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps);

// 2-d convolution over (H, W, C) with zero padding. weight is
// (out_ch, in_ch / groups, K, K); groups == in_ch gives the depth-wise case.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride, int padding, int groups);

template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T> Tensor<T> avg_pool2(const Tensor<T>& x);
template <typename T> Tensor<T> crop2d(const Tensor<T>& x, int top, int left, int out_h, int out_w);
template <typename T> Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
// out[i] = x[idx[i]] over rows of a (N, C) tensor.
template <typename T> Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx);
// x (H, W, C) * mask (H, W, 1), broadcast over channels.
template <typename T> Tensor<T> mul_mask(const Tensor<T>& x, const Tensor<T>& mask);

// ---- interpolation ----

// Center-aligned bilinear upsampling: src = (dst + 0.5) / scale - 0.5,
// clamped to the input extent.
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale);

// Windowed form used for padded-patch execution. The input is a window of a
// larger plane: its first pixel sits at absolute (abs_y, abs_x) and source
// coordinates clamp to the plane extent, not the window, so a patch and the
// full plane interpolate identically. The output is cropped to
// [crop_y, crop_y + out_h) x [crop_x, crop_x + out_w) in upsampled
// coordinates before it is materialized.
struct UpsampleWindow {
  int crop_y = 0, crop_x = 0;
  int out_h = 0, out_w = 0;        // 0 = full upsampled size
  int64_t abs_y = 0, abs_x = 0;
  int extent_h = 0, extent_w = 0;  // 0 = input size at (abs 0,0)
};
template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, int scale, const UpsampleWindow& win);

struct Coord3 {
  double t = 0, y = 0, x = 0;  // continuous grid-space coordinates
};

// Samples a (T, H, W, C) grid at each coordinate; out-of-range coordinates
// clamp to the boundary. Returns (N, C); differentiable w.r.t. the grid.
template <typename T>
Tensor<T> trilinear_sample(const Tensor<T>& grid, const std::vector<Coord3>& coords);

}  // namespace hinerv
