#pragma once

#include <vector>

#include "hinerv/rng.hpp"
#include "hinerv/tensor.hpp"

namespace hinerv {

using FTensor = Tensor<float>;

// Multi-resolution temporal grid for the base encoding: level l has shape
// floor(t_grid / 2^l) x h_grid x w_grid x (c_grid * 2^l).
struct BaseGridConfig {
  int t_grid = 0;
  int h_grid = 0;
  int w_grid = 0;
  int c_grid = 0;
  int levels = 1;

  Shape level_shape(int level) const;
  int channels_total() const;  // c_grid * (2^levels - 1)
  void validate() const;
};

// Temporal local grids attached to each upsampling block: level l at a block
// with factor `scale` and per-block channel base `channels0` has shape
// floor(t_local / 2^l) x scale x scale x (channels0 * 2^l).
struct LocalGridConfig {
  int t_local = 0;
  int c_local = 0;
  int levels = 1;

  Shape level_shape(int level, int scale, int channels0) const;
  static int channels_total(int channels0, int levels);
  void validate() const;
};

// Learned grid levels, ascending level order, all trainable leaves.
struct FeatureGridSet {
  std::vector<FTensor> levels;

  int channels_total() const;
  bool empty() const { return levels.empty(); }
};

FeatureGridSet make_base_grids(const BaseGridConfig& cfg, Rng& rng);
FeatureGridSet make_local_grids(const LocalGridConfig& cfg, int scale, int channels0, Rng& rng);

// Pixel index p of an axis with extent `extent` mapped to the continuous
// coordinate of a grid axis with `grid_n` nodes: node-aligned endpoints,
// p * (grid_n - 1) / (extent - 1), grid midpoint for degenerate axes.
double grid_coord(double p, int extent, int grid_n);

// (i, j) patch indices and in-patch pixel offsets to frame-space pixels.
inline int frame_coord(int patch_index, int base_patch, int offset) {
  return patch_index * base_patch + offset;
}
// Local coordinate in [0, scale); true modulus so padded (negative)
// coordinates stay well-defined.
inline int local_coord(int64_t frame_coord, int scale) {
  int64_t m = frame_coord % scale;
  return (int)(m < 0 ? m + scale : m);
}

// Axis-aligned pixel window used by the encodings: `h x w` pixels whose
// top-left pixel has absolute coordinates (y0, x0) at the current stage.
struct PixelRect {
  int64_t y0 = 0, x0 = 0;
  int h = 0, w = 0;
};

// Base encoding over a window of base-resolution frame pixels at frame t.
// Every pixel samples each grid level trilinearly at the normalized
// (t, v_frame, u_frame) position; levels concatenate in ascending order.
FTensor base_encoding(const FeatureGridSet& grids, const BaseGridConfig& cfg,
                      const PixelRect& rect, int t, int base_h, int base_w, int frames);

// Hierarchical encoding over a window of stage-n pixels: spatial sampling
// uses the local coordinates (u mod scale, v mod scale), the temporal axis
// interpolates at the normalized frame index.
FTensor hierarchical_encoding(const FeatureGridSet& grids, const PixelRect& rect, int t,
                              int scale, int frames);

}  // namespace hinerv
