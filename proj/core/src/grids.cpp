#include "hinerv/grids.hpp"

#include <cmath>
#include <string>

namespace hinerv {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

FTensor init_grid(const Shape& shape, Rng& rng) {
  int64_t n = shape_numel(shape);
  std::vector<float> data((size_t)n);
  for (auto& v : data) v = (float)rng.uniform(-1e-2, 1e-2);
  return FTensor::from_vec(shape, std::move(data), /*requires_grad=*/true);
}

}  // namespace

Shape BaseGridConfig::level_shape(int level) const {
  return {t_grid >> level, h_grid, w_grid, c_grid << level};
}

int BaseGridConfig::channels_total() const { return c_grid * ((1 << levels) - 1); }

void BaseGridConfig::validate() const {
  require(t_grid >= 1 && h_grid >= 1 && w_grid >= 1 && c_grid >= 1 && levels >= 1,
          "base grid config must be positive");
  require((t_grid >> (levels - 1)) >= 1,
          "base grid: " + std::to_string(levels) + " levels need t_grid >= " +
              std::to_string(1 << (levels - 1)) + ", got " + std::to_string(t_grid));
}

Shape LocalGridConfig::level_shape(int level, int scale, int channels0) const {
  return {t_local >> level, scale, scale, channels0 << level};
}

int LocalGridConfig::channels_total(int channels0, int levels) {
  return channels0 * ((1 << levels) - 1);
}

void LocalGridConfig::validate() const {
  require(t_local >= 1 && c_local >= 0 && levels >= 1, "local grid config must be positive");
  require((t_local >> (levels - 1)) >= 1,
          "local grid: " + std::to_string(levels) + " levels need t_local >= " +
              std::to_string(1 << (levels - 1)) + ", got " + std::to_string(t_local));
}

int FeatureGridSet::channels_total() const {
  int c = 0;
  for (const auto& g : levels) c += g.dim(3);
  return c;
}

FeatureGridSet make_base_grids(const BaseGridConfig& cfg, Rng& rng) {
  cfg.validate();
  FeatureGridSet set;
  for (int l = 0; l < cfg.levels; ++l) set.levels.push_back(init_grid(cfg.level_shape(l), rng));
  return set;
}

FeatureGridSet make_local_grids(const LocalGridConfig& cfg, int scale, int channels0, Rng& rng) {
  cfg.validate();
  FeatureGridSet set;
  if (channels0 <= 0) return set;  // block carries no encoding
  for (int l = 0; l < cfg.levels; ++l)
    set.levels.push_back(init_grid(cfg.level_shape(l, scale, channels0), rng));
  return set;
}

double grid_coord(double p, int extent, int grid_n) {
  if (extent <= 1 || grid_n <= 1) return 0.5 * (double)(grid_n - 1);
  return p * (double)(grid_n - 1) / (double)(extent - 1);
}

FTensor base_encoding(const FeatureGridSet& grids, const BaseGridConfig& cfg,
                      const PixelRect& rect, int t, int base_h, int base_w, int frames) {
  require(!grids.empty(), "base_encoding: grid set is empty");
  std::vector<FTensor> parts;
  parts.reserve(grids.levels.size());
  for (const auto& level : grids.levels) {
    int tg = level.dim(0), hg = level.dim(1), wg = level.dim(2);
    double tc = grid_coord((double)t, frames, tg);
    std::vector<Coord3> coords;
    coords.reserve((size_t)rect.h * rect.w);
    for (int y = 0; y < rect.h; ++y) {
      double yc = grid_coord((double)(rect.y0 + y), base_h, hg);
      for (int x = 0; x < rect.w; ++x)
        coords.push_back({tc, yc, grid_coord((double)(rect.x0 + x), base_w, wg)});
    }
    parts.push_back(reshape(trilinear_sample(level, coords), {rect.h, rect.w, level.dim(3)}));
  }
  (void)cfg;
  return parts.size() == 1 ? parts[0] : concat_channels(parts);
}

FTensor hierarchical_encoding(const FeatureGridSet& grids, const PixelRect& rect, int t,
                              int scale, int frames) {
  require(!grids.empty(), "hierarchical_encoding: grid set is empty");
  require(scale >= 1, "hierarchical_encoding: scale must be >= 1");

  // Pixels congruent mod scale share one sample; sample each distinct local
  // coordinate once and broadcast by row gather.
  std::vector<int> index((size_t)rect.h * rect.w);
  for (int y = 0; y < rect.h; ++y) {
    int vl = local_coord(rect.y0 + y, scale);
    for (int x = 0; x < rect.w; ++x)
      index[(size_t)y * rect.w + x] = vl * scale + local_coord(rect.x0 + x, scale);
  }

  std::vector<FTensor> parts;
  parts.reserve(grids.levels.size());
  for (const auto& level : grids.levels) {
    int tg = level.dim(0);
    double tc = grid_coord((double)t, frames, tg);
    std::vector<Coord3> coords;
    coords.reserve((size_t)scale * scale);
    for (int vl = 0; vl < scale; ++vl)
      for (int ul = 0; ul < scale; ++ul)
        coords.push_back({tc, grid_coord((double)vl, scale, level.dim(1)),
                          grid_coord((double)ul, scale, level.dim(2))});
    FTensor samples = trilinear_sample(level, coords);
    parts.push_back(reshape(gather_rows(samples, index), {rect.h, rect.w, level.dim(3)}));
  }
  return parts.size() == 1 ? parts[0] : concat_channels(parts);
}

}  // namespace hinerv
