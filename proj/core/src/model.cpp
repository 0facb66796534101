#include "hinerv/model.hpp"

#include <cmath>

namespace hinerv {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

int ceil_div(int a, int b) { return (a + b - 1) / b; }

int floor_scaled(int base, float r, int power) {
  double v = (double)base / std::pow((double)r, (double)power);
  return (int)std::floor(v + 1e-9);
}

constexpr float kNormEps = 1e-6f;

}  // namespace

int ModelConfig::upsample_total() const {
  int s = 1;
  for (int x : scales) s *= x;
  return s;
}
int ModelConfig::base_patch() const { return patch_size / upsample_total(); }
int ModelConfig::base_h() const { return frame_h / upsample_total(); }
int ModelConfig::base_w() const { return frame_w / upsample_total(); }
int ModelConfig::stage_h(int n) const {
  int s = base_h();
  for (int k = 0; k < n; ++k) s *= scales[(size_t)k];
  return s;
}
int ModelConfig::stage_w(int n) const {
  int s = base_w();
  for (int k = 0; k < n; ++k) s *= scales[(size_t)k];
  return s;
}
int ModelConfig::stage_size(int n) const {
  int s = base_patch();
  for (int k = 0; k < n; ++k) s *= scales[(size_t)k];
  return s;
}
int ModelConfig::width(int n) const {
  if (n <= 1) return base_width;
  return floor_scaled(base_width, reduction, n - 1);
}
int ModelConfig::expansion(int n) const { return n == blocks ? 1 : 4; }
int ModelConfig::local_channels(int n) const {
  return floor_scaled(local_grid.c_local, reduction, n - 1);
}
int ModelConfig::local_t() const { return local_grid.t_local > 0 ? local_grid.t_local : frames; }
int ModelConfig::patches_x() const { return frame_w / patch_size; }
int ModelConfig::patches_y() const { return frame_h / patch_size; }

void ModelConfig::validate() const {
  require(blocks >= 1, "config: need at least one block");
  require((int)depths.size() == blocks && (int)scales.size() == blocks,
          "config: depths/scales must list one entry per block");
  for (int d : depths) require(d >= 1, "config: block depth must be >= 1");
  for (int s : scales) require(s >= 1, "config: block scale must be >= 1");
  require(frame_h >= 1 && frame_w >= 1 && frames >= 1, "config: invalid video dims");
  require(patch_size >= 1, "config: patch size must be >= 1");
  int total = upsample_total();
  require(patch_size % total == 0, "config: patch size " + std::to_string(patch_size) +
                                       " not divisible by total upsampling " +
                                       std::to_string(total));
  require(frame_h % patch_size == 0 && frame_w % patch_size == 0,
          "config: frame " + std::to_string(frame_h) + "x" + std::to_string(frame_w) +
              " not tiled by patch size " + std::to_string(patch_size));
  require(kernel >= 1 && kernel % 2 == 1, "config: kernel must be odd");
  require(base_width >= 1, "config: base width must be >= 1");
  require(reduction >= 1.0f, "config: reduction must be >= 1");
  require(out_channels >= 1, "config: output channels must be >= 1");
  for (int n = 1; n <= blocks; ++n)
    require(width(n) >= 1, "config: block " + std::to_string(n) + " width reduces to zero");
  base_grid.validate();
  if (hierarchical) {
    LocalGridConfig lg = local_grid;
    lg.t_local = local_t();
    lg.validate();
  }
  require(paddings.empty() || (int)paddings.size() == blocks + 1,
          "config: paddings must have one entry for the stem plus one per block");
  for (int p : paddings) require(p >= 0, "config: paddings must be non-negative");
}

int conv_padding_need(int kernel) { return ceil_div(kernel - 1, 2); }

std::vector<int> padding_schedule(const ModelConfig& cfg) {
  cfg.validate();
  int c = conv_padding_need(cfg.kernel);
  int n = cfg.blocks;
  // Pollution rings: the stem conv, then D_n convs per block.
  std::vector<int> ring((size_t)n + 1);
  ring[0] = c;
  for (int b = 1; b <= n; ++b) ring[(size_t)b] = cfg.depths[(size_t)b - 1] * c;
  std::vector<int> pads((size_t)n + 1);
  pads[(size_t)n] = ring[(size_t)n];
  for (int b = n; b >= 1; --b) {
    int s = cfg.scales[(size_t)b - 1];
    int margin = s * ring[(size_t)b - 1] + s / 2;  // interpolation support
    pads[(size_t)b - 1] = ceil_div(pads[(size_t)b] + margin, s);
  }
  return pads;
}

void validate_padding_schedule(const ModelConfig& cfg) {
  require((int)cfg.paddings.size() == cfg.blocks + 1,
          "padding schedule: expected " + std::to_string(cfg.blocks + 1) + " entries");
  const auto& pads = cfg.paddings;
  int c = conv_padding_need(cfg.kernel);
  require(cfg.base_patch() + 2 * pads[0] >= cfg.kernel,
          "padding schedule: stem footprint smaller than the kernel; increase the patch size");
  int r = c;  // invalid margin, measured inward from the footprint edge
  for (int b = 1; b <= cfg.blocks; ++b) {
    int s = cfg.scales[(size_t)b - 1];
    int off = s * pads[(size_t)b - 1] - pads[(size_t)b];
    require(off >= 0, "padding schedule: stage " + std::to_string(b) +
                          " crop offset negative; padding " + std::to_string(pads[(size_t)b]) +
                          " exceeds upsampled support");
    require(2 * off + 1 >= s, "padding schedule: stage " + std::to_string(b) +
                                  " interpolation reads outside the footprint");
    int up = s * r + s / 2;
    r = std::max(0, up - off) + cfg.depths[(size_t)b - 1] * c;
  }
  require(r <= pads[(size_t)cfg.blocks],
          "padding schedule: " + std::to_string(r) + " polluted pixels reach the final crop (" +
              std::to_string(pads[(size_t)cfg.blocks]) + " available)");
}

// ---- model ----

int HiNeRVModel::push_param(const std::string& name, FTensor t, bool prunable) {
  params_.push_back({name, std::move(t), prunable});
  return (int)params_.size() - 1;
}

namespace {

FTensor init_weight(Shape shape, Rng& rng) {
  std::vector<float> v((size_t)shape_numel(shape));
  for (auto& x : v) x = (float)rng.truncated_normal(0.02);
  return FTensor::from_vec(std::move(shape), std::move(v), true);
}

FTensor init_zeros(Shape shape) { return FTensor::zeros(std::move(shape), true); }
FTensor init_ones(Shape shape) { return FTensor::full(std::move(shape), 1.0f, true); }

}  // namespace

HiNeRVModel::HiNeRVModel(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
  cfg_.validate();
  pad_ = cfg_.paddings.empty() ? padding_schedule(cfg_) : cfg_.paddings;
  {
    ModelConfig audited = cfg_;
    audited.paddings = pad_;
    validate_padding_schedule(audited);
  }
  cfg_.paddings = pad_;

  int k = cfg_.kernel;

  base_grids_ = make_base_grids(cfg_.base_grid, rng);
  for (size_t l = 0; l < base_grids_.levels.size(); ++l)
    push_param("grid.base.l" + std::to_string(l), base_grids_.levels[l], false);

  int c_base = cfg_.base_grid.channels_total();
  stem_w_ = push_param("stem.weight", init_weight({cfg_.base_width, c_base, k, k}, rng), true);
  stem_b_ = push_param("stem.bias", init_zeros({cfg_.base_width}));

  for (int n = 1; n <= cfg_.blocks; ++n) {
    Block b;
    std::string prefix = "block" + std::to_string(n) + ".";
    int c_in_block = cfg_.width(n - 1);
    int c_out = cfg_.width(n);
    b.norm_g = push_param(prefix + "norm.gamma", init_ones({c_in_block}));
    b.norm_b = push_param(prefix + "norm.beta", init_zeros({c_in_block}));

    int local_c = cfg_.hierarchical ? cfg_.local_channels(n) : 0;
    if (local_c > 0) {
      int enc_channels = LocalGridConfig::channels_total(local_c, cfg_.local_grid.levels);
      b.enc_w = push_param(prefix + "enc.weight", init_weight({c_in_block, enc_channels}, rng),
                           true);
      b.enc_b = push_param(prefix + "enc.bias", init_zeros({c_in_block}));
      LocalGridConfig lg = cfg_.local_grid;
      lg.t_local = cfg_.local_t();
      b.grids = make_local_grids(lg, cfg_.scales[(size_t)n - 1], local_c, rng);
      b.grid_first = (int)params_.size();
      for (size_t l = 0; l < b.grids.levels.size(); ++l)
        push_param(prefix + "grid.l" + std::to_string(l), b.grids.levels[l], false);
    }

    for (int d = 0; d < cfg_.depths[(size_t)n - 1]; ++d) {
      Layer L;
      L.c_in = d == 0 ? c_in_block : c_out;
      L.c_out = c_out;
      L.hidden = cfg_.expansion(n) * c_out;
      std::string lp = prefix + "layer" + std::to_string(d) + ".";
      L.dw_w = push_param(lp + "dw.weight", init_weight({L.c_in, 1, k, k}, rng), true);
      L.dw_b = push_param(lp + "dw.bias", init_zeros({L.c_in}));
      L.ln_g = push_param(lp + "norm.gamma", init_ones({L.c_in}));
      L.ln_b = push_param(lp + "norm.beta", init_zeros({L.c_in}));
      L.pw1_w = push_param(lp + "pw1.weight", init_weight({L.hidden, L.c_in}, rng), true);
      L.pw1_b = push_param(lp + "pw1.bias", init_zeros({L.hidden}));
      L.pw2_w = push_param(lp + "pw2.weight", init_weight({L.c_out, L.hidden}, rng), true);
      L.pw2_b = push_param(lp + "pw2.bias", init_zeros({L.c_out}));
      b.layers.push_back(L);
    }
    blocks_.push_back(std::move(b));
  }

  head_w_ = push_param("head.weight", init_weight({cfg_.out_channels, cfg_.width(cfg_.blocks)}, rng),
                       true);
  head_b_ = push_param("head.bias", init_zeros({cfg_.out_channels}));
}

int64_t HiNeRVModel::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

FTensor HiNeRVModel::p(int idx) const {
  const FTensor& t = params_[(size_t)idx].tensor;
  return weight_transform ? weight_transform(idx, t) : t;
}

namespace {

FTensor frame_mask(int64_t oy, int64_t ox, int h, int w, int ext_h, int ext_w) {
  std::vector<float> m((size_t)h * w);
  for (int y = 0; y < h; ++y) {
    bool yin = oy + y >= 0 && oy + y < ext_h;
    for (int x = 0; x < w; ++x)
      m[(size_t)y * w + x] = yin && ox + x >= 0 && ox + x < ext_w ? 1.0f : 0.0f;
  }
  return FTensor::from_vec({h, w, 1}, std::move(m));
}

}  // namespace

FTensor HiNeRVModel::run(int i, int j, int t, bool padded) const {
  const ModelConfig& c = cfg_;
  int kpad = conv_padding_need(c.kernel);

  int64_t oy, ox;
  int h, w;
  if (padded) {
    int m0 = c.base_patch();
    h = w = m0 + 2 * pad_[0];
    oy = (int64_t)j * m0 - pad_[0];
    ox = (int64_t)i * m0 - pad_[0];
  } else {
    h = c.base_h();
    w = c.base_w();
    oy = ox = 0;
  }
  int ext_h = c.base_h(), ext_w = c.base_w();

  auto effective_grids = [&](const FeatureGridSet& set, int first_idx) {
    FeatureGridSet eff;
    for (size_t l = 0; l < set.levels.size(); ++l) eff.levels.push_back(p(first_idx + (int)l));
    return eff;
  };
  // Base grid params occupy indices [0, levels).
  FeatureGridSet base_eff = effective_grids(base_grids_, 0);

  FTensor x = base_encoding(base_eff, c.base_grid, {oy, ox, h, w}, t, ext_h, ext_w, c.frames);
  bool needs_mask = padded && (oy < 0 || ox < 0 || oy + h > ext_h || ox + w > ext_w);
  FTensor mask;
  if (needs_mask) {
    mask = frame_mask(oy, ox, h, w, ext_h, ext_w);
    x = mul_mask(x, mask);
  }
  x = conv2d(x, p(stem_w_), p(stem_b_), 1, kpad, 1);

  for (int n = 1; n <= c.blocks; ++n) {
    const Block& b = blocks_[(size_t)n - 1];
    int s = c.scales[(size_t)n - 1];

    x = layer_norm(x, p(b.norm_g), p(b.norm_b), kNormEps);

    UpsampleWindow win;
    win.abs_y = oy;
    win.abs_x = ox;
    win.extent_h = ext_h;
    win.extent_w = ext_w;
    int64_t noy, nox;
    int nh, nw;
    if (padded) {
      int mn = c.stage_size(n);
      nh = nw = mn + 2 * pad_[(size_t)n];
      noy = (int64_t)j * mn - pad_[(size_t)n];
      nox = (int64_t)i * mn - pad_[(size_t)n];
      win.crop_y = (int)(noy - s * oy);
      win.crop_x = (int)(nox - s * ox);
      win.out_h = nh;
      win.out_w = nw;
    } else {
      nh = h * s;
      nw = w * s;
      noy = nox = 0;
    }
    x = bilinear_upsample(x, s, win);
    oy = noy;
    ox = nox;
    h = nh;
    w = nw;
    ext_h = c.stage_h(n);
    ext_w = c.stage_w(n);

    if (!b.grids.empty()) {
      FeatureGridSet local_eff = effective_grids(b.grids, b.grid_first);
      FTensor enc = hierarchical_encoding(local_eff, {oy, ox, h, w}, t, s, c.frames);
      x = add(x, linear(enc, p(b.enc_w), p(b.enc_b)));
    }

    needs_mask = padded && (oy < 0 || ox < 0 || oy + h > ext_h || ox + w > ext_w);
    if (needs_mask) mask = frame_mask(oy, ox, h, w, ext_h, ext_w);

    for (const Layer& L : b.layers) {
      FTensor inp = needs_mask ? mul_mask(x, mask) : x;
      FTensor y = conv2d(inp, p(L.dw_w), p(L.dw_b), 1, kpad, L.c_in);
      y = layer_norm(y, p(L.ln_g), p(L.ln_b), kNormEps);
      y = linear(y, p(L.pw1_w), p(L.pw1_b));
      y = gelu(y);
      y = linear(y, p(L.pw2_w), p(L.pw2_b));
      x = L.c_in == L.c_out ? add(inp, y) : y;
    }
  }

  x = linear(x, p(head_w_), p(head_b_));
  x = sigmoid(x);
  if (padded && pad_[(size_t)c.blocks] > 0) {
    int pn = pad_[(size_t)c.blocks];
    x = crop2d(x, pn, pn, c.patch_size, c.patch_size);
  }
  return x;
}

FTensor HiNeRVModel::forward_patch(const PatchCoordinate& pc) const {
  if (pc.i < 0 || pc.i >= cfg_.patches_x() || pc.j < 0 || pc.j >= cfg_.patches_y() || pc.t < 0 ||
      pc.t >= cfg_.frames)
    throw UsageError("patch (" + std::to_string(pc.i) + "," + std::to_string(pc.j) + "," +
                     std::to_string(pc.t) + ") outside the " + std::to_string(cfg_.patches_x()) +
                     "x" + std::to_string(cfg_.patches_y()) + "x" + std::to_string(cfg_.frames) +
                     " partition");
  return run(pc.i, pc.j, pc.t, /*padded=*/true);
}

FTensor HiNeRVModel::forward_frame(int t) const {
  if (t < 0 || t >= cfg_.frames)
    throw UsageError("frame " + std::to_string(t) + " outside [0, " + std::to_string(cfg_.frames) +
                     ")");
  return run(0, 0, t, /*padded=*/false);
}

}  // namespace hinerv
