#include "hinerv/codec.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "hinerv/metrics.hpp"

namespace hinerv {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
auto stage(const char* name, F&& fn) {
  try {
    return fn();
  } catch (UsageError& e) {
    throw UsageError("stage " + std::string(name) + ": " + e.what());
  } catch (ConfigError& e) {
    throw ConfigError("stage " + std::string(name) + ": " + e.what());
  } catch (IoError& e) {
    throw IoError("stage " + std::string(name) + ": " + e.what());
  } catch (CorruptError& e) {
    throw CorruptError("stage " + std::string(name) + ": " + e.what());
  } catch (NumericError& e) {
    throw NumericError("stage " + std::string(name) + ": " + e.what());
  }
}

std::string echo_config(const ModelConfig& m) {
  std::ostringstream os;
  auto list = [&os](const std::vector<int>& v) {
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[(size_t)i];
  };
  os << "frames=" << m.frames << " size=" << m.frame_w << "x" << m.frame_h
     << " patch_size=" << m.patch_size << " blocks=" << m.blocks << " depths=";
  list(m.depths);
  os << " scales=";
  list(m.scales);
  os << " base_width=" << m.base_width << " reduction=" << m.reduction
     << " kernel=" << m.kernel << " hierarchical=" << (m.hierarchical ? 1 : 0) << " grid="
     << m.base_grid.t_grid << "x" << m.base_grid.h_grid << "x" << m.base_grid.w_grid << "x"
     << m.base_grid.c_grid << "(L" << m.base_grid.levels << ")"
     << " local_grid=" << m.local_grid.t_local << "x" << m.local_grid.c_local << "(L"
     << m.local_grid.levels << ")"
     << " paddings=";
  list(m.paddings);
  return os.str();
}

void frame_metrics(const VideoClip& ref, const VideoClip& dec, RunReport& report) {
  report.frame_psnr.clear();
  report.frame_msssim.clear();
  for (int t = 0; t < dec.frames; ++t) {
    std::vector<float> a(ref.frame(t), ref.frame(t) + ref.frame_values());
    std::vector<float> b(dec.frame(t), dec.frame(t) + dec.frame_values());
    report.frame_psnr.push_back(psnr_from_mse(mse(a, b)));
    FTensor ta = FTensor::from_vec({ref.height, ref.width, 3}, std::move(a));
    FTensor tb = FTensor::from_vec({ref.height, ref.width, 3}, std::move(b));
    report.frame_msssim.push_back((double)ms_ssim(tb, ta).item());
  }
  double ps = 0, ms = 0;
  for (double v : report.frame_psnr) ps += v;
  for (double v : report.frame_msssim) ms += v;
  report.psnr = report.frame_psnr.empty() ? 0 : ps / (double)report.frame_psnr.size();
  report.msssim = report.frame_msssim.empty() ? 0 : ms / (double)report.frame_msssim.size();
}

}  // namespace

double bits_per_pixel(int64_t bytes, int frames, int height, int width) {
  return 8.0 * (double)bytes / ((double)frames * (double)height * (double)width);
}

void RunReport::write_csv(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write report " + path);
  f << "frame,psnr,msssim\n";
  for (size_t t = 0; t < frame_psnr.size(); ++t)
    f << t << ',' << frame_psnr[t] << ',' << frame_msssim[t] << '\n';
  f << "avg," << psnr << ',' << msssim << '\n';
}

void RunReport::print(std::ostream& os) const {
  os << "psnr=" << psnr << "\n";
  os << "msssim=" << msssim << "\n";
  if (psnr_unquantized > 0) os << "psnr_unquantized=" << psnr_unquantized << "\n";
  if (bitstream_bytes > 0) {
    os << "bytes=" << bitstream_bytes << "\n";
    os << "bpp=" << bpp << "\n";
  }
  if (encode_seconds > 0) os << "encode_seconds=" << encode_seconds << "\n";
  if (decode_seconds > 0) os << "decode_seconds=" << decode_seconds << "\n";
  os << "seed=" << seed << "\n";
  if (!config_echo.empty()) os << "config: " << config_echo << "\n";
}

VideoClip decode_model(const HiNeRVModel& model, DecodeMode mode, int first, int last) {
  const ModelConfig& cfg = model.config();
  if (last < 0) last = cfg.frames;
  if (first < 0 || first >= last || last > cfg.frames)
    throw UsageError("decode: frame range " + std::to_string(first) + ".." + std::to_string(last) +
                     " outside [0, " + std::to_string(cfg.frames) + ")");
  VideoClip out = VideoClip::create(last - first, cfg.frame_h, cfg.frame_w);
  for (int t = first; t < last; ++t) {
    float* dst = out.frame(t - first);
    if (mode == DecodeMode::kFrame) {
      FTensor frame = model.forward_frame(t);
      std::copy(frame.value().begin(), frame.value().end(), dst);
    } else {
      int m = cfg.patch_size;
      for (int j = 0; j < cfg.patches_y(); ++j)
        for (int i = 0; i < cfg.patches_x(); ++i) {
          FTensor patch = model.forward_patch({i, j, t});
          const auto& pv = patch.value();
          for (int y = 0; y < m; ++y)
            std::copy_n(pv.data() + (size_t)y * m * 3, (size_t)m * 3,
                        dst + (((int64_t)j * m + y) * cfg.frame_w + (int64_t)i * m) * 3);
        }
    }
  }
  return out;
}

VideoClip decode_video(const std::vector<uint8_t>& bitstream, DecodeMode mode, int first,
                       int last) {
  HiNeRVModel model = deserialize_model(bitstream);
  return decode_model(model, mode, first, last);
}

EncodeResult encode_video(const VideoClip& video, const ModelConfig& model_cfg,
                          const TrainConfig& train_cfg, const CodecParams& codec,
                          const std::string& checkpoint_out) {
  auto start = Clock::now();
  Rng rng(train_cfg.seed);
  HiNeRVModel model(model_cfg, rng);

  stage("train", [&] { return train(model, video, train_cfg); });

  PruneMask mask = PruneMask::empty_for(model);
  if (codec.prune_ratio > 0) {
    stage("prune", [&] {
      prune(model, codec.prune_ratio, mask);
      TrainConfig ft = train_cfg;
      ft.epochs = codec.prune_epochs;
      ft.log_csv.clear();
      return train(model, video, ft, &mask.bits);
    });
  }

  if (codec.qat_epochs > 0) {
    stage("qat", [&] {
      TrainConfig ft = train_cfg;
      ft.log_csv.clear();
      return qat_finetune(model, video, ft, codec.qat_epochs, codec.bits, codec.noise_ratio,
                          &mask);
    });
  }

  if (!checkpoint_out.empty()) stage("checkpoint", [&] { save_checkpoint(model, checkpoint_out); return 0; });

  RunReport report;
  report.seed = train_cfg.seed;
  report.config_echo = echo_config(model.config());
  {
    VideoClip rec = stage("reference", [&] { return decode_model(model, DecodeMode::kFrame); });
    double se = 0;
    for (size_t i = 0; i < rec.data.size(); ++i) {
      double d = (double)rec.data[i] - (double)video.data[i];
      se += d * d;
    }
    report.psnr_unquantized = psnr_from_mse(se / (double)rec.data.size());
  }

  EncodeResult result;
  result.bitstream = stage("serialize", [&] { return serialize_model(model, mask, codec.bits); });
  report.bitstream_bytes = (int64_t)result.bitstream.size();
  report.bpp = bits_per_pixel(report.bitstream_bytes, video.frames, video.height, video.width);

  {
    VideoClip decoded =
        stage("verify", [&] { return decode_video(result.bitstream, DecodeMode::kFrame); });
    frame_metrics(video, decoded, report);
  }
  report.encode_seconds = seconds_since(start);
  result.report = report;
  return result;
}

RunReport evaluate(const VideoClip& original, const VideoClip& reconstructed,
                   int64_t bitstream_bytes) {
  if (original.frames != reconstructed.frames || original.height != reconstructed.height ||
      original.width != reconstructed.width)
    throw ConfigError("eval: dimension mismatch " + std::to_string(original.width) + "x" +
                      std::to_string(original.height) + "x" + std::to_string(original.frames) +
                      " vs " + std::to_string(reconstructed.width) + "x" +
                      std::to_string(reconstructed.height) + "x" +
                      std::to_string(reconstructed.frames));
  RunReport report;
  frame_metrics(original, reconstructed, report);
  report.bitstream_bytes = bitstream_bytes;
  if (bitstream_bytes > 0)
    report.bpp = bits_per_pixel(bitstream_bytes, original.frames, original.height, original.width);
  return report;
}

// ---- config file ----

namespace {

std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (...) {
      throw ConfigError("config: bad integer list for " + key + ": '" + v + "'");
    }
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

int parse_int(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    int x = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (...) {
    throw ConfigError("config: bad number for " + key + ": '" + v + "'");
  }
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ParsedConfig parse_config_text(const std::string& text, int frame_h, int frame_w, int frames) {
  ParsedConfig out;
  ModelConfig& m = out.model;
  m.frame_h = frame_h;
  m.frame_w = frame_w;
  m.frames = frames;

  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::string s = trim(line);
    if (s.empty() || s[0] == '#') continue;
    size_t eq = s.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                        s + "'");
    std::string key = trim(s.substr(0, eq));
    std::string value = trim(s.substr(eq + 1));
    if (key.empty() || value.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key or value");

    if (key == "patch_size") m.patch_size = parse_int(value, key);
    else if (key == "blocks") m.blocks = parse_int(value, key);
    else if (key == "depths") m.depths = parse_int_list(value, key);
    else if (key == "scales") m.scales = parse_int_list(value, key);
    else if (key == "base_width") m.base_width = parse_int(value, key);
    else if (key == "reduction") m.reduction = (float)parse_double(value, key);
    else if (key == "kernel") m.kernel = parse_int(value, key);
    else if (key == "hierarchical") m.hierarchical = parse_int(value, key) != 0;
    else if (key == "grid_t") m.base_grid.t_grid = parse_int(value, key);
    else if (key == "grid_h") m.base_grid.h_grid = parse_int(value, key);
    else if (key == "grid_w") m.base_grid.w_grid = parse_int(value, key);
    else if (key == "grid_c") m.base_grid.c_grid = parse_int(value, key);
    else if (key == "grid_levels") m.base_grid.levels = parse_int(value, key);
    else if (key == "local_grid_t") m.local_grid.t_local = parse_int(value, key);
    else if (key == "local_grid_c") m.local_grid.c_local = parse_int(value, key);
    else if (key == "local_grid_levels") m.local_grid.levels = parse_int(value, key);
    else if (key == "paddings") m.paddings = parse_int_list(value, key);
    else if (key == "epochs") out.train.epochs = parse_int(value, key);
    else if (key == "lr") out.train.base_lr = parse_double(value, key);
    else if (key == "warmup") out.train.warmup_fraction = parse_double(value, key);
    else if (key == "batch_frames") out.train.batch_frames = parse_int(value, key);
    else if (key == "grad_clip") out.train.grad_clip_norm = parse_double(value, key);
    else if (key == "loss_alpha") out.train.loss_alpha = (float)parse_double(value, key);
    else if (key == "msssim_window") out.train.msssim_window = parse_int(value, key);
    else if (key == "seed") out.train.seed = (uint64_t)parse_double(value, key);
    else if (key == "prune_ratio") out.codec.prune_ratio = parse_double(value, key);
    else if (key == "prune_epochs") out.codec.prune_epochs = parse_int(value, key);
    else if (key == "qat_epochs") out.codec.qat_epochs = parse_int(value, key);
    else if (key == "noise_ratio") out.codec.noise_ratio = parse_double(value, key);
    else if (key == "bits") out.codec.bits = parse_int(value, key);
    else
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
  }

  // Default grid geometry: one node per base-resolution pixel.
  if (m.base_grid.t_grid == 0) m.base_grid.t_grid = frames;
  if (m.base_grid.h_grid == 0 && m.upsample_total() > 0 && frame_h % m.upsample_total() == 0)
    m.base_grid.h_grid = m.base_h();
  if (m.base_grid.w_grid == 0 && m.upsample_total() > 0 && frame_w % m.upsample_total() == 0)
    m.base_grid.w_grid = m.base_w();
  m.validate();
  return out;
}

ParsedConfig parse_config_file(const std::string& path, int frame_h, int frame_w, int frames) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), frame_h, frame_w, frames);
}

}  // namespace hinerv
