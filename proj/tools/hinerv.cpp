// Command-line codec: encoding a video trains a network on it, the
// compressed network is the bitstream, decoding runs the network forward.
#include <chrono>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "hinerv/codec.hpp"

namespace {

using namespace hinerv;

struct FrameRange {
  int first = 0;
  int last = -1;  // exclusive; -1 = end
};

FrameRange parse_range(const std::string& s) {
  FrameRange r;
  if (s.empty()) return r;
  size_t dots = s.find("..");
  if (dots == std::string::npos)
    throw UsageError("--frames expects a..b (end exclusive), got '" + s + "'");
  try {
    r.first = std::stoi(s.substr(0, dots));
    r.last = std::stoi(s.substr(dots + 2));
  } catch (...) {
    throw UsageError("--frames expects integers a..b, got '" + s + "'");
  }
  return r;
}

int cmd_encode(const std::string& input, const std::string& format, const std::string& config,
               const std::string& output, uint64_t seed, int epochs, double prune_ratio,
               int prune_epochs, int qat_epochs, double noise_ratio, int bits,
               const std::string& report_csv, const std::string& train_log,
               const std::string& checkpoint_out) {
  VideoClip video = read_video(input, parse_video_format(format));
  ParsedConfig pc = parse_config_file(config, video.height, video.width, video.frames);
  if (seed != (uint64_t)-1) pc.train.seed = seed;
  if (epochs >= 0) pc.train.epochs = epochs;
  if (prune_ratio >= 0) pc.codec.prune_ratio = prune_ratio;
  if (prune_epochs >= 0) pc.codec.prune_epochs = prune_epochs;
  if (qat_epochs >= 0) pc.codec.qat_epochs = qat_epochs;
  if (noise_ratio >= 0) pc.codec.noise_ratio = noise_ratio;
  if (bits >= 0) pc.codec.bits = bits;
  pc.train.log_csv = train_log;

  EncodeResult result = encode_video(video, pc.model, pc.train, pc.codec, checkpoint_out);
  write_file(output, result.bitstream);
  if (!report_csv.empty()) result.report.write_csv(report_csv);
  result.report.print(std::cout);
  return 0;
}

int cmd_decode(const std::string& input, const std::string& output, const std::string& format,
               const std::string& frames, const std::string& mode) {
  auto start = std::chrono::steady_clock::now();
  FrameRange range = parse_range(frames);
  DecodeMode dm;
  if (mode == "frame")
    dm = DecodeMode::kFrame;
  else if (mode == "patch")
    dm = DecodeMode::kPatch;
  else
    throw UsageError("--mode expects frame or patch, got '" + mode + "'");
  VideoClip clip = decode_video(read_file(input), dm, range.first, range.last);
  write_video(clip, output, parse_video_format(format));
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "frames=" << clip.frames << "\n";
  std::cout << "decode_seconds=" << secs << "\n";
  return 0;
}

int cmd_eval(const std::string& original, const std::string& reconstructed,
             const std::string& format, const std::string& bitstream, const std::string& csv) {
  VideoFormat vf = parse_video_format(format);
  VideoClip ref = read_video(original, vf);
  VideoClip dec = read_video(reconstructed, vf);
  int64_t bytes = 0;
  if (!bitstream.empty()) bytes = (int64_t)read_file(bitstream).size();
  RunReport report = evaluate(ref, dec, bytes);
  if (!csv.empty()) report.write_csv(csv);
  report.print(std::cout);
  return 0;
}

int cmd_info(const std::string& input) {
  BitstreamInfo info = inspect_bitstream(read_file(input));
  std::cout << "version=" << info.version << "\n";
  std::cout << "file_bytes=" << info.total_bytes << "\n";
  std::cout << "header_bytes=" << info.header_bytes << "\n";
  std::cout << "crc_bytes=4\n";
  std::cout << "tensors=" << info.tensors.size() << "\n";
  std::cout << "params=" << info.elems_total() << "\n";
  std::cout << "pruned=" << info.pruned_total() << "\n";
  std::cout << "sparsity=" << info.sparsity() << "\n";
  std::cout << "frames=" << info.config.frames << " height=" << info.config.frame_h
            << " width=" << info.config.frame_w << " patch_size=" << info.config.patch_size
            << "\n";
  size_t record_total = 0;
  for (const auto& t : info.tensors) record_total += t.record_bytes;
  std::cout << "record_bytes_total=" << record_total << "\n";
  for (const auto& t : info.tensors) {
    std::cout << t.name << " dims=" << shape_str(t.dims) << " elems=" << t.elems
              << " bits=" << t.bits << " scale=" << t.scale << " pruned=" << t.pruned
              << " mask_bytes=" << t.mask_bytes << " payload_bytes=" << t.payload_bytes
              << " record_bytes=" << t.record_bytes << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hinerv: neural-representation video codec"};
  app.require_subcommand(1);

  // encode
  auto* enc = app.add_subcommand("encode", "train on a video and write a compressed bitstream");
  std::string in_path, in_format = "png", config_path, out_path;
  std::string report_csv, train_log, checkpoint_out;
  uint64_t seed = (uint64_t)-1;
  int epochs = -1, prune_epochs = -1, qat_epochs = -1, bits = -1;
  double prune_ratio = -1, noise_ratio = -1;
  enc->add_option("--input", in_path, "input video (PNG frame directory or raw RGB8)")
      ->required();
  enc->add_option("--format", in_format, "input format: png|raw")->capture_default_str();
  enc->add_option("--config", config_path, "model/training config file (key=value)")->required();
  enc->add_option("--output", out_path, "output bitstream path")->required();
  enc->add_option("--seed", seed, "training seed (overrides config)");
  enc->add_option("--epochs", epochs, "training epochs (default 300)");
  enc->add_option("--prune-ratio", prune_ratio, "weight fraction to prune (default 0.15)");
  enc->add_option("--prune-epochs", prune_epochs, "fine-tune epochs after pruning (default 60)");
  enc->add_option("--qat-epochs", qat_epochs,
                  "quantization-aware fine-tune epochs (default 30)");
  enc->add_option("--noise-ratio", noise_ratio, "Quant-Noise replacement ratio (default 0.9)");
  enc->add_option("--bits", bits, "quantization bitwidth (default 6)");
  enc->add_option("--report", report_csv, "write per-frame metrics CSV");
  enc->add_option("--train-log", train_log, "write per-step training CSV");
  enc->add_option("--checkpoint-out", checkpoint_out, "also save the float checkpoint");

  // decode
  auto* dec = app.add_subcommand("decode", "decode frames from a bitstream");
  std::string dec_in, dec_out, dec_format = "png", dec_frames, dec_mode = "frame";
  dec->add_option("--input", dec_in, "bitstream path")->required();
  dec->add_option("--output", dec_out, "output video path")->required();
  dec->add_option("--format", dec_format, "output format: png|raw")->capture_default_str();
  dec->add_option("--frames", dec_frames, "frame range a..b (end exclusive)");
  dec->add_option("--mode", dec_mode, "execution mode: frame|patch")->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "measure PSNR/MS-SSIM/bpp of a reconstruction");
  std::string ev_orig, ev_rec, ev_format = "png", ev_bitstream, ev_csv;
  ev->add_option("--original", ev_orig, "original video path")->required();
  ev->add_option("--reconstructed", ev_rec, "reconstructed video path")->required();
  ev->add_option("--format", ev_format, "video format: png|raw")->capture_default_str();
  ev->add_option("--bitstream", ev_bitstream, "bitstream for rate accounting");
  ev->add_option("--csv", ev_csv, "write per-frame metrics CSV");

  // info
  auto* inf = app.add_subcommand("info", "dump bitstream structure");
  std::string info_in;
  inf->add_option("--input", info_in, "bitstream path")->required();

  try {
    app.parse(argc, argv);
    if (enc->parsed())
      return cmd_encode(in_path, in_format, config_path, out_path, seed, epochs, prune_ratio,
                        prune_epochs, qat_epochs, noise_ratio, bits, report_csv, train_log,
                        checkpoint_out);
    if (dec->parsed()) return cmd_decode(dec_in, dec_out, dec_format, dec_frames, dec_mode);
    if (ev->parsed()) return cmd_eval(ev_orig, ev_rec, ev_format, ev_bitstream, ev_csv);
    if (inf->parsed()) return cmd_info(info_in);
    return 2;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const hinerv::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const hinerv::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const hinerv::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const hinerv::CorruptError& e) {
    std::cerr << "bitstream error: " << e.what() << "\n";
    return 4;
  } catch (const hinerv::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 5;
  }
}
