#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsan/metrics.hpp"
#include "tsan/model.hpp"
#include "tsan/tensor.hpp"
#include "tsan/yuv.hpp"

namespace tsan {

/// One encoder invocation of the two-stage pipeline.
struct EncodeProfile {
  enum class Stage { Initial, Transcode };
  Stage stage = Stage::Initial;
  int bitrate_kbps = 10000;
  std::string preset = "medium";
  std::string rate_control = "average bitrate";
  int gop_size = 250;
  int max_references = 3;
  bool deblock = true;
  bool sao = true;
};

struct EncodeSettings {
  int initial_kbps = 10000;
  int hr_kbps = 1000;  // height > 720
  int lr_kbps = 500;
  std::string encoder;  // empty = auto-detect (ffmpeg, then bundled tsan-codec)
};

struct SequenceRecord {
  std::string id;
  int width = 0, height = 0, frame_count = 0;
  double frame_rate = 25.0;
  std::string raw_path, initial_path, transcoded_path;  // decoded yuv420 stores
  std::string resolution_class;                         // "HR" or "LR"
  std::vector<std::string> command_lines;
  std::map<std::string, std::string> checksums;

  Geometry geometry() const { return Geometry{width, height, frame_rate}; }
};

struct PatchSpec {
  int size = 64;
  int temporal_radius = 1;
  uint64_t seed = 0;
};

namespace pipe_detail {

inline uint64_t fnv1a_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checksum: cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[65536];
  while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<uint8_t>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!is) break;
  }
  return h;
}

inline std::string fnv1a_hex(const std::string& path) {
  std::ostringstream os;
  os << std::hex << fnv1a_file(path);
  return os.str();
}

inline bool on_path(const std::string& exe) {
  const char* pathenv = std::getenv("PATH");
  if (!pathenv) return false;
  std::istringstream ss(pathenv);
  std::string dir;
  while (std::getline(ss, dir, ':')) {
    std::error_code ec;
    if (!dir.empty() && std::filesystem::exists(dir + "/" + exe, ec)) return true;
  }
  return false;
}

/// Locates the bundled codec tool: $TSAN_CODEC, next to the running binary,
/// or on PATH.
inline std::string find_bundled_codec() {
  if (const char* env = std::getenv("TSAN_CODEC")) return env;
  std::error_code ec;
  const auto self = std::filesystem::read_symlink("/proc/self/exe", ec);
  if (!ec) {
    const auto cand = self.parent_path() / "tsan-codec";
    if (std::filesystem::exists(cand, ec)) return cand.string();
  }
  if (on_path("tsan-codec")) return "tsan-codec";
  return "";
}

inline void run_logged(const std::string& cmd, const std::string& log_path,
                       std::vector<std::string>* record) {
  if (record) record->push_back(cmd);
  const std::string full = cmd + " >> '" + log_path + "' 2>&1";
  const int rc = std::system(full.c_str());
  if (rc != 0) {
    std::string tail;
    std::ifstream lg(log_path);
    std::string line;
    while (std::getline(lg, line)) tail = line;
    throw std::runtime_error("encoder command failed (exit " + std::to_string(rc) + "): " + cmd +
                             (tail.empty() ? "" : ("; last log line: " + tail)));
  }
}

}  // namespace pipe_detail

inline std::string x265_param_string(const EncodeProfile& p) {
  std::ostringstream os;
  os << "keyint=" << p.gop_size << ":min-keyint=" << p.gop_size << ":ref=" << p.max_references
     << ":deblock=" << (p.deblock ? "1" : "0") << ":sao=" << (p.sao ? "1" : "0");
  return os.str();
}

/// Command lines for one encode (raw yuv -> hevc) and decode (hevc -> yuv).
struct EncoderBackend {
  std::string name;
  std::string exe;

  std::string encode_cmd(const std::string& in_yuv, const Geometry& g, const EncodeProfile& p,
                         const std::string& out_hevc) const {
    std::ostringstream os;
    if (name == "ffmpeg") {
      os << exe << " -y -f rawvideo -pix_fmt yuv420p -s " << g.width << "x" << g.height
         << " -r " << g.fps << " -i '" << in_yuv << "' -c:v libx265 -preset " << p.preset
         << " -b:v " << p.bitrate_kbps << "k -x265-params " << x265_param_string(p)
         << " -f hevc '" << out_hevc << "'";
    } else {
      os << exe << " encode --input '" << in_yuv << "' --geometry " << g.width << "x" << g.height
         << "@" << g.fps << " --bitrate-kbps " << p.bitrate_kbps << " --preset " << p.preset
         << " --keyint " << p.gop_size << " --refs " << p.max_references
         << " --deblock " << (p.deblock ? 1 : 0) << " --sao " << (p.sao ? 1 : 0)
         << " --output '" << out_hevc << "'";
    }
    return os.str();
  }

  std::string decode_cmd(const std::string& in_hevc, const Geometry& g, const std::string& out_yuv) const {
    std::ostringstream os;
    if (name == "ffmpeg") {
      os << exe << " -y -i '" << in_hevc << "' -f rawvideo -pix_fmt yuv420p '" << out_yuv << "'";
    } else {
      os << exe << " decode --input '" << in_hevc << "' --output '" << out_yuv << "'";
    }
    return os.str();
  }
};

inline EncoderBackend detect_encoder(const std::string& preferred = "") {
  if (preferred == "ffmpeg" || (preferred.empty() && pipe_detail::on_path("ffmpeg")))
    return EncoderBackend{"ffmpeg", "ffmpeg"};
  if (!preferred.empty() && preferred != "tsan-codec" && preferred != "auto")
    return EncoderBackend{"tsan-codec", preferred};  // explicit path to a codec tool
  const std::string bundled = pipe_detail::find_bundled_codec();
  if (!bundled.empty()) return EncoderBackend{"tsan-codec", bundled};
  throw std::runtime_error(
      "no external encoder available: install ffmpeg, build the bundled tsan-codec tool, "
      "or point TSAN_CODEC at one");
}

/// Encodes raw -> initial (high bitrate), decodes it, re-encodes the decoded
/// initial at the transcode bitrate, decodes that too, and records the exact
/// invocations plus store checksums.
inline SequenceRecord build_triplets(const std::string& raw_yuv, const Geometry& g,
                                     const EncodeSettings& settings, const std::string& work_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(work_dir);
  const std::string id = fs::path(raw_yuv).stem().string();
  const std::string dir = (fs::path(work_dir) / id).string();
  fs::create_directories(dir);
  const std::string log = dir + "/encode.log";
  std::ofstream(log, std::ios::trunc).close();

  SequenceRecord rec;
  rec.id = id;
  rec.width = g.width;
  rec.height = g.height;
  rec.frame_rate = g.fps;
  rec.resolution_class = (g.height > 720) ? "HR" : "LR";
  rec.raw_path = dir + "/raw.yuv";
  rec.initial_path = dir + "/initial.yuv";
  rec.transcoded_path = dir + "/transcoded.yuv";
  fs::copy_file(raw_yuv, rec.raw_path, fs::copy_options::overwrite_existing);

  const EncoderBackend enc = detect_encoder(settings.encoder);
  EncodeProfile initial;
  initial.stage = EncodeProfile::Stage::Initial;
  initial.bitrate_kbps = settings.initial_kbps;
  EncodeProfile transcode = initial;
  transcode.stage = EncodeProfile::Stage::Transcode;
  transcode.bitrate_kbps = (rec.resolution_class == "HR") ? settings.hr_kbps : settings.lr_kbps;

  const std::string init_hevc = dir + "/initial.hevc";
  const std::string trans_hevc = dir + "/transcoded.hevc";
  pipe_detail::run_logged(enc.encode_cmd(rec.raw_path, g, initial, init_hevc), log, &rec.command_lines);
  pipe_detail::run_logged(enc.decode_cmd(init_hevc, g, rec.initial_path), log, &rec.command_lines);
  pipe_detail::run_logged(enc.encode_cmd(rec.initial_path, g, transcode, trans_hevc), log, &rec.command_lines);
  pipe_detail::run_logged(enc.decode_cmd(trans_hevc, g, rec.transcoded_path), log, &rec.command_lines);

  const int n_raw = yuv420_frame_count(rec.raw_path, g);
  const int n_init = yuv420_frame_count(rec.initial_path, g);
  const int n_trans = yuv420_frame_count(rec.transcoded_path, g);
  if (n_init != n_raw || n_trans != n_raw)
    throw std::runtime_error("triplet frame counts diverge for " + id + ": raw=" + std::to_string(n_raw) +
                             " initial=" + std::to_string(n_init) + " transcoded=" + std::to_string(n_trans));
  rec.frame_count = n_raw;
  rec.checksums["raw"] = pipe_detail::fnv1a_hex(rec.raw_path);
  rec.checksums["initial"] = pipe_detail::fnv1a_hex(rec.initial_path);
  rec.checksums["transcoded"] = pipe_detail::fnv1a_hex(rec.transcoded_path);
  return rec;
}

inline void write_manifest(const SequenceRecord& rec, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write manifest: " + path);
  os << "id=" << rec.id << "\n"
     << "width=" << rec.width << "\nheight=" << rec.height << "\n"
     << "frame_count=" << rec.frame_count << "\nframe_rate=" << rec.frame_rate << "\n"
     << "resolution_class=" << rec.resolution_class << "\n"
     << "raw_path=" << rec.raw_path << "\ninitial_path=" << rec.initial_path << "\n"
     << "transcoded_path=" << rec.transcoded_path << "\n";
  for (const auto& [k, v] : rec.checksums) os << "checksum_" << k << "=" << v << "\n";
  for (const auto& c : rec.command_lines) os << "command=" << c << "\n";
}

inline SequenceRecord read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open manifest: " + path);
  SequenceRecord rec;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos || line.empty() || line[0] == '#') continue;
    const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
    if (k == "id") rec.id = v;
    else if (k == "width") rec.width = std::stoi(v);
    else if (k == "height") rec.height = std::stoi(v);
    else if (k == "frame_count") rec.frame_count = std::stoi(v);
    else if (k == "frame_rate") rec.frame_rate = std::stod(v);
    else if (k == "resolution_class") rec.resolution_class = v;
    else if (k == "raw_path") rec.raw_path = v;
    else if (k == "initial_path") rec.initial_path = v;
    else if (k == "transcoded_path") rec.transcoded_path = v;
    else if (k == "command") rec.command_lines.push_back(v);
    else if (k.rfind("checksum_", 0) == 0) rec.checksums[k.substr(9)] = v;
  }
  if (rec.id.empty() || rec.width == 0) throw std::runtime_error("malformed manifest: " + path);
  return rec;
}

namespace pipe_detail {

inline Tensor crop(const Tensor& plane, int y0, int x0, int size) {
  Tensor out({size, size});
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) out.at(y, x) = plane.at(y0 + y, x0 + x);
  return out;
}

}  // namespace pipe_detail

/// Cuts a 2T+1 temporal window of identical spatial crops from the transcoded
/// store plus both labels at the center. Temporal borders replicate the
/// nearest frame. Deterministic under the seed.
inline ClipSample sample_clip(const SequenceRecord& rec, int center_index, const PatchSpec& spec) {
  const Geometry g = rec.geometry();
  if (spec.size > rec.width || spec.size > rec.height)
    throw std::invalid_argument("patch " + std::to_string(spec.size) + " exceeds frame " +
                                std::to_string(rec.width) + "x" + std::to_string(rec.height));
  if (center_index < 0 || center_index >= rec.frame_count)
    throw std::invalid_argument("center index out of range");
  Rng rng(spec.seed);
  const int y0 = (rec.height == spec.size) ? 0 : rng.uniform_int(0, rec.height - spec.size);
  const int x0 = (rec.width == spec.size) ? 0 : rng.uniform_int(0, rec.width - spec.size);

  ClipSample clip;
  clip.center_index = spec.temporal_radius;
  for (int t = -spec.temporal_radius; t <= spec.temporal_radius; ++t) {
    const int idx = std::clamp(center_index + t, 0, rec.frame_count - 1);
    clip.frames.push_back(pipe_detail::crop(read_luma(rec.transcoded_path, g, idx), y0, x0, spec.size));
  }
  clip.label_init = pipe_detail::crop(read_luma(rec.initial_path, g, center_index), y0, x0, spec.size);
  clip.label_raw = pipe_detail::crop(read_luma(rec.raw_path, g, center_index), y0, x0, spec.size);
  return clip;
}

struct DatasetStats {
  double initial_psnr = 0;    // mean luma PSNR, initial vs raw
  double transcoded_psnr = 0; // mean luma PSNR, transcoded vs raw
};

inline DatasetStats dataset_stats(const SequenceRecord& rec) {
  const Geometry g = rec.geometry();
  DatasetStats s;
  for (int i = 0; i < rec.frame_count; ++i) {
    const Tensor raw = read_luma(rec.raw_path, g, i);
    s.initial_psnr += capped_psnr(read_luma(rec.initial_path, g, i), raw);
    s.transcoded_psnr += capped_psnr(read_luma(rec.transcoded_path, g, i), raw);
  }
  s.initial_psnr /= rec.frame_count;
  s.transcoded_psnr /= rec.frame_count;
  return s;
}

}  // namespace tsan
