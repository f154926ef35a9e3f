#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsan/tensor.hpp"

namespace tsan {

struct Geometry {
  int width = 0;
  int height = 0;
  double fps = 25.0;
};

/// Parses "WxH@fps" (fps optional, default 25).
inline Geometry parse_geometry(const std::string& s) {
  static const std::regex re(R"((\d+)x(\d+)(@([\d.]+))?)");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw std::invalid_argument("bad geometry '" + s + "', expected WxH@fps");
  Geometry g;
  g.width = std::stoi(m[1]);
  g.height = std::stoi(m[2]);
  if (m[4].matched) g.fps = std::stod(m[4]);
  if (g.width % 2 || g.height % 2) throw std::invalid_argument("4:2:0 geometry must have even dimensions");
  return g;
}

/// Tries the <name>_WxH_<fps>.yuv / <name>_WxH.yuv filename convention.
inline bool geometry_from_filename(const std::string& path, Geometry* out) {
  static const std::regex re(R"(.*_(\d+)x(\d+)(?:_([\d.]+))?\.yuv$)");
  std::smatch m;
  if (!std::regex_match(path, m, re)) return false;
  out->width = std::stoi(m[1]);
  out->height = std::stoi(m[2]);
  out->fps = m[3].matched ? std::stod(m[3]) : 25.0;
  return true;
}

inline size_t yuv420_frame_bytes(const Geometry& g) {
  return static_cast<size_t>(g.width) * g.height * 3 / 2;
}

inline int yuv420_frame_count(const std::string& path, const Geometry& g) {
  std::error_code ec;
  const auto sz = std::filesystem::file_size(path, ec);
  if (ec) throw std::runtime_error("cannot stat " + path + ": " + ec.message());
  return static_cast<int>(sz / yuv420_frame_bytes(g));
}

/// One decoded frame: luma normalized to [0,1], chroma passed through as raw
/// 8-bit planes (the restoration scope is luma only).
struct YuvFrame {
  Tensor luma;                 // {H,W} in [0,1]
  std::vector<uint8_t> cb, cr; // (H/2)*(W/2) each
};

inline YuvFrame read_yuv420_frame(const std::string& path, const Geometry& g, int frame_index) {
  const size_t fbytes = yuv420_frame_bytes(g);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  is.seekg(0, std::ios::end);
  const auto fsize = static_cast<size_t>(is.tellg());
  const size_t need = fbytes * static_cast<size_t>(frame_index + 1);
  if (frame_index < 0 || fsize < need)
    throw std::runtime_error("truncated or out-of-range read in " + path + ": need " +
                             std::to_string(need) + " bytes, file has " + std::to_string(fsize));
  is.seekg(static_cast<std::streamoff>(fbytes) * frame_index);
  std::vector<uint8_t> buf(fbytes);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(fbytes));
  if (!is) throw std::runtime_error("short read in " + path);

  YuvFrame f;
  f.luma = Tensor({g.height, g.width});
  const size_t ysz = static_cast<size_t>(g.width) * g.height;
  for (size_t i = 0; i < ysz; ++i) f.luma.v[i] = static_cast<float>(buf[i]) / 255.0f;
  const size_t csz = ysz / 4;
  f.cb.assign(buf.begin() + static_cast<long>(ysz), buf.begin() + static_cast<long>(ysz + csz));
  f.cr.assign(buf.begin() + static_cast<long>(ysz + csz), buf.end());
  return f;
}

inline Tensor read_luma(const std::string& path, const Geometry& g, int frame_index) {
  return read_yuv420_frame(path, g, frame_index).luma;
}

inline void append_yuv420_frame(std::ofstream& os, const Geometry& g, const YuvFrame& f) {
  const size_t ysz = static_cast<size_t>(g.width) * g.height;
  std::vector<uint8_t> y(ysz);
  for (size_t i = 0; i < ysz; ++i) {
    const float v = f.luma.v[i] * 255.0f + 0.5f;
    y[i] = static_cast<uint8_t>(std::clamp(v, 0.0f, 255.0f));
  }
  os.write(reinterpret_cast<const char*>(y.data()), static_cast<std::streamsize>(ysz));
  os.write(reinterpret_cast<const char*>(f.cb.data()), static_cast<std::streamsize>(f.cb.size()));
  os.write(reinterpret_cast<const char*>(f.cr.data()), static_cast<std::streamsize>(f.cr.size()));
  if (!os) throw std::runtime_error("yuv write failed");
}

}  // namespace tsan
