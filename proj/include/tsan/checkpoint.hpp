#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tsan/model.hpp"

namespace tsan {

// Checkpoint container (little-endian throughout):
//   magic "TSANCKP1"
//   u32  format version (1)
//   u64  metadata length, followed by that many bytes of JSON
//        (model config, training iteration)
//   u64  array count, then per array:
//        u32 name length, name bytes, u32 ndim, u32 dims..., float32 data
constexpr char kCheckpointMagic[8] = {'T', 'S', 'A', 'N', 'C', 'K', 'P', '1'};
constexpr uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline nlohmann::json config_to_json(const ModelConfig& c) {
  return nlohmann::json{{"temporal_radius", c.temporal_radius},
                        {"base_channels", c.base_channels},
                        {"psfm_depth", c.psfm_depth},
                        {"gsrm_blocks", c.gsrm_blocks},
                        {"psfm_res_blocks", c.psfm_res_blocks},
                        {"hdro_rates", c.hdro_rates},
                        {"variant", variant_name(c.variant)}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.temporal_radius = j.at("temporal_radius").get<int>();
  c.base_channels = j.at("base_channels").get<int>();
  c.psfm_depth = j.at("psfm_depth").get<int>();
  c.gsrm_blocks = j.at("gsrm_blocks").get<int>();
  c.psfm_res_blocks = j.at("psfm_res_blocks").get<int>();
  c.hdro_rates = j.at("hdro_rates").get<std::vector<int>>();
  c.variant = parse_variant(j.at("variant").get<std::string>());
  return c;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params, long long iteration) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put<uint32_t>(os, kCheckpointVersion);
  nlohmann::json meta{{"config", detail::config_to_json(params.config)}, {"iteration", iteration}};
  const std::string mstr = meta.dump();
  detail::put<uint64_t>(os, mstr.size());
  os.write(mstr.data(), static_cast<std::streamsize>(mstr.size()));
  detail::put<uint64_t>(os, params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    detail::put<uint32_t>(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<uint32_t>(os, static_cast<uint32_t>(t.ndim()));
    for (int d : t.shape) detail::put<uint32_t>(os, static_cast<uint32_t>(d));
    os.write(reinterpret_cast<const char*>(t.v.data()),
             static_cast<std::streamsize>(t.v.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

struct Checkpoint {
  ModelParams params;
  long long iteration = 0;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const auto version = detail::get<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const auto mlen = detail::get<uint64_t>(is);
  std::string mstr(mlen, '\0');
  is.read(mstr.data(), static_cast<std::streamsize>(mlen));
  const nlohmann::json meta = nlohmann::json::parse(mstr);

  Checkpoint ck;
  ck.params.config = detail::config_from_json(meta.at("config"));
  ck.iteration = meta.at("iteration").get<long long>();
  const auto count = detail::get<uint64_t>(is);
  for (uint64_t i = 0; i < count; ++i) {
    const auto nlen = detail::get<uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const auto ndim = detail::get<uint32_t>(is);
    std::vector<int> shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(static_cast<int>(detail::get<uint32_t>(is)));
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * sizeof(float)));
    if (!is) throw std::runtime_error("checkpoint: truncated array " + name);
    ck.params.tensors[name] = std::move(t);
  }
  return ck;
}

}  // namespace tsan
