#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "tsan/model.hpp"
#include "tsan/train.hpp"

namespace tsan {

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) out.push_back(std::stoi(trim(tok)));
  return out;
}

}  // namespace config_detail

/// Applies one `key=value` assignment to the train/model configuration pair.
/// Unknown keys are an error so typos never silently fall back to defaults.
inline void apply_config_entry(const std::string& key, const std::string& value, TrainConfig* tc,
                               ModelConfig* mc) {
  if (key == "batch_size") tc->batch_size = std::stoi(value);
  else if (key == "learning_rate") tc->learning_rate = std::stod(value);
  else if (key == "max_iterations") tc->max_iterations = std::stoll(value);
  else if (key == "beta1") tc->beta1 = std::stod(value);
  else if (key == "beta2") tc->beta2 = std::stod(value);
  else if (key == "epsilon") tc->eps = std::stod(value);
  else if (key == "alpha") tc->loss.alpha = std::stod(value);
  else if (key == "beta") tc->loss.beta = std::stod(value);
  else if (key == "seed") tc->seed = std::stoull(value);
  else if (key == "checkpoint_interval") tc->checkpoint_interval = std::stoll(value);
  else if (key == "validation_interval") tc->validation_interval = std::stoll(value);
  else if (key == "log_interval") tc->log_interval = std::stoll(value);
  else if (key == "patch_size") tc->patch_size = std::stoi(value);
  else if (key == "temporal_radius") mc->temporal_radius = std::stoi(value);
  else if (key == "base_channels") mc->base_channels = std::stoi(value);
  else if (key == "psfm_depth") mc->psfm_depth = std::stoi(value);
  else if (key == "gsrm_blocks") mc->gsrm_blocks = std::stoi(value);
  else if (key == "psfm_res_blocks") mc->psfm_res_blocks = std::stoi(value);
  else if (key == "hdro_rates") mc->hdro_rates = config_detail::parse_int_list(value);
  else if (key == "variant") mc->variant = parse_variant(value);
  else throw std::invalid_argument("unknown config key '" + key + "'");
}

/// Line-oriented `key=value` file; `#` starts a comment, blank lines ignored.
inline void load_config_file(const std::string& path, TrainConfig* tc, ModelConfig* mc) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      apply_config_entry(config_detail::trim(line.substr(0, eq)),
                         config_detail::trim(line.substr(eq + 1)), tc, mc);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace tsan
