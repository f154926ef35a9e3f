#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tsan/flow.hpp"
#include "tsan/ops.hpp"
#include "tsan/tape.hpp"
#include "tsan/tensor.hpp"

namespace tsan {

enum class Variant { V1, V2, Full };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::V1: return "v1";
    case Variant::V2: return "v2";
    case Variant::Full: return "full";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "v1" || s == "V1") return Variant::V1;
  if (s == "v2" || s == "V2") return Variant::V2;
  if (s == "full" || s == "FULL" || s == "proposed") return Variant::Full;
  throw std::invalid_argument("unknown variant: " + s);
}

struct ModelConfig {
  int temporal_radius = 1;  // T; window holds 2T+1 frames
  int base_channels = 64;
  int psfm_depth = 3;
  int gsrm_blocks = 10;
  int psfm_res_blocks = 5;
  std::vector<int> hdro_rates = {1, 2, 4};
  Variant variant = Variant::Full;

  int window_size() const { return 2 * temporal_radius + 1; }
  // Encoder width per pyramid level, doubling and capped at 4x base.
  int psfm_width(int level) const {
    int w = base_channels;
    for (int l = 0; l < level; ++l) w = std::min(w * 2, base_channels * 4);
    return w;
  }
};

/// Named, shaped parameter arrays plus the config that shaped them.
struct ModelParams {
  ModelConfig config;
  std::map<std::string, Tensor> tensors;

  long long total_parameters() const {
    long long n = 0;
    for (const auto& [k, t] : tensors) n += t.numel();
    return n;
  }
  bool all_finite() const {
    for (const auto& [k, t] : tensors)
      if (!t.all_finite()) return false;
    return true;
  }
};

/// Windowed network input: 2T+1 transcoded luma planes plus the center
/// frame's two labels (optional at inference).
struct ClipSample {
  std::vector<Tensor> frames;  // {H,W} planes, temporal order
  int center_index = 0;
  std::optional<Tensor> label_init;  // initial-encoded center frame
  std::optional<Tensor> label_raw;   // uncompressed center frame
};

struct RestorationOutput {
  Tensor restored;                    // Y_re
  std::optional<Tensor> intermediate; // H_re (Full variant only)
};

namespace detail {

constexpr int kDeformTaps = 9;  // 3x3 grid R

inline void conv_entry(std::vector<std::pair<std::string, std::vector<int>>>& out,
                       const std::string& name, int co, int ci, int k) {
  out.emplace_back(name + ".w", std::vector<int>{co, ci, k, k});
  out.emplace_back(name + ".b", std::vector<int>{co});
}

inline void res_block_entries(std::vector<std::pair<std::string, std::vector<int>>>& out,
                              const std::string& name, int ch) {
  conv_entry(out, name + ".c1", ch, ch, 3);
  conv_entry(out, name + ".c2", ch, ch, 3);
}

inline void hdro_entries(std::vector<std::pair<std::string, std::vector<int>>>& out,
                         const std::string& name, const ModelConfig& cfg) {
  const int c = cfg.base_channels;
  for (int r : cfg.hdro_rates) conv_entry(out, name + ".d" + std::to_string(r), c, c, 3);
  conv_entry(out, name + ".rec", 1, c * static_cast<int>(cfg.hdro_rates.size()), 3);
}

}  // namespace detail

/// Ordered (name, shape) table for one variant. V1's names are a subset of
/// V2's and V2's of Full's.
inline std::vector<std::pair<std::string, std::vector<int>>> param_shapes(const ModelConfig& cfg) {
  using detail::conv_entry;
  std::vector<std::pair<std::string, std::vector<int>>> out;
  const int c = cfg.base_channels;
  const int T = cfg.temporal_radius;
  const int K2 = 2 * detail::kDeformTaps;

  conv_entry(out, "tdam.extract", c, cfg.window_size(), 3);
  conv_entry(out, "tdam.fe1", c, cfg.window_size() + 1, 3);
  conv_entry(out, "tdam.fe2", c, c, 3);
  conv_entry(out, "tdam.fe3", K2, c, 3);
  if (T > 0) conv_entry(out, "tdam.flowproj", K2, 4 * T, 3);
  conv_entry(out, "tdam.deform", c, c, 3);

  if (cfg.variant != Variant::V1) {
    for (int l = 0; l < cfg.psfm_depth; ++l) {
      const int wl = cfg.psfm_width(l), wn = cfg.psfm_width(l + 1);
      const std::string p = "psfm.enc" + std::to_string(l);
      detail::res_block_entries(out, p + ".res", wl);
      conv_entry(out, p + ".strided", wl, wl, 3);
      conv_entry(out, p + ".fuse", wn, 4 * wl, 1);
    }
    for (int l = cfg.psfm_depth - 1; l >= 0; --l) {
      const int wl = cfg.psfm_width(l), wn = cfg.psfm_width(l + 1);
      const std::string p = "psfm.dec" + std::to_string(l);
      conv_entry(out, p + ".up", wl, wn, 3);
      detail::res_block_entries(out, p + ".res", wl);
    }
    for (int i = 0; i < cfg.psfm_res_blocks; ++i)
      detail::res_block_entries(out, "psfm.tail" + std::to_string(i), c);
  }

  if (cfg.variant == Variant::Full) {
    detail::hdro_entries(out, "asam.hdro", cfg);
    conv_entry(out, "asam.embed", c, 1, 3);
    conv_entry(out, "asam.trans", c, c, 3);
  }

  const int nres = (cfg.variant == Variant::V1) ? std::min(cfg.psfm_res_blocks, cfg.gsrm_blocks)
                                                : cfg.gsrm_blocks;
  for (int i = 0; i < nres; ++i) detail::res_block_entries(out, "gsrm.res" + std::to_string(i), c);
  detail::hdro_entries(out, "gsrm.hdro", cfg);
  return out;
}

// Convolutions whose output feeds a shortcut sum, an offset, or a sigmoid are
// initialized near zero so the network starts close to the identity map.
inline bool is_final_layer(const std::string& name) {
  auto ends_with = [&](const char* suf) {
    const std::string s(suf);
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return ends_with(".c2.w") || ends_with(".rec.w") || name == "tdam.fe3.w" ||
         name == "tdam.flowproj.w" || name == "asam.embed.w";
}

inline ModelParams init_params(const ModelConfig& cfg, uint64_t seed) {
  ModelParams p;
  p.config = cfg;
  Rng rng(seed);
  for (const auto& [name, shape] : param_shapes(cfg)) {
    if (shape.size() == 1) {
      p.tensors[name] = Tensor::zeros(shape);
      continue;
    }
    const int fan_in = shape[1] * shape[2] * shape[3];
    float stddev = std::sqrt(2.0f / static_cast<float>(fan_in));
    if (is_final_layer(name)) stddev *= 0.01f;
    p.tensors[name] = rng.normal_tensor(shape, 0.0f, stddev);
  }
  return p;
}

inline ModelParams zero_params(const ModelConfig& cfg) {
  ModelParams p;
  p.config = cfg;
  for (const auto& [name, shape] : param_shapes(cfg)) p.tensors[name] = Tensor::zeros(shape);
  return p;
}

// ---------------------------------------------------------------------------
// Forward graph
// ---------------------------------------------------------------------------

using ParamBind = std::map<std::string, int>;

inline ParamBind bind_params(Tape& tp, const ModelParams& p) {
  ParamBind b;
  for (const auto& [name, t] : p.tensors) b[name] = tp.leaf(t);
  return b;
}

namespace netops {

inline int pconv(Tape& tp, const ParamBind& b, const std::string& name, int x,
                 int stride = 1, int dilation = 1) {
  return ops::conv2d(tp, x, b.at(name + ".w"), b.at(name + ".b"), stride, dilation);
}

inline int res_block(Tape& tp, const ParamBind& b, const std::string& name, int x) {
  return ops::residual_block(tp, x, b.at(name + ".c1.w"), b.at(name + ".c1.b"),
                             b.at(name + ".c2.w"), b.at(name + ".c2.b"));
}

/// Maps a branch rate label to its convolution dilation. The rate labels
/// double (1, 2, 4, ...) while the branch receptive fields are meant to grow
/// arithmetically (3x3, 5x5, 7x7, ...), so dilation d satisfies 2^(d-1) >= rate
/// with the smallest such d: rates 1/2/4 become dilations 1/2/3.
inline int hdro_dilation(int rate) {
  int d = 1;
  while ((1 << (d - 1)) < rate) ++d;
  return d;
}

/// Parallel dilated convolutions fused by a standard convolution into a
/// single-channel frequency map.
inline int hdro(Tape& tp, const ParamBind& b, const ModelConfig& cfg, const std::string& name, int f) {
  std::vector<int> branches;
  for (int r : cfg.hdro_rates)
    branches.push_back(
        ops::relu(tp, pconv(tp, b, name + ".d" + std::to_string(r), f, 1, hdro_dilation(r))));
  return pconv(tp, b, name + ".rec", ops::concat(tp, branches));
}

}  // namespace netops

/// Motion-compensated feature extraction: plain flow plus learned refinements
/// form the deformable offsets applied to features of the raw frame stack.
/// `forced_offsets` (a tape id) overrides the predicted field, for tests.
inline int tdam_forward(Tape& tp, const std::vector<int>& aligned, const std::vector<int>& window,
                        const std::vector<int>& flows, const ParamBind& b, const ModelConfig& cfg,
                        int forced_offsets = -1) {
  using namespace netops;
  if (static_cast<int>(aligned.size()) != cfg.window_size() ||
      static_cast<int>(window.size()) != cfg.window_size())
    throw std::invalid_argument("tdam_forward: window must hold " + std::to_string(cfg.window_size()) + " frames");
  const int center = cfg.temporal_radius;

  std::vector<int> cat_in = aligned;
  cat_in.push_back(window[static_cast<size_t>(center)]);
  int h = ops::relu(tp, pconv(tp, b, "tdam.fe1", ops::concat(tp, cat_in)));
  h = ops::relu(tp, pconv(tp, b, "tdam.fe2", h));
  int offsets = pconv(tp, b, "tdam.fe3", h);

  if (cfg.temporal_radius > 0) {
    if (static_cast<int>(flows.size()) != 2 * cfg.temporal_radius)
      throw std::invalid_argument("tdam_forward: expected 2T flow fields");
    const int plain = pconv(tp, b, "tdam.flowproj", ops::concat(tp, flows));
    offsets = ops::add(tp, offsets, plain);
  }
  const Tensor& c0 = tp.val(window[0]);
  const float lim = static_cast<float>(std::min(c0.shape[1], c0.shape[2])) / 4.0f;
  offsets = ops::clamp(tp, offsets, -lim, lim);
  if (forced_offsets >= 0) offsets = forced_offsets;

  const int feats = ops::relu(tp, pconv(tp, b, "tdam.extract", ops::concat(tp, window)));
  return ops::relu(tp, ops::deform_conv2d(tp, feats, b.at("tdam.deform.w"), b.at("tdam.deform.b"), offsets));
}

/// UNet-style encoder-decoder; every level downsamples through all four
/// filters and fuses them, residual blocks replace plain convolutions.
inline int psfm_forward(Tape& tp, int f, const ParamBind& b, const ModelConfig& cfg) {
  using namespace netops;
  const Tensor& in = tp.val(f);
  const int minside = 1 << cfg.psfm_depth;
  if (in.shape[1] < minside || in.shape[2] < minside)
    throw std::invalid_argument("psfm_forward: spatial dims must be at least " + std::to_string(minside) +
                                "x" + std::to_string(minside) + " for " + std::to_string(cfg.psfm_depth) +
                                " halvings, got " + shape_str(in.shape));
  int x = f;
  std::vector<int> skips;
  for (int l = 0; l < cfg.psfm_depth; ++l) {
    const std::string p = "psfm.enc" + std::to_string(l);
    x = res_block(tp, b, p + ".res", x);
    skips.push_back(x);
    const int d_bi = ops::downsample(tp, x, ops::Down::Bilinear);
    const int d_av = ops::downsample(tp, x, ops::Down::AveragePool);
    const int d_mx = ops::downsample(tp, x, ops::Down::MaxPool);
    const int d_sc = ops::downsample(tp, x, ops::Down::StridedConv,
                                     b.at(p + ".strided.w"), b.at(p + ".strided.b"));
    x = ops::relu(tp, pconv(tp, b, p + ".fuse", ops::concat(tp, {d_bi, d_av, d_mx, d_sc})));
  }
  for (int l = cfg.psfm_depth - 1; l >= 0; --l) {
    const std::string p = "psfm.dec" + std::to_string(l);
    const Tensor& skip = tp.val(skips[static_cast<size_t>(l)]);
    x = ops::resize_bilinear(tp, x, skip.shape[1], skip.shape[2]);
    x = ops::relu(tp, pconv(tp, b, p + ".up", x));
    x = ops::add(tp, x, skips[static_cast<size_t>(l)]);
    x = res_block(tp, b, p + ".res", x);
  }
  for (int i = 0; i < cfg.psfm_res_blocks; ++i)
    x = res_block(tp, b, "psfm.tail" + std::to_string(i), x);
  return x;
}

/// Returns (H_re, refined features). The frequency map from the HDRO plus the
/// center-frame shortcut yields H_re; its re-embedding gates the input
/// features through sigmoid attention.
inline std::pair<int, int> asam_forward(Tape& tp, int f, int x_center, const ParamBind& b,
                                        const ModelConfig& cfg) {
  using namespace netops;
  const int freq = hdro(tp, b, cfg, "asam.hdro", f);
  const int h_re = ops::add(tp, x_center, freq);
  const int excited = pconv(tp, b, "asam.embed", h_re);
  const int attn = ops::sigmoid(tp, excited);
  const int trans = ops::relu(tp, pconv(tp, b, "asam.trans", f));
  const int refined = ops::add(tp, ops::mul(tp, trans, attn), excited);
  return {h_re, refined};
}

inline int gsrm_forward(Tape& tp, int refined, int x_center, const ParamBind& b,
                        const ModelConfig& cfg, int nblocks) {
  using namespace netops;
  int x = refined;
  for (int i = 0; i < nblocks; ++i) x = res_block(tp, b, "gsrm.res" + std::to_string(i), x);
  return ops::add(tp, x_center, hdro(tp, b, cfg, "gsrm.hdro", x));
}

struct ForwardIds {
  int y_re = -1;
  int h_re = -1;  // -1 for V1/V2
};

/// Builds the whole network graph on the tape. Alignment runs outside the
/// tape (the flow estimator is frozen); aligned planes and flows enter as
/// leaves.
inline ForwardIds forward_ids(Tape& tp, const ClipSample& clip, const ParamBind& b,
                              const ModelConfig& cfg, const FlowEstimator& est) {
  if (static_cast<int>(clip.frames.size()) != cfg.window_size())
    throw std::invalid_argument("forward: clip holds " + std::to_string(clip.frames.size()) +
                                " frames, config expects " + std::to_string(cfg.window_size()));
  for (const auto& fr : clip.frames)
    if (fr.shape != clip.frames[0].shape)
      throw std::invalid_argument("forward: clip frames must share one shape");

  const WindowAlignment wa = align_window(clip.frames, est);
  std::vector<int> aligned, window, flows;
  for (const auto& t : wa.aligned) aligned.push_back(tp.leaf(t.as_3d()));
  for (const auto& t : clip.frames) window.push_back(tp.leaf(t.as_3d()));
  for (const auto& fl : wa.step_flows) flows.push_back(tp.leaf(fl.packed()));
  const int x_center = window[static_cast<size_t>(cfg.temporal_radius)];

  const int f_tdam = tdam_forward(tp, aligned, window, flows, b, cfg);
  ForwardIds out;
  switch (cfg.variant) {
    case Variant::V1: {
      const int n = std::min(cfg.psfm_res_blocks, cfg.gsrm_blocks);
      out.y_re = gsrm_forward(tp, f_tdam, x_center, b, cfg, n);
      break;
    }
    case Variant::V2: {
      const int f_psfm = psfm_forward(tp, f_tdam, b, cfg);
      out.y_re = gsrm_forward(tp, f_psfm, x_center, b, cfg, cfg.gsrm_blocks);
      break;
    }
    case Variant::Full: {
      const int f_psfm = psfm_forward(tp, f_tdam, b, cfg);
      auto [h_re, refined] = asam_forward(tp, f_psfm, x_center, b, cfg);
      out.h_re = h_re;
      out.y_re = gsrm_forward(tp, refined, x_center, b, cfg, cfg.gsrm_blocks);
      break;
    }
  }
  return out;
}

inline RestorationOutput forward(const ClipSample& clip, const ModelParams& params,
                                 const FlowEstimator& est) {
  Tape tp;
  const ParamBind b = bind_params(tp, params);
  const ForwardIds ids = forward_ids(tp, clip, b, params.config, est);
  RestorationOutput out;
  out.restored = tp.val(ids.y_re).as_2d();
  if (ids.h_re >= 0) out.intermediate = tp.val(ids.h_re).as_2d();
  return out;
}

}  // namespace tsan
