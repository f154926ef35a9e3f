#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "tsan/checkpoint.hpp"
#include "tsan/datapipe.hpp"
#include "tsan/loss.hpp"
#include "tsan/metrics.hpp"
#include "tsan/model.hpp"

namespace tsan {

constexpr double kPublishedParamCount = 5.75e6;

struct TrainConfig {
  int batch_size = 16;
  double learning_rate = 1e-4;
  long long max_iterations = 300000;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;  // adaptive-moment defaults
  LossConfig loss;
  uint64_t seed = 0;
  long long checkpoint_interval = 1000;
  long long validation_interval = 100;
  long long log_interval = 10;
  int patch_size = 64;

  void validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (learning_rate < 0) throw std::invalid_argument("learning_rate must be >= 0");
  }
};

struct LossHistoryEntry {
  long long iteration = 0;
  double loss_a = 0, loss_g = 0, total = 0;
};

/// Append-only run log: config snapshot, dataset hash, loss history, and the
/// parameter-count report.
struct RunManifest {
  TrainConfig config;
  ModelConfig model_config;
  std::string dataset_hash;
  long long total_parameters = 0;
  std::vector<LossHistoryEntry> history;
  std::vector<std::string> notes;
  std::string started_at, finished_at;

  double param_deviation() const {
    return (static_cast<double>(total_parameters) - kPublishedParamCount) / kPublishedParamCount;
  }

  void write(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write run manifest: " + path);
    os << "variant=" << variant_name(model_config.variant) << "\n"
       << "temporal_radius=" << model_config.temporal_radius << "\n"
       << "base_channels=" << model_config.base_channels << "\n"
       << "batch_size=" << config.batch_size << "\n"
       << "learning_rate=" << config.learning_rate << "\n"
       << "max_iterations=" << config.max_iterations << "\n"
       << "alpha=" << config.loss.alpha << "\nbeta=" << config.loss.beta << "\n"
       << "seed=" << config.seed << "\n"
       << "dataset_hash=" << dataset_hash << "\n"
       << "started_at=" << started_at << "\nfinished_at=" << finished_at << "\n"
       << "total_parameters=" << total_parameters << "\n"
       << "reference_parameters=" << static_cast<long long>(kPublishedParamCount) << "\n"
       << "parameter_deviation_pct=" << std::fixed << std::setprecision(1) << 100.0 * param_deviation() << "\n";
    for (const auto& n : notes) os << "note=" << n << "\n";
    os << std::setprecision(8);
    for (const auto& h : history)
      os << "loss=" << h.iteration << " " << h.loss_a << " " << h.loss_g << " " << h.total << "\n";
  }
};

/// Adam with bias correction; moment buffers keyed by parameter name.
struct Adam {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long long t = 0;
  std::map<std::string, Tensor> m, v;

  void step(ModelParams& params, const std::map<std::string, Tensor>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (auto& [name, p] : params.tensors) {
      const auto git = grads.find(name);
      if (git == grads.end()) continue;
      const Tensor& g = git->second;
      Tensor& mi = m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
      Tensor& vi = v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
      for (size_t j = 0; j < p.v.size(); ++j) {
        const double gj = g.v[j];
        mi.v[j] = static_cast<float>(beta1 * mi.v[j] + (1.0 - beta1) * gj);
        vi.v[j] = static_cast<float>(beta2 * vi.v[j] + (1.0 - beta2) * gj * gj);
        const double mhat = mi.v[j] / bc1;
        const double vhat = vi.v[j] / bc2;
        p.v[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }
};

using ClipProvider = std::function<ClipSample(Rng&)>;
/// Return true to stop training early (used by scaled harness runs).
using StopCallback = std::function<bool(long long iteration, const LossReport&, const ModelParams&)>;

namespace train_detail {

inline std::string now_string() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::ostringstream os;
  os << std::put_time(std::gmtime(&t), "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

}  // namespace train_detail

/// One forward/backward/update stream. The auxiliary loss weight is forced to
/// zero for V1/V2 (no intermediate output exists there). Deterministic under
/// (seed, config, provider).
inline RunManifest train(ModelParams& params, const ClipProvider& provider, const TrainConfig& cfg_in,
                         const std::string& work_dir = "", const FlowEstimator& est = {},
                         const StopCallback& stop = nullptr) {
  TrainConfig cfg = cfg_in;
  cfg.validate();
  const bool has_aux = params.config.variant == Variant::Full;
  if (!has_aux) cfg.loss.alpha = 0.0;

  RunManifest manifest;
  manifest.config = cfg;
  manifest.model_config = params.config;
  manifest.total_parameters = params.total_parameters();
  manifest.started_at = train_detail::now_string();
  if (std::abs(manifest.param_deviation()) > 0.30)
    manifest.notes.push_back(
        "parameter count deviates more than 30% from the published 5.75M: channel widths and "
        "feature-extraction depth are unpublished; this configuration uses base_channels=" +
        std::to_string(params.config.base_channels));
  if (!work_dir.empty()) std::filesystem::create_directories(work_dir);

  Rng rng(cfg.seed);
  Adam opt;
  opt.lr = cfg.learning_rate;
  opt.beta1 = cfg.beta1;
  opt.beta2 = cfg.beta2;
  opt.eps = cfg.eps;

  for (long long iter = 1; iter <= cfg.max_iterations; ++iter) {
    Tape tp;
    const ParamBind bind = bind_params(tp, params);
    std::vector<int> y_preds, h_preds;
    std::vector<Tensor> y_targets, h_targets;
    for (int bi = 0; bi < cfg.batch_size; ++bi) {
      const ClipSample clip = provider(rng);
      if (!clip.label_raw) throw std::invalid_argument("training clip lacks the raw label");
      const ForwardIds ids = forward_ids(tp, clip, bind, params.config, est);
      y_preds.push_back(ids.y_re);
      y_targets.push_back(clip.label_raw->as_3d());
      if (has_aux && cfg.loss.alpha > 0.0) {
        if (!clip.label_init) throw std::invalid_argument("training clip lacks the initial-encode label");
        h_preds.push_back(ids.h_re);
        h_targets.push_back(clip.label_init->as_3d());
      }
    }
    const int lg = batch_mse_node(tp, y_preds, y_targets);
    const int la = h_preds.empty() ? tp.leaf(Tensor({1})) : batch_mse_node(tp, h_preds, h_targets);
    const int total = loss_total_node(tp, la, lg, cfg.loss);

    LossReport report = loss_total(tp.val(la).v[0], tp.val(lg).v[0], cfg.loss);
    if (!std::isfinite(report.total)) {
      if (!work_dir.empty()) save_checkpoint(work_dir + "/diagnostic.ckpt", params, iter);
      manifest.finished_at = train_detail::now_string();
      throw std::runtime_error("non-finite loss at iteration " + std::to_string(iter) +
                               (work_dir.empty() ? "" : "; diagnostic checkpoint written"));
    }

    tp.backward(total);
    std::map<std::string, Tensor> grads;
    for (const auto& [name, id] : bind) grads[name] = tp.grad(id);
    opt.step(params, grads);

    if (iter == 1 || iter % cfg.log_interval == 0 || iter == cfg.max_iterations)
      manifest.history.push_back({iter, report.loss_a, report.loss_g, report.total});
    if (!work_dir.empty() && cfg.checkpoint_interval > 0 && iter % cfg.checkpoint_interval == 0)
      save_checkpoint(work_dir + "/ckpt_" + std::to_string(iter) + ".ckpt", params, iter);
    if (stop && stop(iter, report, params)) break;
  }
  manifest.finished_at = train_detail::now_string();
  if (!work_dir.empty()) {
    save_checkpoint(work_dir + "/final.ckpt", params, cfg.max_iterations);
    manifest.write(work_dir + "/run_manifest.txt");
  }
  return manifest;
}

/// Samples random (sequence, center, crop) clips from prepared triplets.
inline ClipProvider dataset_provider(std::vector<SequenceRecord> records, int patch_size, int temporal_radius) {
  if (records.empty()) throw std::invalid_argument("dataset_provider: no sequences");
  return [records = std::move(records), patch_size, temporal_radius](Rng& rng) {
    const auto& rec = records[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(records.size()) - 1))];
    PatchSpec spec;
    spec.size = patch_size;
    spec.temporal_radius = temporal_radius;
    spec.seed = rng.next_u64();
    const int center = rng.uniform_int(0, rec.frame_count - 1);
    return sample_clip(rec, center, spec);
  };
}

/// Restores the luma of every frame by sliding the 2T+1 window (replicated at
/// the sequence borders); chroma passes through. Writes planar 4:2:0 output.
inline void enhance(const ModelParams& params, const std::string& input_yuv, const Geometry& g,
                    const std::string& output_yuv, const FlowEstimator& est = {}) {
  const int T = params.config.temporal_radius;
  const int n = yuv420_frame_count(input_yuv, g);
  if (n == 0) throw std::runtime_error("empty input video: " + input_yuv);
  std::ofstream os(output_yuv, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + output_yuv);
  for (int i = 0; i < n; ++i) {
    ClipSample clip;
    clip.center_index = T;
    for (int t = -T; t <= T; ++t)
      clip.frames.push_back(read_luma(input_yuv, g, std::clamp(i + t, 0, n - 1)));
    const RestorationOutput out = forward(clip, params, est);
    YuvFrame f = read_yuv420_frame(input_yuv, g, i);
    f.luma = out.restored;
    append_yuv420_frame(os, g, f);
  }
}

struct EvalRow {
  std::string id;
  double delta_psnr = 0, delta_ssim = 0;
};

struct EvalTable {
  std::vector<EvalRow> rows;
  EvalRow average;  // id = "Average"

  std::string render(const std::string& title = "") const {
    std::ostringstream os;
    if (!title.empty()) os << title << "\n";
    os << std::left << std::setw(24) << "Sequence" << "dPSNR/dSSIM\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& r : rows)
      os << std::left << std::setw(24) << r.id << r.delta_psnr << "/" << r.delta_ssim << "\n";
    os << std::left << std::setw(24) << average.id << average.delta_psnr << "/" << average.delta_ssim << "\n";
    return os.str();
  }
};

/// Per-sequence and average (dPSNR, dSSIM) of restored vs transcoded frames,
/// both measured against the raw store.
inline EvalTable evaluate(const ModelParams& params, const std::vector<SequenceRecord>& records,
                          const FlowEstimator& est = {}) {
  EvalTable table;
  table.average.id = "Average";
  const int T = params.config.temporal_radius;
  for (const auto& rec : records) {
    const Geometry g = rec.geometry();
    std::vector<std::pair<Tensor, Tensor>> before, after;
    for (int i = 0; i < rec.frame_count; ++i) {
      ClipSample clip;
      clip.center_index = T;
      for (int t = -T; t <= T; ++t)
        clip.frames.push_back(read_luma(rec.transcoded_path, g, std::clamp(i + t, 0, rec.frame_count - 1)));
      const Tensor raw = read_luma(rec.raw_path, g, i);
      const RestorationOutput out = forward(clip, params, est);
      before.emplace_back(clip.frames[static_cast<size_t>(T)], raw);
      after.emplace_back(out.restored, raw);
    }
    const SequenceMetrics m = delta_metrics(before, after);
    table.rows.push_back({rec.id, m.delta_psnr, m.delta_ssim});
    table.average.delta_psnr += m.delta_psnr;
    table.average.delta_ssim += m.delta_ssim;
  }
  if (!table.rows.empty()) {
    table.average.delta_psnr /= static_cast<double>(table.rows.size());
    table.average.delta_ssim /= static_cast<double>(table.rows.size());
  }
  return table;
}

/// Trains each variant from the same seed and emits one evaluation table per
/// variant, in the shape of the component-ablation comparison.
inline std::vector<std::pair<std::string, EvalTable>> ablate_variants(
    const ModelConfig& base_cfg, const std::vector<SequenceRecord>& records, const TrainConfig& cfg,
    const FlowEstimator& est = {}) {
  std::vector<std::pair<std::string, EvalTable>> out;
  for (Variant v : {Variant::V1, Variant::V2, Variant::Full}) {
    ModelConfig mc = base_cfg;
    mc.variant = v;
    ModelParams params = init_params(mc, cfg.seed);
    train(params, dataset_provider(records, cfg.patch_size, mc.temporal_radius), cfg, "", est);
    out.emplace_back(variant_name(v), evaluate(params, records, est));
  }
  return out;
}

struct LossWeightResult {
  LossConfig pair;
  double delta_psnr = 0;
  RunManifest manifest;
};

/// Desk-scale sweep over (alpha, beta) pairs with a shared seed.
inline std::vector<LossWeightResult> ablate_loss_weights(const ModelConfig& base_cfg,
                                                         const std::vector<SequenceRecord>& records,
                                                         const std::vector<LossConfig>& pairs,
                                                         const TrainConfig& cfg_in,
                                                         const FlowEstimator& est = {}) {
  std::vector<LossWeightResult> out;
  for (const LossConfig& pair : pairs) {
    TrainConfig cfg = cfg_in;
    cfg.loss = pair;
    ModelParams params = init_params(base_cfg, cfg.seed);
    LossWeightResult r;
    r.pair = pair;
    r.manifest = train(params, dataset_provider(records, cfg.patch_size, base_cfg.temporal_radius), cfg, "", est);
    r.delta_psnr = evaluate(params, records, est).average.delta_psnr;
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string render_loss_ablation(const std::vector<LossWeightResult>& results) {
  std::ostringstream os;
  os << "(alpha, beta)";
  for (const auto& r : results) os << "\t(" << r.pair.alpha << ", " << r.pair.beta << ")";
  os << "\ndPSNR (dB)";
  os << std::fixed << std::setprecision(3);
  for (const auto& r : results) os << "\t" << r.delta_psnr;
  os << "\n";
  return os.str();
}

}  // namespace tsan
