// Command-line surface for the restoration pipeline:
//   prepare    build raw/initial/transcoded triplets from raw yuv inputs
//   train      fit a model on prepared triplets
//   enhance    restore one video with a trained checkpoint
//   evaluate   per-sequence and average (dPSNR, dSSIM) table
//   ablate-loss  sweep (alpha, beta) loss-weight pairs at desk scale

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsan/config.hpp"
#include "tsan/train.hpp"

namespace fs = std::filesystem;
using namespace tsan;

namespace {

std::vector<SequenceRecord> load_dataset(const std::string& work_dir) {
  const std::string list = work_dir + "/dataset.txt";
  std::ifstream is(list);
  if (!is) throw std::runtime_error("no dataset list at " + list + " (run prepare first)");
  std::vector<SequenceRecord> recs;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) recs.push_back(read_manifest(line));
  if (recs.empty()) throw std::runtime_error("dataset list is empty: " + list);
  return recs;
}

std::string dataset_hash(const std::vector<SequenceRecord>& recs) {
  // Order-stable digest over the per-store checksums recorded at prepare time.
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const std::string& s) {
    for (const char c : s) {
      h ^= static_cast<uint8_t>(c);
      h *= 1099511628211ull;
    }
  };
  for (const auto& r : recs) {
    mix(r.id);
    for (const auto& [k, v] : r.checksums) {
      mix(k);
      mix(v);
    }
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

std::vector<LossConfig> parse_pairs(const std::string& s) {
  std::vector<LossConfig> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const auto colon = tok.find(':');
    if (colon == std::string::npos)
      throw std::runtime_error("bad weight pair '" + tok + "', expected alpha:beta");
    out.push_back({std::stod(tok.substr(0, colon)), std::stod(tok.substr(colon + 1))});
  }
  if (out.empty()) throw std::runtime_error("no weight pairs given");
  return out;
}

int cmd_prepare(const std::string& input_dir, const std::string& work_dir, int initial_kbps,
                int hr_kbps, int lr_kbps, const std::string& encoder) {
  EncodeSettings settings;
  settings.initial_kbps = initial_kbps;
  settings.hr_kbps = hr_kbps;
  settings.lr_kbps = lr_kbps;
  settings.encoder = encoder;

  std::vector<std::string> inputs;
  for (const auto& e : fs::directory_iterator(input_dir))
    if (e.is_regular_file() && e.path().extension() == ".yuv") inputs.push_back(e.path().string());
  std::sort(inputs.begin(), inputs.end());
  if (inputs.empty()) throw std::runtime_error("no .yuv files in " + input_dir);

  fs::create_directories(work_dir);
  std::ofstream list(work_dir + "/dataset.txt");
  for (const auto& in : inputs) {
    Geometry g;
    if (!geometry_from_filename(in, &g))
      throw std::runtime_error("cannot infer geometry from '" + in +
                               "'; name inputs <id>_WxH_<fps>.yuv");
    std::cout << "preparing " << fs::path(in).filename().string() << " (" << g.width << "x"
              << g.height << "@" << g.fps << ")...\n";
    const SequenceRecord rec = build_triplets(in, g, settings, work_dir);
    const std::string mpath = work_dir + "/" + rec.id + "/manifest.txt";
    write_manifest(rec, mpath);
    list << mpath << "\n";
    const DatasetStats st = dataset_stats(rec);
    std::cout << "  " << rec.id << " [" << rec.resolution_class << "] " << rec.frame_count
              << " frames; PSNR initial=" << st.initial_psnr
              << " dB, transcoded=" << st.transcoded_psnr << " dB\n";
  }
  std::cout << "dataset list written to " << work_dir << "/dataset.txt\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& variant, std::optional<long long> iters,
              std::optional<double> alpha, std::optional<double> beta,
              std::optional<uint64_t> seed, const std::string& out_dir) {
  TrainConfig tc;
  ModelConfig mc;
  if (!config_path.empty()) load_config_file(config_path, &tc, &mc);
  if (!variant.empty()) mc.variant = parse_variant(variant);
  if (iters) tc.max_iterations = *iters;
  if (alpha) tc.loss.alpha = *alpha;
  if (beta) tc.loss.beta = *beta;
  if (seed) tc.seed = *seed;

  const std::vector<SequenceRecord> recs = load_dataset(data_dir);
  ModelParams params = init_params(mc, tc.seed);
  std::cout << "training " << variant_name(mc.variant) << " variant, "
            << params.total_parameters() << " parameters, " << tc.max_iterations
            << " iterations\n";
  RunManifest manifest;
  const std::string run_dir = out_dir.empty() ? data_dir + "/run" : out_dir;
  manifest = train(params, dataset_provider(recs, tc.patch_size, mc.temporal_radius), tc, run_dir);
  manifest.dataset_hash = dataset_hash(recs);
  manifest.write(run_dir + "/run_manifest.txt");
  std::cout << "final checkpoint: " << run_dir << "/final.ckpt\n";
  if (!manifest.history.empty()) {
    const auto& h = manifest.history.back();
    std::cout << "final loss: total=" << h.total << " (aux=" << h.loss_a << ", global=" << h.loss_g
              << ")\n";
  }
  return 0;
}

int cmd_enhance(const std::string& ckpt_path, const std::string& input, const std::string& geometry,
                const std::string& output, const std::string& reference,
                const std::string& report_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const Geometry g = parse_geometry(geometry);
  enhance(ck.params, input, g, output);
  std::cout << "restored video written to " << output << "\n";
  if (!reference.empty()) {
    const int n = yuv420_frame_count(input, g);
    std::vector<std::pair<Tensor, Tensor>> before, after;
    for (int i = 0; i < n; ++i) {
      const Tensor raw = read_luma(reference, g, i);
      before.emplace_back(read_luma(input, g, i), raw);
      after.emplace_back(read_luma(output, g, i), raw);
    }
    const SequenceMetrics m = delta_metrics(before, after);
    std::cout << "PSNR " << m.mean_psnr_before << " -> " << m.mean_psnr_after << " dB (delta "
              << m.delta_psnr << "), SSIM " << m.mean_ssim_before << " -> " << m.mean_ssim_after
              << " (delta " << m.delta_ssim << ")\n";
    if (!report_path.empty()) {
      write_frame_report(m, report_path);
      std::cout << "per-frame report: " << report_path << "\n";
    }
  }
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& manifest_path,
                 const std::string& out_path) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  std::vector<SequenceRecord> recs;
  if (fs::is_directory(manifest_path)) {
    recs = load_dataset(manifest_path);
  } else {
    // Either one sequence manifest or a list of manifest paths.
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("cannot open " + manifest_path);
    std::string first;
    std::getline(is, first);
    if (first.find('=') != std::string::npos) {
      recs.push_back(read_manifest(manifest_path));
    } else {
      do {
        if (!first.empty()) recs.push_back(read_manifest(first));
      } while (std::getline(is, first));
    }
  }
  const EvalTable table = evaluate(ck.params, recs);
  const std::string text = table.render("Improvement over transcoded input (dPSNR dB / dSSIM)");
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << text;
    std::cout << "table written to " << out_path << "\n";
  }
  return 0;
}

int cmd_ablate_loss(const std::string& data_dir, const std::string& pairs_str, long long iters,
                    uint64_t seed, const std::string& out_path) {
  const std::vector<SequenceRecord> recs = load_dataset(data_dir);
  const std::vector<LossConfig> pairs = parse_pairs(pairs_str);
  TrainConfig tc;
  tc.max_iterations = iters;
  tc.seed = seed;
  tc.batch_size = 1;  // desk-scale sweep
  ModelConfig mc;
  const auto results = ablate_loss_weights(mc, recs, pairs, tc);
  const std::string text = render_loss_ablation(results);
  std::cout << text;
  if (!out_path.empty()) {
    std::ofstream os(out_path);
    os << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Transcoded-video restoration pipeline"};
  app.require_subcommand(1);

  std::string input_dir, work_dir, encoder = "";
  int initial_kbps = 10000, hr_kbps = 1000, lr_kbps = 500;
  CLI::App* prep = app.add_subcommand("prepare", "build raw/initial/transcoded triplets");
  prep->add_option("--input-dir", input_dir)->required();
  prep->add_option("--work-dir", work_dir)->required();
  prep->add_option("--initial-kbps", initial_kbps);
  prep->add_option("--hr-kbps", hr_kbps);
  prep->add_option("--lr-kbps", lr_kbps);
  prep->add_option("--encoder", encoder, "ffmpeg, tsan-codec, or a path (default: auto)");

  std::string data_dir, config_path, variant, out_dir;
  std::optional<long long> iters;
  std::optional<double> alpha, beta;
  std::optional<uint64_t> seed;
  CLI::App* tr = app.add_subcommand("train", "train a restoration model");
  tr->add_option("--data", data_dir)->required();
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--variant", variant)->check(CLI::IsMember({"full", "v1", "v2"}));
  tr->add_option("--iters", iters);
  tr->add_option("--alpha", alpha);
  tr->add_option("--beta", beta);
  tr->add_option("--seed", seed);
  tr->add_option("--out-dir", out_dir, "run directory (default: <data>/run)");

  std::string ckpt, input, geometry, output, reference, report;
  CLI::App* enh = app.add_subcommand("enhance", "restore one raw yuv420p video");
  enh->add_option("--checkpoint", ckpt)->required();
  enh->add_option("--input", input)->required();
  enh->add_option("--geometry", geometry, "WxH@fps")->required();
  enh->add_option("--output", output)->required();
  enh->add_option("--reference", reference, "raw reference for per-frame metrics");
  enh->add_option("--report", report, "per-frame metric report path");

  std::string manifest_path, table_out;
  CLI::App* ev = app.add_subcommand("evaluate", "per-sequence improvement table");
  ev->add_option("--checkpoint", ckpt)->required();
  ev->add_option("--manifest", manifest_path, "dataset dir, manifest list, or one manifest")->required();
  ev->add_option("--out", table_out);

  std::string pairs = "0:1,0.2:0.8,0.5:0.5";
  long long ab_iters = 50;
  uint64_t ab_seed = 0;
  std::string ab_out;
  CLI::App* ab = app.add_subcommand("ablate-loss", "sweep loss-weight pairs");
  ab->add_option("--data", data_dir)->required();
  ab->add_option("--pairs", pairs, "comma list of alpha:beta");
  ab->add_option("--iters", ab_iters);
  ab->add_option("--seed", ab_seed);
  ab->add_option("--out", ab_out);

  CLI11_PARSE(app, argc, argv);
  try {
    if (prep->parsed())
      return cmd_prepare(input_dir, work_dir, initial_kbps, hr_kbps, lr_kbps, encoder);
    if (tr->parsed())
      return cmd_train(data_dir, config_path, variant, iters, alpha, beta, seed, out_dir);
    if (enh->parsed()) return cmd_enhance(ckpt, input, geometry, output, reference, report);
    if (ev->parsed()) return cmd_evaluate(ckpt, manifest_path, table_out);
    return cmd_ablate_loss(data_dir, pairs, ab_iters, ab_seed, ab_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
