#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tsan/config.hpp"
#include "tsan/train.hpp"

using namespace tsan;
namespace fs = std::filesystem;

namespace {

ModelConfig small_model(Variant v = Variant::Full) {
  ModelConfig mc;
  mc.base_channels = 8;
  mc.variant = v;
  return mc;
}

TrainConfig quick_train(int iters, int batch = 1) {
  TrainConfig tc;
  tc.batch_size = batch;
  tc.max_iterations = iters;
  tc.learning_rate = 1e-3;
  tc.log_interval = 1;
  tc.checkpoint_interval = 0;
  return tc;
}

// A fixed synthetic clip: the "transcoded" window is the raw frame plus noise,
// the "initial" label sits in between.
ClipSample fixed_clip(int size, uint64_t seed) {
  Rng rng(seed);
  const Tensor raw = rng.uniform_tensor({size, size}, 0.2f, 0.8f);
  auto noisy = [&](float amp) {
    Tensor t = raw;
    for (auto& v : t.v) v = std::clamp(v + rng.normal(0.0f, amp), 0.0f, 1.0f);
    return t;
  };
  ClipSample clip;
  clip.center_index = 1;
  clip.frames = {noisy(0.05f), noisy(0.05f), noisy(0.05f)};
  clip.label_init = noisy(0.01f);
  clip.label_raw = raw;
  return clip;
}

ClipProvider fixed_provider(int size, uint64_t seed) {
  ClipSample clip = fixed_clip(size, seed);
  return [clip](Rng&) { return clip; };
}

// Three-frame synthetic triplet store for evaluate/enhance paths.
SequenceRecord synthetic_record(const std::string& stem, int W, int H, uint64_t seed) {
  const Geometry g{W, H, 25.0};
  SequenceRecord rec;
  rec.id = stem;
  rec.width = W;
  rec.height = H;
  rec.frame_count = 3;
  rec.raw_path = (fs::temp_directory_path() / (stem + "_raw.yuv")).string();
  rec.initial_path = (fs::temp_directory_path() / (stem + "_init.yuv")).string();
  rec.transcoded_path = (fs::temp_directory_path() / (stem + "_trans.yuv")).string();
  rec.checksums["raw"] = "f00";
  Rng rng(seed);
  std::ofstream raw(rec.raw_path, std::ios::binary), init(rec.initial_path, std::ios::binary),
      trans(rec.transcoded_path, std::ios::binary);
  for (int i = 0; i < 3; ++i) {
    YuvFrame f;
    f.luma = rng.uniform_tensor({H, W}, 0.2f, 0.8f);
    f.cb.assign(static_cast<size_t>(W / 2) * (H / 2), 128);
    f.cr = f.cb;
    append_yuv420_frame(raw, g, f);
    YuvFrame fi = f;
    for (auto& v : fi.luma.v) v = std::clamp(v + rng.normal(0.0f, 0.01f), 0.0f, 1.0f);
    append_yuv420_frame(init, g, fi);
    YuvFrame ft = f;
    for (auto& v : ft.luma.v) v = std::clamp(v + rng.normal(0.0f, 0.05f), 0.0f, 1.0f);
    append_yuv420_frame(trans, g, ft);
  }
  return rec;
}

void remove_record(const SequenceRecord& rec) {
  fs::remove(rec.raw_path);
  fs::remove(rec.initial_path);
  fs::remove(rec.transcoded_path);
}

}  // namespace

TEST_CASE("config file drives every train/model field and rejects typos") {
  const std::string path = (fs::temp_directory_path() / "harness_cfg.txt").string();
  std::ofstream(path) << "# sample config\n"
                      << "batch_size = 4\n"
                      << "learning_rate = 0.002\n"
                      << "max_iterations = 77\n"
                      << "alpha = 0.3\nbeta = 0.7\n"
                      << "seed = 9\n"
                      << "patch_size = 32\n"
                      << "temporal_radius = 2\n"
                      << "base_channels = 16\n"
                      << "psfm_depth = 2\n"
                      << "gsrm_blocks = 6\npsfm_res_blocks = 4\n"
                      << "hdro_rates = 1, 3, 5\n"
                      << "variant = v2  # inline comment\n";
  TrainConfig tc;
  ModelConfig mc;
  load_config_file(path, &tc, &mc);
  CHECK(tc.batch_size == 4);
  CHECK(tc.learning_rate == doctest::Approx(0.002));
  CHECK(tc.max_iterations == 77);
  CHECK(tc.loss.alpha == doctest::Approx(0.3));
  CHECK(tc.seed == 9);
  CHECK(tc.patch_size == 32);
  CHECK(mc.temporal_radius == 2);
  CHECK(mc.base_channels == 16);
  CHECK(mc.psfm_depth == 2);
  CHECK(mc.gsrm_blocks == 6);
  CHECK(mc.hdro_rates == std::vector<int>{1, 3, 5});
  CHECK(mc.variant == Variant::V2);

  std::ofstream(path) << "learning_rte = 0.1\n";
  CHECK_THROWS_WITH_AS(load_config_file(path, &tc, &mc), doctest::Contains("learning_rte"),
                       std::runtime_error);
  fs::remove(path);
}

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  ModelParams params = init_params(small_model(), 5);
  const ModelParams before = params;
  TrainConfig tc = quick_train(3);
  tc.learning_rate = 0.0;
  train(params, fixed_provider(16, 81), tc);
  for (const auto& [name, t] : before.tensors) CHECK(params.tensors.at(name).v == t.v);
}

TEST_CASE("one optimizer step moves every parameter group") {
  ModelParams params = init_params(small_model(), 5);
  const ModelParams before = params;
  train(params, fixed_provider(16, 81), quick_train(1));
  for (const auto& [name, t] : before.tensors) {
    const Tensor& after = params.tensors.at(name);
    float moved = 0;
    for (size_t i = 0; i < t.v.size(); ++i) moved = std::max(moved, std::abs(after.v[i] - t.v[i]));
    INFO("parameter group ", name);
    CHECK(moved > 0.0f);
  }
}

TEST_CASE("training on one clip reduces the loss") {
  ModelParams params = init_params(small_model(), 5);
  const RunManifest m = train(params, fixed_provider(16, 82), quick_train(40));
  REQUIRE(m.history.size() >= 2);
  CHECK(m.history.back().total < m.history.front().total);
  CHECK(m.history.front().iteration == 1);
}

TEST_CASE("identical seeds give identical loss histories; alpha forced to zero off-variant") {
  auto run_once = [](Variant v) {
    ModelParams params = init_params(small_model(v), 5);
    return train(params, fixed_provider(16, 83), quick_train(5, 2));
  };
  const RunManifest a = run_once(Variant::Full), b = run_once(Variant::Full);
  REQUIRE(a.history.size() == b.history.size());
  for (size_t i = 0; i < a.history.size(); ++i) {
    CHECK(a.history[i].total == b.history[i].total);
    CHECK(a.history[i].loss_a == b.history[i].loss_a);
  }
  const RunManifest v2 = run_once(Variant::V2);
  CHECK(v2.config.loss.alpha == 0.0);
  for (const auto& h : v2.history) CHECK(h.loss_a == 0.0);
}

TEST_CASE("non-finite loss aborts with a diagnostic checkpoint") {
  ModelParams params = init_params(small_model(), 5);
  params.tensors.at("tdam.fe1.w").v[0] = std::numeric_limits<float>::quiet_NaN();
  const std::string dir = (fs::temp_directory_path() / "harness_diag").string();
  fs::remove_all(dir);
  CHECK_THROWS_WITH_AS(train(params, fixed_provider(16, 84), quick_train(3), dir),
                       doctest::Contains("non-finite"), std::runtime_error);
  CHECK(fs::exists(dir + "/diagnostic.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("run manifest records config, histories, and the parameter report") {
  ModelParams params = init_params(small_model(), 5);
  const std::string dir = (fs::temp_directory_path() / "harness_run").string();
  fs::remove_all(dir);
  const RunManifest m = train(params, fixed_provider(16, 85), quick_train(2), dir);
  CHECK(fs::exists(dir + "/final.ckpt"));
  REQUIRE(fs::exists(dir + "/run_manifest.txt"));

  std::ifstream is(dir + "/run_manifest.txt");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  for (const char* key : {"variant=full", "alpha=0.2", "beta=0.8", "total_parameters=",
                          "parameter_deviation_pct=", "loss="})
    CHECK(text.find(key) != std::string::npos);
  // The small test model is far from the published size: must carry a note.
  CHECK(std::abs(m.param_deviation()) > 0.30);
  CHECK(text.find("note=") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("enhance: zero model copies luma exactly and preserves frame count") {
  const SequenceRecord rec = synthetic_record("harness_enh", 32, 32, 91);
  const ModelParams zero = zero_params(small_model());
  const std::string out = (fs::temp_directory_path() / "harness_enh_out.yuv").string();
  enhance(zero, rec.transcoded_path, rec.geometry(), out);
  CHECK(yuv420_frame_count(out, rec.geometry()) == 3);
  for (int i = 0; i < 3; ++i) {
    const YuvFrame a = read_yuv420_frame(rec.transcoded_path, rec.geometry(), i);
    const YuvFrame b = read_yuv420_frame(out, rec.geometry(), i);
    double dmax = 0;
    for (size_t j = 0; j < a.luma.v.size(); ++j)
      dmax = std::max(dmax, std::abs(static_cast<double>(a.luma.v[j]) - b.luma.v[j]));
    CHECK(dmax <= 0.5 / 255.0 + 1e-6);  // one 8-bit re-quantization
    CHECK(a.cb == b.cb);  // chroma passes through untouched
    CHECK(a.cr == b.cr);
  }
  fs::remove(out);
  remove_record(rec);
}

TEST_CASE("evaluate: zero checkpoint reports zero deltas, one row per sequence") {
  const SequenceRecord r1 = synthetic_record("harness_ev1", 32, 32, 92);
  const SequenceRecord r2 = synthetic_record("harness_ev2", 32, 32, 93);
  const EvalTable table = evaluate(zero_params(small_model()), {r1, r2});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].id == "harness_ev1");
  CHECK(table.average.id == "Average");
  for (const auto& row : table.rows) {
    CHECK(row.delta_psnr == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(row.delta_ssim == doctest::Approx(0.0).epsilon(1e-9));
  }
  const std::string text = table.render("hdr");
  CHECK(text.find("hdr") != std::string::npos);
  CHECK(text.find("Average") != std::string::npos);
  remove_record(r1);
  remove_record(r2);
}

TEST_CASE("loss-weight ablation echoes the configured pairs") {
  const SequenceRecord rec = synthetic_record("harness_ab", 32, 32, 94);
  TrainConfig tc = quick_train(1);
  tc.patch_size = 16;
  ModelConfig mc = small_model();
  const auto results =
      ablate_loss_weights(mc, {rec}, {LossConfig{0.0, 1.0}, LossConfig{0.2, 0.8}}, tc);
  REQUIRE(results.size() == 2);
  CHECK(results[0].pair.alpha == 0.0);
  CHECK(results[1].pair.beta == 0.8);
  CHECK(results[0].manifest.config.loss.beta == 1.0);
  const std::string text = render_loss_ablation(results);
  CHECK(text.find("(0.2, 0.8)") != std::string::npos);
  CHECK(text.find("dPSNR") != std::string::npos);
  remove_record(rec);
}
