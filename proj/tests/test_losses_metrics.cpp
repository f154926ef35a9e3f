#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "tsan/loss.hpp"
#include "tsan/metrics.hpp"

using namespace tsan;

TEST_CASE("combined loss is the exact weighted sum of its terms") {
  Rng rng(51);
  for (int trial = 0; trial < 50; ++trial) {
    const double la = rng.uniform(0.0f, 2.0f), lg = rng.uniform(0.0f, 2.0f);
    const LossConfig cfg{rng.uniform(0.0f, 1.0f), rng.uniform(0.0f, 1.0f)};
    const LossReport r = loss_total(la, lg, cfg);
    CHECK(std::abs(r.total - (cfg.alpha * la + cfg.beta * lg)) < 1e-6);
  }
}

TEST_CASE("batch loss equals the hand-computed mean of per-item MSE") {
  Rng rng(52);
  std::vector<Tensor> pred, target;
  double expect = 0;
  for (int i = 0; i < 4; ++i) {
    pred.push_back(rng.uniform_tensor({1, 5, 5}, 0.0f, 1.0f));
    target.push_back(rng.uniform_tensor({1, 5, 5}, 0.0f, 1.0f));
    double s = 0;
    for (int j = 0; j < 25; ++j) {
      const double d = static_cast<double>(pred.back().v[static_cast<size_t>(j)]) -
                       target.back().v[static_cast<size_t>(j)];
      s += d * d;
    }
    expect += s / 25.0;
  }
  expect /= 4.0;
  CHECK(loss_global(pred, target) == doctest::Approx(expect).epsilon(1e-6));

  // Tape-side node agrees with the scalar-side computation.
  Tape tp;
  std::vector<int> ids;
  for (const auto& p : pred) ids.push_back(tp.leaf(p));
  const int node = batch_mse_node(tp, ids, target);
  CHECK(tp.val(node).v[0] == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("gradient w.r.t. the intermediate prediction scales linearly in alpha") {
  Rng rng(53);
  const Tensor h = rng.uniform_tensor({1, 6, 6}, 0.0f, 1.0f);
  const Tensor y = rng.uniform_tensor({1, 6, 6}, 0.0f, 1.0f);
  const Tensor ht = rng.uniform_tensor({1, 6, 6}, 0.0f, 1.0f);
  const Tensor yt = rng.uniform_tensor({1, 6, 6}, 0.0f, 1.0f);

  auto grad_h = [&](double alpha) {
    Tape tp;
    const int hi = tp.leaf(h), yi = tp.leaf(y);
    const int la = batch_mse_node(tp, {hi}, {ht});
    const int lg = batch_mse_node(tp, {yi}, {yt});
    const int tot = loss_total_node(tp, la, lg, LossConfig{alpha, 0.8});
    tp.backward(tot);
    return tp.grad(hi);
  };

  const Tensor g1 = grad_h(0.1), g5 = grad_h(0.5), g0 = grad_h(0.0);
  CHECK(g0.max_abs() == 0.0f);
  for (size_t i = 0; i < g1.v.size(); ++i)
    CHECK(g5.v[i] == doctest::Approx(5.0 * g1.v[i]).epsilon(1e-4));
}

TEST_CASE("psnr: identical planes infinite, known noise level exact") {
  Tensor a = Tensor::full({16, 16}, 0.5f);
  CHECK(std::isinf(psnr(a, a)));
  CHECK(capped_psnr(a, a) == kPsnrCap);

  // Uniform error of 1/255 in [0,1] scale is exactly 1 grey level:
  // PSNR = 10 log10(255^2 / 1) = 48.13 dB.
  Tensor b = Tensor::full({16, 16}, 0.5f + 1.0f / 255.0f);
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(255.0 * 255.0)).epsilon(1e-4));

  CHECK_THROWS_AS(psnr(a, Tensor::zeros({8, 8})), std::invalid_argument);
}

TEST_CASE("ssim matches a direct windowed oracle and is 1 for identical planes") {
  Rng rng(54);
  const Tensor a = rng.uniform_tensor({24, 24}, 0.0f, 1.0f);
  CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  for (int trial = 0; trial < 5; ++trial) {
    Tensor b = a;
    for (auto& v : b.v) v = std::clamp(v + rng.normal(0.0f, 0.05f), 0.0f, 1.0f);
    CHECK(ssim(a, b) == doctest::Approx(oracle::ssim(a, b)).epsilon(1e-6));
    CHECK(ssim(a, b) < 1.0);
  }
  CHECK_THROWS_AS(ssim(Tensor::zeros({8, 8}), Tensor::zeros({8, 8})), std::invalid_argument);
}

TEST_CASE("delta metrics aggregate per-frame values and cap infinities") {
  Rng rng(55);
  const Tensor ref = rng.uniform_tensor({16, 16}, 0.0f, 1.0f);
  Tensor noisy = ref;
  for (auto& v : noisy.v) v = std::clamp(v + rng.normal(0.0f, 0.02f), 0.0f, 1.0f);

  // "after" frames equal the reference: PSNR hits the cap, SSIM is 1.
  const SequenceMetrics m = delta_metrics({{noisy, ref}, {noisy, ref}}, {{ref, ref}, {ref, ref}});
  CHECK(m.frames.size() == 2);
  CHECK(m.mean_psnr_after == kPsnrCap);
  CHECK(m.mean_ssim_after == doctest::Approx(1.0));
  CHECK(m.delta_psnr > 0.0);
  CHECK(m.delta_ssim > 0.0);
  CHECK(m.delta_psnr == doctest::Approx(m.mean_psnr_after - m.mean_psnr_before));

  CHECK_THROWS_AS(delta_metrics({{ref, ref}}, {}), std::invalid_argument);
}

TEST_CASE("per-frame report is a readable table with one row per frame") {
  Rng rng(56);
  const Tensor ref = rng.uniform_tensor({16, 16}, 0.0f, 1.0f);
  Tensor noisy = ref;
  for (auto& v : noisy.v) v = std::clamp(v + 0.01f, 0.0f, 1.0f);
  const SequenceMetrics m = delta_metrics({{noisy, ref}}, {{noisy, ref}});

  const std::string path = (std::filesystem::temp_directory_path() / "frame_report.tsv").string();
  write_frame_report(m, path);
  std::ifstream is(path);
  std::string header, row, extra;
  CHECK(std::getline(is, header));
  CHECK(header == "index\tpsnr_before\tpsnr_after\tssim_before\tssim_after");
  CHECK(std::getline(is, row));
  CHECK(!std::getline(is, extra));
  std::filesystem::remove(path);
}
