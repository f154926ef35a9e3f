#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tsan/flow.hpp"

using namespace tsan;

namespace {

Tensor box_blur_n(Tensor img, int passes) {
  const int H = img.shape[0], W = img.shape[1];
  for (int pass = 0; pass < passes; ++pass) {
    Tensor b({H, W});
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        float s = 0;
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if (yy >= 0 && yy < H && xx >= 0 && xx < W) {
              s += img.at(yy, xx);
              ++n;
            }
          }
        b.at(y, x) = s / static_cast<float>(n);
      }
    img = b;
  }
  return img;
}

// Texture with structure at both coarse (pyramid) and fine (subpixel) scales.
Tensor textured_plane(int H, int W, uint64_t seed) {
  Rng rng(seed);
  const Tensor coarse = box_blur_n(rng.uniform_tensor({H, W}, 0.0f, 1.0f), 10);
  const Tensor fine = box_blur_n(rng.uniform_tensor({H, W}, 0.0f, 1.0f), 3);
  Tensor img({H, W});
  for (size_t i = 0; i < img.v.size(); ++i)
    img.v[i] = 2.5f * (coarse.v[i] - 0.5f) + 0.8f * (fine.v[i] - 0.5f) + 0.5f;
  return img;
}

// Shifts content by (ty, tx): out(y, x) = src(y - ty, x - tx), bilinear with
// clamped borders. estimate_flow(src, out) should then report (-ty, -tx),
// since sampling src at (y + dy, x + dx) with dy = -ty reproduces out.
Tensor shift_plane(const Tensor& src, double ty, double tx) {
  const int H = src.shape[0], W = src.shape[1];
  Tensor out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double fy = std::clamp(y - ty, 0.0, H - 1.0);
      const double fx = std::clamp(x - tx, 0.0, W - 1.0);
      const int y0 = static_cast<int>(std::floor(fy)), x0 = static_cast<int>(std::floor(fx));
      const int y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
      const double wy = fy - y0, wx = fx - x0;
      out.at(y, x) = static_cast<float>(
          (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
          wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1)));
    }
  return out;
}

// Mean endpoint error against a constant ground-truth flow, interior only
// (a margin excludes the border where the true correspondence leaves the
// image).
double interior_epe(const FlowField& flow, double gt_dy, double gt_dx, int margin) {
  const int H = flow.dy.shape[0], W = flow.dy.shape[1];
  double acc = 0;
  int n = 0;
  for (int y = margin; y < H - margin; ++y)
    for (int x = margin; x < W - margin; ++x) {
      const double ey = flow.dy.at(y, x) - gt_dy;
      const double ex = flow.dx.at(y, x) - gt_dx;
      acc += std::sqrt(ey * ey + ex * ex);
      ++n;
    }
  return acc / n;
}

}  // namespace

TEST_CASE("integer global translations are recovered within 0.5 px") {
  const Tensor ref = textured_plane(64, 64, 31);
  const FlowEstimator est;
  for (const auto& [ty, tx] : std::vector<std::pair<double, double>>{
           {3, 0}, {-3, 0}, {0, 3}, {0, -3}, {3, -3}, {-2, 3}}) {
    const Tensor tgt = shift_plane(ref, ty, tx);
    // est.estimate_flow(reference, target): sampling target at (y+dy, x+dx)
    // reproduces the reference, so the expected flow equals (-ty, -tx).
    const FlowField f = est.estimate_flow(ref, tgt);
    CHECK(interior_epe(f, -ty, -tx, 8) < 0.5);
  }
}

TEST_CASE("subpixel translations are recovered within 0.5 px") {
  const Tensor ref = textured_plane(64, 64, 32);
  const FlowEstimator est;
  for (const auto& [ty, tx] : std::vector<std::pair<double, double>>{
           {2.0, 0.0}, {0.0, -2.0}, {1.5, 1.5}, {-1.5, 0.5}}) {
    const Tensor tgt = shift_plane(ref, ty, tx);
    const FlowField f = est.estimate_flow(ref, tgt);
    CHECK(interior_epe(f, -ty, -tx, 8) < 0.5);
  }
}

TEST_CASE("estimated flow actually registers the frames") {
  const Tensor ref = textured_plane(48, 48, 33);
  const Tensor tgt = shift_plane(ref, 2.0, -1.5);
  const FlowEstimator est;
  const Tensor warped = warp_plane(ref, est.estimate_flow(ref, tgt));
  double before = 0, after = 0;
  int n = 0;
  for (int y = 8; y < 40; ++y)
    for (int x = 8; x < 40; ++x) {
      before += std::abs(ref.at(y, x) - tgt.at(y, x));
      after += std::abs(warped.at(y, x) - tgt.at(y, x));
      ++n;
    }
  CHECK(after / n < 0.2 * (before / n));
}

TEST_CASE("identical frames give (near) zero flow") {
  const Tensor ref = textured_plane(32, 32, 34);
  const FlowEstimator est;
  const FlowField f = est.estimate_flow(ref, ref);
  CHECK(interior_epe(f, 0.0, 0.0, 2) < 1e-3);
}

TEST_CASE("estimate_flow rejects mismatched shapes") {
  const FlowEstimator est;
  CHECK_THROWS_AS(est.estimate_flow(Tensor::zeros({32, 32}), Tensor::zeros({32, 48})),
                  std::invalid_argument);
}

TEST_CASE("align_window: center passes through; neighbors move toward it") {
  const Tensor center = textured_plane(48, 48, 35);
  const Tensor prev = shift_plane(center, -2.0, 1.0);
  const Tensor next = shift_plane(center, 2.0, -1.0);
  for (const bool direct : {false, true}) {
    FlowEstimator est;
    est.direct_to_center = direct;
    const WindowAlignment wa = align_window({prev, center, next}, est);
    REQUIRE(wa.aligned.size() == 3);
    CHECK(wa.step_flows.size() == 2);
    // Center frame is never resampled.
    double cdiff = 0;
    for (size_t i = 0; i < center.v.size(); ++i)
      cdiff = std::max(cdiff, std::abs(static_cast<double>(wa.aligned[1].v[i]) - center.v[i]));
    CHECK(cdiff == 0.0);
    for (const size_t side : {size_t{0}, size_t{2}}) {
      double before = 0, after = 0;
      int n = 0;
      const Tensor& raw = side == 0 ? prev : next;
      for (int y = 8; y < 40; ++y)
        for (int x = 8; x < 40; ++x) {
          before += std::abs(raw.at(y, x) - center.at(y, x));
          after += std::abs(wa.aligned[side].at(y, x) - center.at(y, x));
          ++n;
        }
      CHECK(after < 0.5 * before);
    }
  }
}

TEST_CASE("single-frame window aligns trivially") {
  const Tensor only = textured_plane(32, 32, 36);
  const WindowAlignment wa = align_window({only}, FlowEstimator{});
  REQUIRE(wa.aligned.size() == 1);
  CHECK(wa.step_flows.empty());
}
