#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tsan/ops.hpp"
#include "tsan/tensor.hpp"

namespace tsan {

/// Per-pixel motion, positive values displace sampling toward increasing
/// coordinate. Same shape as the plane it warps.
struct FlowField {
  Tensor dy, dx;  // {H,W} each

  static FlowField zeros(int H, int W) {
    return FlowField{Tensor::zeros({H, W}), Tensor::zeros({H, W})};
  }

  Tensor packed() const {  // {2,H,W} for the warp kernel
    Tensor f({2, dy.shape[0], dy.shape[1]});
    std::copy(dy.v.begin(), dy.v.end(), f.v.begin());
    std::copy(dx.v.begin(), dx.v.end(), f.v.begin() + dy.numel());
    return f;
  }
};

inline Tensor warp_plane(const Tensor& plane, const FlowField& flow) {
  return nn::warp_fwd(plane.as_3d(), flow.packed()).as_2d();
}

namespace detail {

inline Tensor down2_avg(const Tensor& p) {  // {H,W} -> {ceil/2}
  const int H = p.shape[0], W = p.shape[1];
  const int Ho = (H + 1) / 2, Wo = (W + 1) / 2;
  Tensor out({Ho, Wo});
  for (int y = 0; y < Ho; ++y)
    for (int x = 0; x < Wo; ++x) {
      const int y1 = std::min(2 * y + 1, H - 1), x1 = std::min(2 * x + 1, W - 1);
      out.at(y, x) = 0.25f * (p.at(2 * y, 2 * x) + p.at(2 * y, x1) + p.at(y1, 2 * x) + p.at(y1, x1));
    }
  return out;
}

/// Box-filter sum over a (2r+1)^2 window, truncated at the borders.
inline Tensor box_sum(const Tensor& p, int r) {
  const int H = p.shape[0], W = p.shape[1];
  Tensor rows({H, W}), out({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float s = 0;
      for (int dx = -r; dx <= r; ++dx) {
        const int xx = x + dx;
        if (xx >= 0 && xx < W) s += p.at(y, xx);
      }
      rows.at(y, x) = s;
    }
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      float s = 0;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        if (yy >= 0 && yy < H) s += rows.at(yy, x);
      }
      out.at(y, x) = s;
    }
  return out;
}

/// Normalized box blur (border-truncated), used to regularize the flow field
/// between iterations; per-pixel updates oscillate without it.
inline Tensor box_blur(const Tensor& p, int r) {
  Tensor counts = box_sum(Tensor::full(p.shape, 1.0f), r);
  Tensor out = box_sum(p, r);
  for (size_t i = 0; i < out.v.size(); ++i) out.v[i] /= counts.v[i];
  return out;
}

}  // namespace detail

/// Coarse-to-fine Lucas-Kanade flow. Deterministic given inputs and
/// configuration; stateless after construction. Stands in for a learned
/// estimator behind the same estimate/align surface.
struct FlowEstimator {
  int pyramid_levels = 3;
  int iterations_per_level = 10;
  int window_radius = 3;
  bool direct_to_center = false;  // align_window: skip the chained stepping

  /// Displacement such that warp_plane(reference, flow) ~ target.
  FlowField estimate_flow(const Tensor& reference, const Tensor& target) const {
    if (reference.shape != target.shape)
      throw std::invalid_argument("estimate_flow: shape mismatch " + shape_str(reference.shape) +
                                  " vs " + shape_str(target.shape));
    std::vector<Tensor> pr{reference}, pt{target};
    for (int l = 1; l < pyramid_levels; ++l) {
      if (pr.back().shape[0] < 16 || pr.back().shape[1] < 16) break;
      pr.push_back(detail::down2_avg(pr.back()));
      pt.push_back(detail::down2_avg(pt.back()));
    }
    FlowField flow = FlowField::zeros(pr.back().shape[0], pr.back().shape[1]);
    for (int l = static_cast<int>(pr.size()) - 1; l >= 0; --l) {
      if (flow.dy.shape != std::vector<int>{pr[static_cast<size_t>(l)].shape[0], pr[static_cast<size_t>(l)].shape[1]}) {
        // carry flow up one level, doubling both resolution and magnitude
        const int H = pr[static_cast<size_t>(l)].shape[0], W = pr[static_cast<size_t>(l)].shape[1];
        Tensor up_y = nn::resize_bilinear_fwd(flow.dy.as_3d(), H, W).as_2d();
        Tensor up_x = nn::resize_bilinear_fwd(flow.dx.as_3d(), H, W).as_2d();
        for (auto& v : up_y.v) v *= 2.0f;
        for (auto& v : up_x.v) v *= 2.0f;
        flow = FlowField{std::move(up_y), std::move(up_x)};
      }
      refine_level(pr[static_cast<size_t>(l)], pt[static_cast<size_t>(l)], flow);
    }
    return flow;
  }

 private:
  void refine_level(const Tensor& ref, const Tensor& tgt, FlowField& flow) const {
    const int H = ref.shape[0], W = ref.shape[1];
    const float lambda = 1e-4f;
    for (int it = 0; it < iterations_per_level; ++it) {
      const Tensor warped = warp_plane(ref, flow);
      Tensor ix({H, W}), iy({H, W}), itm({H, W});
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int xm = std::max(x - 1, 0), xp = std::min(x + 1, W - 1);
          const int ym = std::max(y - 1, 0), yp = std::min(y + 1, H - 1);
          ix.at(y, x) = 0.5f * (warped.at(y, xp) - warped.at(y, xm));
          iy.at(y, x) = 0.5f * (warped.at(yp, x) - warped.at(ym, x));
          itm.at(y, x) = warped.at(y, x) - tgt.at(y, x);
        }
      Tensor ixx({H, W}), ixy({H, W}), iyy({H, W}), ixt({H, W}), iyt({H, W});
      for (int i = 0; i < H * W; ++i) {
        ixx.v[static_cast<size_t>(i)] = ix.v[static_cast<size_t>(i)] * ix.v[static_cast<size_t>(i)];
        ixy.v[static_cast<size_t>(i)] = ix.v[static_cast<size_t>(i)] * iy.v[static_cast<size_t>(i)];
        iyy.v[static_cast<size_t>(i)] = iy.v[static_cast<size_t>(i)] * iy.v[static_cast<size_t>(i)];
        ixt.v[static_cast<size_t>(i)] = ix.v[static_cast<size_t>(i)] * itm.v[static_cast<size_t>(i)];
        iyt.v[static_cast<size_t>(i)] = iy.v[static_cast<size_t>(i)] * itm.v[static_cast<size_t>(i)];
      }
      const int r = window_radius;
      const Tensor sxx = detail::box_sum(ixx, r), sxy = detail::box_sum(ixy, r);
      const Tensor syy = detail::box_sum(iyy, r), sxt = detail::box_sum(ixt, r);
      const Tensor syt = detail::box_sum(iyt, r);
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const float a = sxx.at(y, x) + lambda, bxy = sxy.at(y, x), c = syy.at(y, x) + lambda;
          const float det = a * c - bxy * bxy;
          if (det <= 1e-12f) continue;
          const float bx = -sxt.at(y, x), by = -syt.at(y, x);
          float ux = (c * bx - bxy * by) / det;
          float uy = (a * by - bxy * bx) / det;
          flow.dx.at(y, x) += std::clamp(ux, -2.0f, 2.0f);
          flow.dy.at(y, x) += std::clamp(uy, -2.0f, 2.0f);
        }
      flow.dx = detail::box_blur(flow.dx, window_radius);
      flow.dy = detail::box_blur(flow.dy, window_radius);
    }
  }
};

/// Aligned window plus the adjacent-pair flows feeding the offset predictor.
struct WindowAlignment {
  std::vector<Tensor> aligned;      // 2T+1 planes, temporal order
  std::vector<FlowField> step_flows;  // 2T adjacent-pair flows, directed toward the center
};

/// Chain-aligns every frame of a 2T+1 window toward the center frame, one
/// timestep at a time (or in a single hop when direct_to_center is set).
inline WindowAlignment align_window(const std::vector<Tensor>& frames, const FlowEstimator& est) {
  if (frames.empty() || frames.size() % 2 == 0)
    throw std::invalid_argument("align_window: window must hold 2T+1 frames");
  const int n = static_cast<int>(frames.size());
  const int center = n / 2;
  WindowAlignment wa;
  wa.aligned.resize(static_cast<size_t>(n));
  wa.aligned[static_cast<size_t>(center)] = frames[static_cast<size_t>(center)];
  for (int j = 0; j + 1 < n; ++j) {
    const int src = (j < center) ? j : j + 1;
    const int dst = (j < center) ? j + 1 : j;
    wa.step_flows.push_back(est.estimate_flow(frames[static_cast<size_t>(src)], frames[static_cast<size_t>(dst)]));
  }
  for (int j = 0; j < n; ++j) {
    if (j == center) continue;
    Tensor cur = frames[static_cast<size_t>(j)];
    if (est.direct_to_center) {
      cur = warp_plane(cur, est.estimate_flow(cur, frames[static_cast<size_t>(center)]));
    } else {
      const int step = (j < center) ? 1 : -1;
      for (int p = j; p != center; p += step)
        cur = warp_plane(cur, est.estimate_flow(cur, frames[static_cast<size_t>(p + step)]));
    }
    wa.aligned[static_cast<size_t>(j)] = std::move(cur);
  }
  return wa;
}

}  // namespace tsan
