#pragma once

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsan/tensor.hpp"

namespace tsan {

/// Sequence means cap infinite per-frame PSNR at this value.
constexpr double kPsnrCap = 100.0;

/// Peak signal-to-noise ratio in dB between two [0,1] luma planes,
/// interpreted on the 8-bit [0,255] scale. Identical planes give +inf.
inline double psnr(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("psnr: shape mismatch");
  double mse = 0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = (static_cast<double>(a.v[i]) - b.v[i]) * 255.0;
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / mse);
}

inline double capped_psnr(const Tensor& a, const Tensor& b) {
  return std::min(psnr(a, b), kPsnrCap);
}

namespace detail {

inline std::vector<double> gaussian_window(int radius, double sigma) {
  std::vector<double> w(static_cast<size_t>(2 * radius + 1));
  double sum = 0;
  for (int i = -radius; i <= radius; ++i) {
    w[static_cast<size_t>(i + radius)] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += w[static_cast<size_t>(i + radius)];
  }
  for (auto& x : w) x /= sum;
  return w;
}

// Separable Gaussian filtering restricted to the valid (fully covered) region.
inline std::vector<double> gauss_filter_valid(const std::vector<double>& img, int H, int W,
                                              const std::vector<double>& win, int r,
                                              int* Hv, int* Wv) {
  *Hv = H - 2 * r;
  *Wv = W - 2 * r;
  std::vector<double> tmp(static_cast<size_t>(H) * (*Wv));
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < *Wv; ++x) {
      double s = 0;
      for (int k = 0; k < 2 * r + 1; ++k) s += win[static_cast<size_t>(k)] * img[static_cast<size_t>(y) * W + x + k];
      tmp[static_cast<size_t>(y) * (*Wv) + x] = s;
    }
  std::vector<double> out(static_cast<size_t>(*Hv) * (*Wv));
  for (int y = 0; y < *Hv; ++y)
    for (int x = 0; x < *Wv; ++x) {
      double s = 0;
      for (int k = 0; k < 2 * r + 1; ++k) s += win[static_cast<size_t>(k)] * tmp[static_cast<size_t>(y + k) * (*Wv) + x];
      out[static_cast<size_t>(y) * (*Wv) + x] = s;
    }
  return out;
}

}  // namespace detail

/// Single-scale SSIM: 11x11 Gaussian window sigma=1.5, K1=0.01, K2=0.03,
/// dynamic range 255, mean over valid windows.
inline double ssim(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("ssim: shape mismatch");
  const int H = a.shape[a.ndim() - 2], W = a.shape.back();
  constexpr int r = 5;
  if (H < 11 || W < 11) throw std::invalid_argument("ssim: planes must be at least 11x11");
  const double C1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double C2 = (0.03 * 255.0) * (0.03 * 255.0);
  const auto win = detail::gaussian_window(r, 1.5);

  const size_t n = a.v.size();
  std::vector<double> da(n), db(n), daa(n), dbb(n), dab(n);
  for (size_t i = 0; i < n; ++i) {
    da[i] = a.v[i] * 255.0;
    db[i] = b.v[i] * 255.0;
    daa[i] = da[i] * da[i];
    dbb[i] = db[i] * db[i];
    dab[i] = da[i] * db[i];
  }
  int Hv, Wv;
  const auto mua = detail::gauss_filter_valid(da, H, W, win, r, &Hv, &Wv);
  const auto mub = detail::gauss_filter_valid(db, H, W, win, r, &Hv, &Wv);
  const auto saa = detail::gauss_filter_valid(daa, H, W, win, r, &Hv, &Wv);
  const auto sbb = detail::gauss_filter_valid(dbb, H, W, win, r, &Hv, &Wv);
  const auto sab = detail::gauss_filter_valid(dab, H, W, win, r, &Hv, &Wv);

  double acc = 0;
  for (size_t i = 0; i < mua.size(); ++i) {
    const double va = saa[i] - mua[i] * mua[i];
    const double vb = sbb[i] - mub[i] * mub[i];
    const double cov = sab[i] - mua[i] * mub[i];
    const double num = (2.0 * mua[i] * mub[i] + C1) * (2.0 * cov + C2);
    const double den = (mua[i] * mua[i] + mub[i] * mub[i] + C1) * (va + vb + C2);
    acc += num / den;
  }
  return acc / static_cast<double>(mua.size());
}

struct FrameMetrics {
  double psnr_before = 0, psnr_after = 0;
  double ssim_before = 0, ssim_after = 0;
};

struct SequenceMetrics {
  std::vector<FrameMetrics> frames;
  double mean_psnr_before = 0, mean_psnr_after = 0;
  double mean_ssim_before = 0, mean_ssim_after = 0;
  double delta_psnr = 0, delta_ssim = 0;
};

/// Per-frame PSNR/SSIM averaged over a sequence; delta = after - before.
/// `before` and `after` hold (test, reference) plane pairs, frame aligned.
inline SequenceMetrics delta_metrics(const std::vector<std::pair<Tensor, Tensor>>& before,
                                     const std::vector<std::pair<Tensor, Tensor>>& after) {
  if (before.size() != after.size() || before.empty())
    throw std::invalid_argument("delta_metrics: frame counts differ or empty");
  SequenceMetrics m;
  for (size_t i = 0; i < before.size(); ++i) {
    FrameMetrics f;
    f.psnr_before = std::min(psnr(before[i].first, before[i].second), kPsnrCap);
    f.psnr_after = std::min(psnr(after[i].first, after[i].second), kPsnrCap);
    f.ssim_before = ssim(before[i].first, before[i].second);
    f.ssim_after = ssim(after[i].first, after[i].second);
    m.mean_psnr_before += f.psnr_before;
    m.mean_psnr_after += f.psnr_after;
    m.mean_ssim_before += f.ssim_before;
    m.mean_ssim_after += f.ssim_after;
    m.frames.push_back(f);
  }
  const double n = static_cast<double>(before.size());
  m.mean_psnr_before /= n;
  m.mean_psnr_after /= n;
  m.mean_ssim_before /= n;
  m.mean_ssim_after /= n;
  m.delta_psnr = m.mean_psnr_after - m.mean_psnr_before;
  m.delta_ssim = m.mean_ssim_after - m.mean_ssim_before;
  return m;
}

/// Machine-readable per-frame report: one row per frame,
/// index  psnr_before  psnr_after  ssim_before  ssim_after.
inline void write_frame_report(const SequenceMetrics& m, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write report: " + path);
  os << "index\tpsnr_before\tpsnr_after\tssim_before\tssim_after\n";
  os << std::fixed << std::setprecision(6);
  for (size_t i = 0; i < m.frames.size(); ++i) {
    const auto& f = m.frames[i];
    os << i << '\t' << f.psnr_before << '\t' << f.psnr_after << '\t'
       << f.ssim_before << '\t' << f.ssim_after << '\n';
  }
}

}  // namespace tsan
