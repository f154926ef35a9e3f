#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsan/tape.hpp"
#include "tsan/tensor.hpp"

namespace tsan {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using CMapRM = Eigen::Map<const MatrixRM>;

namespace nn {

// ---------------------------------------------------------------------------
// Raw kernels (forward + adjoint). The tape wrappers below are thin.
// ---------------------------------------------------------------------------

inline void check_fmap(const Tensor& x, const char* who) {
  if (x.ndim() != 3) throw std::invalid_argument(std::string(who) + ": expected a {C,H,W} tensor, got " + shape_str(x.shape));
}

inline int conv_out_dim(int in, int k, int stride, int dilation) {
  const int pad = dilation * (k - 1) / 2;
  return (in + 2 * pad - dilation * (k - 1) - 1) / stride + 1;
}

inline Tensor im2col(const Tensor& x, int k, int stride, int dilation, int Ho, int Wo) {
  const int Ci = x.shape[0], H = x.shape[1], W = x.shape[2];
  const int pad = dilation * (k - 1) / 2;
  Tensor col({Ci * k * k, Ho * Wo});
  for (int ci = 0; ci < Ci; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        float* row = &col.v[static_cast<size_t>((ci * k + ky) * k + kx) * Ho * Wo];
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) {
            std::fill(row + static_cast<size_t>(oy) * Wo, row + static_cast<size_t>(oy + 1) * Wo, 0.0f);
            continue;
          }
          const float* src = &x.v[(static_cast<size_t>(ci) * H + iy) * W];
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            row[static_cast<size_t>(oy) * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0f;
          }
        }
      }
  return col;
}

inline void col2im_acc(const Tensor& col, int k, int stride, int dilation, int Ho, int Wo, Tensor& gx) {
  const int Ci = gx.shape[0], H = gx.shape[1], W = gx.shape[2];
  const int pad = dilation * (k - 1) / 2;
  for (int ci = 0; ci < Ci; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const float* row = &col.v[static_cast<size_t>((ci * k + ky) * k + kx) * Ho * Wo];
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky * dilation;
          if (iy < 0 || iy >= H) continue;
          float* dst = &gx.v[(static_cast<size_t>(ci) * H + iy) * W];
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx * dilation;
            if (ix >= 0 && ix < W) dst[ix] += row[static_cast<size_t>(oy) * Wo + ox];
          }
        }
      }
}

/// Dilated cross-correlation, zero padding, spatial size preserved at stride 1.
inline Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1, int dilation = 1) {
  check_fmap(x, "conv2d");
  if (w.ndim() != 4) throw std::invalid_argument("conv2d: weights must be {O,I,k,k}");
  const int Co = w.shape[0], Ci = w.shape[1], k = w.shape[2];
  if (w.shape[3] != k || k % 2 == 0) throw std::invalid_argument("conv2d: kernel must be square with odd size");
  if (x.shape[0] != Ci)
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.shape[0]) + " channels, weights expect " + std::to_string(Ci));
  if (b.numel() != Co) throw std::invalid_argument("conv2d: bias length mismatch");
  const int Ho = conv_out_dim(x.shape[1], k, stride, dilation);
  const int Wo = conv_out_dim(x.shape[2], k, stride, dilation);
  Tensor col = im2col(x, k, stride, dilation, Ho, Wo);
  Tensor out({Co, Ho, Wo});
  CMapRM Wm(w.v.data(), Co, Ci * k * k);
  CMapRM Cm(col.v.data(), Ci * k * k, Ho * Wo);
  MapRM Om(out.v.data(), Co, Ho * Wo);
  Om.noalias() = Wm * Cm;
  for (int co = 0; co < Co; ++co) Om.row(co).array() += b.v[static_cast<size_t>(co)];
  return out;
}

inline void conv2d_bwd(const Tensor& x, const Tensor& w, int stride, int dilation, const Tensor& gout,
                       Tensor* gx, Tensor* gw, Tensor* gb) {
  const int Co = w.shape[0], Ci = w.shape[1], k = w.shape[2];
  const int Ho = gout.shape[1], Wo = gout.shape[2];
  CMapRM Gm(gout.v.data(), Co, Ho * Wo);
  if (gw || gb) {
    if (gb) {
      // Fixed-order accumulation: Eigen's vectorized redux peels to an aligned
      // boundary, so its summation order (and rounding) would depend on where
      // the heap placed gout, breaking bit-reproducible training.
      for (int co = 0; co < Co; ++co) {
        double acc = 0;
        const float* row = gout.v.data() + static_cast<size_t>(co) * Ho * Wo;
        for (int i = 0; i < Ho * Wo; ++i) acc += row[i];
        gb->v[static_cast<size_t>(co)] += static_cast<float>(acc);
      }
    }
    if (gw) {
      Tensor col = im2col(x, k, stride, dilation, Ho, Wo);
      CMapRM Cm(col.v.data(), Ci * k * k, Ho * Wo);
      MapRM GWm(gw->v.data(), Co, Ci * k * k);
      GWm.noalias() += Gm * Cm.transpose();
    }
  }
  if (gx) {
    Tensor gcol({Ci * k * k, Ho * Wo});
    CMapRM Wm(w.v.data(), Co, Ci * k * k);
    MapRM GCm(gcol.v.data(), Ci * k * k, Ho * Wo);
    GCm.noalias() = Wm.transpose() * Gm;
    col2im_acc(gcol, k, stride, dilation, Ho, Wo, *gx);
  }
}

// Bilinear sampling taps at a continuous coordinate. `zero_outside` selects
// between zero padding (deformable convolution) and clamp-to-edge (warping).
struct Taps {
  int y0, y1, x0, x1;       // clamped integer corners (-1 marks out-of-range in zero mode)
  float wy, wx;             // fractional weights toward (y1, x1)
};

inline Taps make_taps(float fy, float fx, int H, int W, bool zero_outside) {
  Taps t;
  const float fy0 = std::floor(fy), fx0 = std::floor(fx);
  t.wy = fy - fy0;
  t.wx = fx - fx0;
  const int y0 = static_cast<int>(fy0), x0 = static_cast<int>(fx0);
  if (zero_outside) {
    t.y0 = (y0 >= 0 && y0 < H) ? y0 : -1;
    t.y1 = (y0 + 1 >= 0 && y0 + 1 < H) ? y0 + 1 : -1;
    t.x0 = (x0 >= 0 && x0 < W) ? x0 : -1;
    t.x1 = (x0 + 1 >= 0 && x0 + 1 < W) ? x0 + 1 : -1;
  } else {
    t.y0 = std::clamp(y0, 0, H - 1);
    t.y1 = std::clamp(y0 + 1, 0, H - 1);
    t.x0 = std::clamp(x0, 0, W - 1);
    t.x1 = std::clamp(x0 + 1, 0, W - 1);
  }
  return t;
}

inline float tap_value(const float* ch, int W, int y, int x) {
  return (y < 0 || x < 0) ? 0.0f : ch[static_cast<size_t>(y) * W + x];
}

inline float sample_bilinear(const float* ch, int W, const Taps& t) {
  const float v00 = tap_value(ch, W, t.y0, t.x0), v01 = tap_value(ch, W, t.y0, t.x1);
  const float v10 = tap_value(ch, W, t.y1, t.x0), v11 = tap_value(ch, W, t.y1, t.x1);
  const float top = v00 + t.wx * (v01 - v00);
  const float bot = v10 + t.wx * (v11 - v10);
  return top + t.wy * (bot - top);
}

// d(sample)/d(fy), d(sample)/d(fx)
inline void sample_bilinear_grad_coord(const float* ch, int W, const Taps& t, float* dfy, float* dfx) {
  const float v00 = tap_value(ch, W, t.y0, t.x0), v01 = tap_value(ch, W, t.y0, t.x1);
  const float v10 = tap_value(ch, W, t.y1, t.x0), v11 = tap_value(ch, W, t.y1, t.x1);
  *dfy = (v10 - v00) + t.wx * ((v11 - v01) - (v10 - v00));
  *dfx = (v01 - v00) + t.wy * ((v11 - v10) - (v01 - v00));
}

inline void scatter_bilinear(float* gch, int W, const Taps& t, float g) {
  auto add = [&](int y, int x, float val) {
    if (y >= 0 && x >= 0) gch[static_cast<size_t>(y) * W + x] += val;
  };
  add(t.y0, t.x0, g * (1 - t.wy) * (1 - t.wx));
  add(t.y0, t.x1, g * (1 - t.wy) * t.wx);
  add(t.y1, t.x0, g * t.wy * (1 - t.wx));
  add(t.y1, t.x1, g * t.wy * t.wx);
}

/// out(c,y,x) = src(c, y+dy(y,x), x+dx(y,x)) with clamp-to-edge borders.
/// flow is {2,H,W} ordered (dy, dx).
inline Tensor warp_fwd(const Tensor& src, const Tensor& flow) {
  check_fmap(src, "bilinear_warp");
  const int C = src.shape[0], H = src.shape[1], W = src.shape[2];
  if (flow.ndim() != 3 || flow.shape[0] != 2 || flow.shape[1] != H || flow.shape[2] != W)
    throw std::invalid_argument("bilinear_warp: flow shape " + shape_str(flow.shape) +
                                " does not match source " + shape_str(src.shape));
  Tensor out(src.shape);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float fy = y + flow.at(0, y, x);
      const float fx = x + flow.at(1, y, x);
      const Taps t = make_taps(fy, fx, H, W, /*zero_outside=*/false);
      for (int c = 0; c < C; ++c)
        out.at(c, y, x) = sample_bilinear(&src.v[static_cast<size_t>(c) * H * W], W, t);
    }
  return out;
}

inline void warp_bwd(const Tensor& src, const Tensor& flow, const Tensor& gout, Tensor* gsrc, Tensor* gflow) {
  const int C = src.shape[0], H = src.shape[1], W = src.shape[2];
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const float fy = y + flow.at(0, y, x);
      const float fx = x + flow.at(1, y, x);
      const Taps t = make_taps(fy, fx, H, W, false);
      float gy = 0, gx_ = 0;
      for (int c = 0; c < C; ++c) {
        const float g = gout.at(c, y, x);
        if (gsrc) scatter_bilinear(&gsrc->v[static_cast<size_t>(c) * H * W], W, t, g);
        if (gflow) {
          float dfy, dfx;
          sample_bilinear_grad_coord(&src.v[static_cast<size_t>(c) * H * W], W, t, &dfy, &dfx);
          gy += g * dfy;
          gx_ += g * dfx;
        }
      }
      if (gflow) {
        gflow->at(0, y, x) += gy;
        gflow->at(1, y, x) += gx_;
      }
    }
}

/// Deformable 3x3 (or kxk) convolution: F(p0) = sum_k w_k * x(p0 + p_k + dp_k),
/// fractional taps sampled bilinearly with zero outside the image so that a
/// zero offset field reduces exactly to conv2d with zero padding.
/// offsets: {2K,H,W}, ordered (dy_1, dx_1, ..., dy_K, dx_K) over row-major R.
inline Tensor deform_fwd(const Tensor& x, const Tensor& w, const Tensor& b, const Tensor& off, int dilation = 1) {
  check_fmap(x, "deform_conv2d");
  const int Co = w.shape[0], Ci = w.shape[1], k = w.shape[2];
  const int H = x.shape[1], W = x.shape[2];
  const int K = k * k;
  if (x.shape[0] != Ci) throw std::invalid_argument("deform_conv2d: channel mismatch");
  if (off.ndim() != 3 || off.shape[0] != 2 * K || off.shape[1] != H || off.shape[2] != W)
    throw std::invalid_argument("deform_conv2d: offsets must be {2K,H,W} with K=" + std::to_string(K) +
                                ", got " + shape_str(off.shape));
  const int half = (k - 1) / 2;
  Tensor out({Co, H, W});
  std::vector<float> sampled(static_cast<size_t>(Ci) * K);
  CMapRM Wm(w.v.data(), Co, Ci * K);
  for (int y = 0; y < H; ++y)
    for (int x0 = 0; x0 < W; ++x0) {
      for (int t = 0; t < K; ++t) {
        const int py = (t / k - half) * dilation, px = (t % k - half) * dilation;
        const float fy = y + py + off.at(2 * t, y, x0);
        const float fx = x0 + px + off.at(2 * t + 1, y, x0);
        const Taps tp = make_taps(fy, fx, H, W, /*zero_outside=*/true);
        for (int ci = 0; ci < Ci; ++ci)
          sampled[static_cast<size_t>(ci) * K + t] = sample_bilinear(&x.v[static_cast<size_t>(ci) * H * W], W, tp);
      }
      Eigen::Map<const Eigen::VectorXf> sv(sampled.data(), Ci * K);
      Eigen::VectorXf o = Wm * sv;
      for (int co = 0; co < Co; ++co) out.at(co, y, x0) = o[co] + b.v[static_cast<size_t>(co)];
    }
  return out;
}

inline void deform_bwd(const Tensor& x, const Tensor& w, const Tensor& off, int dilation, const Tensor& gout,
                       Tensor* gx, Tensor* gw, Tensor* gb, Tensor* goff) {
  const int Co = w.shape[0], Ci = w.shape[1], k = w.shape[2];
  const int H = x.shape[1], W = x.shape[2];
  const int K = k * k;
  const int half = (k - 1) / 2;
  std::vector<float> sampled(static_cast<size_t>(Ci) * K);
  std::vector<Taps> taps(static_cast<size_t>(K));
  CMapRM Wm(w.v.data(), Co, Ci * K);
  Eigen::VectorXf gcol(Co), gsamp(Ci * K);
  for (int y = 0; y < H; ++y)
    for (int x0 = 0; x0 < W; ++x0) {
      for (int t = 0; t < K; ++t) {
        const int py = (t / k - half) * dilation, px = (t % k - half) * dilation;
        const float fy = y + py + off.at(2 * t, y, x0);
        const float fx = x0 + px + off.at(2 * t + 1, y, x0);
        taps[static_cast<size_t>(t)] = make_taps(fy, fx, H, W, true);
        for (int ci = 0; ci < Ci; ++ci)
          sampled[static_cast<size_t>(ci) * K + t] =
              sample_bilinear(&x.v[static_cast<size_t>(ci) * H * W], W, taps[static_cast<size_t>(t)]);
      }
      for (int co = 0; co < Co; ++co) gcol[co] = gout.at(co, y, x0);
      if (gb)
        for (int co = 0; co < Co; ++co) gb->v[static_cast<size_t>(co)] += gcol[co];
      if (gw) {
        MapRM GWm(gw->v.data(), Co, Ci * K);
        Eigen::Map<const Eigen::VectorXf> sv(sampled.data(), Ci * K);
        GWm.noalias() += gcol * sv.transpose();
      }
      if (gx || goff) {
        gsamp.noalias() = Wm.transpose() * gcol;
        for (int t = 0; t < K; ++t) {
          const Taps& tp = taps[static_cast<size_t>(t)];
          float gy = 0, gx_ = 0;
          for (int ci = 0; ci < Ci; ++ci) {
            const float g = gsamp[ci * K + t];
            if (gx) scatter_bilinear(&gx->v[static_cast<size_t>(ci) * H * W], W, tp, g);
            if (goff) {
              float dfy, dfx;
              sample_bilinear_grad_coord(&x.v[static_cast<size_t>(ci) * H * W], W, tp, &dfy, &dfx);
              gy += g * dfy;
              gx_ += g * dfx;
            }
          }
          if (goff) {
            goff->at(2 * t, y, x0) += gy;
            goff->at(2 * t + 1, y, x0) += gx_;
          }
        }
      }
    }
}

/// Bilinear resize with half-pixel centers and clamp-to-edge borders.
inline Tensor resize_bilinear_fwd(const Tensor& x, int Ho, int Wo) {
  check_fmap(x, "resize_bilinear");
  const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
  Tensor out({C, Ho, Wo});
  const float sy = static_cast<float>(H) / Ho, sx = static_cast<float>(W) / Wo;
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      const float fy = (oy + 0.5f) * sy - 0.5f;
      const float fx = (ox + 0.5f) * sx - 0.5f;
      const Taps t = make_taps(fy, fx, H, W, false);
      for (int c = 0; c < C; ++c)
        out.at(c, oy, ox) = sample_bilinear(&x.v[static_cast<size_t>(c) * H * W], W, t);
    }
  return out;
}

inline void resize_bilinear_bwd(const std::vector<int>& xshape, const Tensor& gout, Tensor& gx) {
  const int C = xshape[0], H = xshape[1], W = xshape[2];
  const int Ho = gout.shape[1], Wo = gout.shape[2];
  const float sy = static_cast<float>(H) / Ho, sx = static_cast<float>(W) / Wo;
  for (int oy = 0; oy < Ho; ++oy)
    for (int ox = 0; ox < Wo; ++ox) {
      const float fy = (oy + 0.5f) * sy - 0.5f;
      const float fx = (ox + 0.5f) * sx - 0.5f;
      const Taps t = make_taps(fy, fx, H, W, false);
      for (int c = 0; c < C; ++c)
        scatter_bilinear(&gx.v[static_cast<size_t>(c) * H * W], W, t, gout.at(c, oy, ox));
    }
}

}  // namespace nn

// ---------------------------------------------------------------------------
// Tape ops
// ---------------------------------------------------------------------------

namespace ops {

inline int conv2d(Tape& tp, int x, int w, int b, int stride = 1, int dilation = 1) {
  Tensor out = nn::conv2d_fwd(tp.val(x), tp.val(w), tp.val(b), stride, dilation);
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    nn::conv2d_bwd(t.val(x), t.val(w), stride, dilation, g, &t.grad(x), &t.grad(w), &t.grad(b));
  });
}

inline int deform_conv2d(Tape& tp, int x, int w, int b, int off, int dilation = 1) {
  Tensor out = nn::deform_fwd(tp.val(x), tp.val(w), tp.val(b), tp.val(off), dilation);
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    nn::deform_bwd(t.val(x), t.val(w), t.val(off), dilation, g,
                   &t.grad(x), &t.grad(w), &t.grad(b), &t.grad(off));
  });
}

/// src: {C,H,W}; flow: {2,H,W} (dy, dx).
inline int bilinear_warp(Tape& tp, int src, int flow) {
  Tensor out = nn::warp_fwd(tp.val(src), tp.val(flow));
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    nn::warp_bwd(t.val(src), t.val(flow), g, &t.grad(src), &t.grad(flow));
  });
}

inline int resize_bilinear(Tape& tp, int x, int Ho, int Wo) {
  Tensor out = nn::resize_bilinear_fwd(tp.val(x), Ho, Wo);
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    nn::resize_bilinear_bwd(t.val(x).shape, t.grad(id), t.grad(x));
  });
}

inline int avg_pool2(Tape& tp, int x) {
  const Tensor& in = tp.val(x);
  nn::check_fmap(in, "avg_pool2");
  const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
  if (H % 2 || W % 2) throw std::invalid_argument("avg_pool2: H and W must be even");
  Tensor out({C, H / 2, W / 2});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int xx = 0; xx < W / 2; ++xx)
        out.at(c, y, xx) = 0.25f * (in.at(c, 2 * y, 2 * xx) + in.at(c, 2 * y, 2 * xx + 1) +
                                    in.at(c, 2 * y + 1, 2 * xx) + in.at(c, 2 * y + 1, 2 * xx + 1));
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(x);
    const int Ho = g.shape[1], Wo = g.shape[2];
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx) {
          const float gv = 0.25f * g.at(c, y, xx);
          gx.at(c, 2 * y, 2 * xx) += gv;
          gx.at(c, 2 * y, 2 * xx + 1) += gv;
          gx.at(c, 2 * y + 1, 2 * xx) += gv;
          gx.at(c, 2 * y + 1, 2 * xx + 1) += gv;
        }
  });
}

inline int max_pool2(Tape& tp, int x) {
  const Tensor& in = tp.val(x);
  nn::check_fmap(in, "max_pool2");
  const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
  if (H % 2 || W % 2) throw std::invalid_argument("max_pool2: H and W must be even");
  Tensor out({C, H / 2, W / 2});
  std::vector<int> arg(static_cast<size_t>(out.numel()));
  size_t i = 0;
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H / 2; ++y)
      for (int xx = 0; xx < W / 2; ++xx, ++i) {
        float best = -std::numeric_limits<float>::infinity();
        int bi = 0;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const float v = in.at(c, 2 * y + dy, 2 * xx + dx);
            if (v > best) {
              best = v;
              bi = (2 * y + dy) * W + (2 * xx + dx);
            }
          }
        out.at(c, y, xx) = best;
        arg[i] = c * H * W + bi;
      }
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=, arg = std::move(arg)](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(x);
    for (size_t j = 0; j < arg.size(); ++j) gx.v[static_cast<size_t>(arg[j])] += g.v[j];
  });
}

/// Pads bottom/right by edge replication so both spatial dims are even.
inline int pad_replicate_even(Tape& tp, int x) {
  const Tensor& in = tp.val(x);
  nn::check_fmap(in, "pad_replicate_even");
  const int C = in.shape[0], H = in.shape[1], W = in.shape[2];
  const int Hp = H + (H % 2), Wp = W + (W % 2);
  if (Hp == H && Wp == W) return x;
  Tensor out({C, Hp, Wp});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Hp; ++y)
      for (int xx = 0; xx < Wp; ++xx)
        out.at(c, y, xx) = in.at(c, std::min(y, H - 1), std::min(xx, W - 1));
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(x);
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < Hp; ++y)
        for (int xx = 0; xx < Wp; ++xx)
          gx.at(c, std::min(y, H - 1), std::min(xx, W - 1)) += g.at(c, y, xx);
  });
}

enum class Down { Bilinear, AveragePool, MaxPool, StridedConv };

inline Down parse_down(const std::string& s) {
  if (s == "bilinear") return Down::Bilinear;
  if (s == "average_pool") return Down::AveragePool;
  if (s == "max_pool") return Down::MaxPool;
  if (s == "strided_conv") return Down::StridedConv;
  throw std::invalid_argument("unknown downsample method: " + s);
}

/// Factor-2 downsampling; odd inputs are replicate-padded to even first.
/// StridedConv needs a 3x3 weight/bias pair, the others are parameter-free.
inline int downsample(Tape& tp, int x, Down method, int w = -1, int b = -1) {
  const int xp = pad_replicate_even(tp, x);
  const int H = tp.val(xp).shape[1], W = tp.val(xp).shape[2];
  switch (method) {
    case Down::Bilinear:
      return resize_bilinear(tp, xp, H / 2, W / 2);
    case Down::AveragePool:
      return avg_pool2(tp, xp);
    case Down::MaxPool:
      return max_pool2(tp, xp);
    case Down::StridedConv:
      if (w < 0 || b < 0) throw std::invalid_argument("downsample: strided_conv requires weights");
      return conv2d(tp, xp, w, b, /*stride=*/2, /*dilation=*/1);
  }
  throw std::invalid_argument("unknown downsample method");
}

inline int relu(Tape& tp, int x) {
  Tensor out = tp.val(x);
  for (auto& v : out.v) v = std::max(v, 0.0f);
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& in = t.val(x);
    Tensor& gx = t.grad(x);
    for (size_t j = 0; j < g.v.size(); ++j)
      if (in.v[j] > 0) gx.v[j] += g.v[j];
  });
}

inline int sigmoid(Tape& tp, int x) {
  Tensor out = tp.val(x);
  for (auto& v : out.v) v = 1.0f / (1.0f + std::exp(-v));
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& o = t.val(id);
    Tensor& gx = t.grad(x);
    for (size_t j = 0; j < g.v.size(); ++j) gx.v[j] += g.v[j] * o.v[j] * (1.0f - o.v[j]);
  });
}

inline int add(Tape& tp, int a, int b) {
  const Tensor& ta = tp.val(a);
  const Tensor& tb = tp.val(b);
  if (!ta.same_shape(tb))
    throw std::invalid_argument("add: shape mismatch " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
  Tensor out = ta;
  for (size_t j = 0; j < out.v.size(); ++j) out.v[j] += tb.v[j];
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (size_t j = 0; j < g.v.size(); ++j) {
      ga.v[j] += g.v[j];
      gb.v[j] += g.v[j];
    }
  });
}

inline int mul(Tape& tp, int a, int b) {
  const Tensor& ta = tp.val(a);
  const Tensor& tb = tp.val(b);
  if (!ta.same_shape(tb)) throw std::invalid_argument("mul: shape mismatch");
  Tensor out = ta;
  for (size_t j = 0; j < out.v.size(); ++j) out.v[j] *= tb.v[j];
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& va = t.val(a);
    const Tensor& vb = t.val(b);
    Tensor& ga = t.grad(a);
    Tensor& gb = t.grad(b);
    for (size_t j = 0; j < g.v.size(); ++j) {
      ga.v[j] += g.v[j] * vb.v[j];
      gb.v[j] += g.v[j] * va.v[j];
    }
  });
}

inline int scale(Tape& tp, int x, float s) {
  Tensor out = tp.val(x);
  for (auto& v : out.v) v *= s;
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(x);
    for (size_t j = 0; j < g.v.size(); ++j) gx.v[j] += s * g.v[j];
  });
}

inline int clamp(Tape& tp, int x, float lo, float hi) {
  Tensor out = tp.val(x);
  for (auto& v : out.v) v = std::clamp(v, lo, hi);
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    const Tensor& in = t.val(x);
    Tensor& gx = t.grad(x);
    for (size_t j = 0; j < g.v.size(); ++j)
      if (in.v[j] > lo && in.v[j] < hi) gx.v[j] += g.v[j];
  });
}

/// Concatenates {C_i,H,W} maps along the channel axis.
inline int concat(Tape& tp, const std::vector<int>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: empty input list");
  const int H = tp.val(xs[0]).shape[1], W = tp.val(xs[0]).shape[2];
  int C = 0;
  for (int x : xs) {
    nn::check_fmap(tp.val(x), "concat");
    if (tp.val(x).shape[1] != H || tp.val(x).shape[2] != W)
      throw std::invalid_argument("concat: spatial shape mismatch");
    C += tp.val(x).shape[0];
  }
  Tensor out({C, H, W});
  size_t pos = 0;
  for (int x : xs) {
    const Tensor& in = tp.val(x);
    std::copy(in.v.begin(), in.v.end(), out.v.begin() + static_cast<long>(pos));
    pos += in.v.size();
  }
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const Tensor& g = t.grad(id);
    size_t p = 0;
    for (int x : xs) {
      Tensor& gx = t.grad(x);
      for (size_t j = 0; j < gx.v.size(); ++j) gx.v[j] += g.v[p + j];
      p += gx.v.size();
    }
  });
}

/// Per-pixel mean squared error against a constant target; returns a scalar.
inline int mse(Tape& tp, int pred, Tensor target) {
  const Tensor& p = tp.val(pred);
  if (!p.same_shape(target))
    throw std::invalid_argument("mse: shape mismatch " + shape_str(p.shape) + " vs " + shape_str(target.shape));
  double acc = 0;
  for (size_t j = 0; j < p.v.size(); ++j) {
    const double d = static_cast<double>(p.v[j]) - target.v[j];
    acc += d * d;
  }
  Tensor out({1});
  out.v[0] = static_cast<float>(acc / static_cast<double>(p.numel()));
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=, tgt = std::move(target)](Tape& t) {
    const float g = t.grad(id).v[0];
    const Tensor& pv = t.val(pred);
    Tensor& gp = t.grad(pred);
    const float s = 2.0f * g / static_cast<float>(pv.numel());
    for (size_t j = 0; j < pv.v.size(); ++j) gp.v[j] += s * (pv.v[j] - tgt.v[j]);
  });
}

/// Fixed random projection <x, r>; scalarizes op outputs for gradient checks.
inline int dot_const(Tape& tp, int x, Tensor r) {
  const Tensor& p = tp.val(x);
  if (!p.same_shape(r)) throw std::invalid_argument("dot_const: shape mismatch");
  double acc = 0;
  for (size_t j = 0; j < p.v.size(); ++j) acc += static_cast<double>(p.v[j]) * r.v[j];
  Tensor out({1});
  out.v[0] = static_cast<float>(acc);
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=, rr = std::move(r)](Tape& t) {
    const float g = t.grad(id).v[0];
    Tensor& gx = t.grad(x);
    for (size_t j = 0; j < gx.v.size(); ++j) gx.v[j] += g * rr.v[j];
  });
}

/// a*x + b*y on scalars.
inline int axpby(Tape& tp, float a, int x, float b, int y) {
  if (tp.val(x).numel() != 1 || tp.val(y).numel() != 1)
    throw std::invalid_argument("axpby: scalar operands expected");
  Tensor out({1});
  out.v[0] = a * tp.val(x).v[0] + b * tp.val(y).v[0];
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const float g = t.grad(id).v[0];
    t.grad(x).v[0] += a * g;
    t.grad(y).v[0] += b * g;
  });
}

inline int add_scalars(Tape& tp, const std::vector<int>& xs, float scale_each = 1.0f) {
  if (xs.empty()) throw std::invalid_argument("add_scalars: empty");
  Tensor out({1});
  for (int x : xs) out.v[0] += tp.val(x).v[0];
  out.v[0] *= scale_each;
  const int id = static_cast<int>(tp.size());
  return tp.push(std::move(out), [=](Tape& t) {
    const float g = t.grad(id).v[0] * scale_each;
    for (int x : xs) t.grad(x).v[0] += g;
  });
}

/// y = x + conv(relu(conv(x))): the residual block used throughout.
inline int residual_block(Tape& tp, int x, int w1, int b1, int w2, int b2) {
  const int h = relu(tp, conv2d(tp, x, w1, b1));
  const int branch = conv2d(tp, h, w2, b2);
  return add(tp, x, branch);
}

}  // namespace ops

}  // namespace tsan
