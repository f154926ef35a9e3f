#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsan {

/// Dense row-major float32 array with a small dynamic shape.
/// Conventions used throughout: planes are {H,W}, feature maps {C,H,W},
/// convolution weights {O,I,kh,kw}, flow fields {2,H,W} ordered (dy,dx).
struct Tensor {
  std::vector<int> shape;
  std::vector<float> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), 0.0f);
  }

  static long long numel_of(const std::vector<int>& s) {
    long long n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor dimension must be positive");
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

  static Tensor full(std::vector<int> s, float value) {
    Tensor t(std::move(s));
    std::fill(t.v.begin(), t.v.end(), value);
    return t;
  }

  long long numel() const { return static_cast<long long>(v.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  // Trailing spatial dims; valid for {H,W} and {C,H,W}.
  int height() const { return shape[shape.size() - 2]; }
  int width() const { return shape.back(); }
  int channels() const { return ndim() == 3 ? shape[0] : 1; }

  float& at(int y, int x) {
    assert(ndim() == 2);
    return v[static_cast<size_t>(y) * width() + x];
  }
  float at(int y, int x) const {
    assert(ndim() == 2);
    return v[static_cast<size_t>(y) * width() + x];
  }
  float& at(int c, int y, int x) {
    assert(ndim() == 3);
    return v[(static_cast<size_t>(c) * height() + y) * width() + x];
  }
  float at(int c, int y, int x) const {
    assert(ndim() == 3);
    return v[(static_cast<size_t>(c) * height() + y) * width() + x];
  }
  float& at4(int o, int i, int y, int x) {
    assert(ndim() == 4);
    return v[((static_cast<size_t>(o) * shape[1] + i) * shape[2] + y) * shape[3] + x];
  }
  float at4(int o, int i, int y, int x) const {
    assert(ndim() == 4);
    return v[((static_cast<size_t>(o) * shape[1] + i) * shape[2] + y) * shape[3] + x];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (float x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  float max_abs() const {
    float m = 0.0f;
    for (float x : v) m = std::max(m, std::abs(x));
    return m;
  }

  /// View a {H,W} plane as {1,H,W} (copies; tensors are value types).
  Tensor as_3d() const {
    if (ndim() == 3) return *this;
    if (ndim() != 2) throw std::invalid_argument("as_3d expects a 2-D or 3-D tensor");
    Tensor t;
    t.shape = {1, shape[0], shape[1]};
    t.v = v;
    return t;
  }

  Tensor as_2d() const {
    if (ndim() == 2) return *this;
    if (ndim() != 3 || shape[0] != 1)
      throw std::invalid_argument("as_2d expects a single-channel map");
    Tensor t;
    t.shape = {shape[1], shape[2]};
    t.v = v;
    return t;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string r = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + ")";
}

/// Deterministic RNG used everywhere a seed appears in a config.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  float uniform(float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(eng_);
  }
  float normal(float mean, float stddev) {
    std::normal_distribution<float> d(mean, stddev);
    return d(eng_);
  }
  int uniform_int(int lo, int hi) {  // inclusive
    std::uniform_int_distribution<int> d(lo, hi);
    return d(eng_);
  }
  uint64_t next_u64() { return eng_(); }

  Tensor uniform_tensor(std::vector<int> s, float lo, float hi) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = uniform(lo, hi);
    return t;
  }
  Tensor normal_tensor(std::vector<int> s, float mean, float stddev) {
    Tensor t(std::move(s));
    for (auto& x : t.v) x = normal(mean, stddev);
    return t;
  }

 private:
  std::mt19937_64 eng_;
};

}  // namespace tsan
