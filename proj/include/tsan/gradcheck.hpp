#pragma once

#include <functional>
#include <vector>

#include "tsan/ops.hpp"
#include "tsan/tape.hpp"
#include "tsan/tensor.hpp"

namespace tsan {

/// Compares reverse-mode gradients against central finite differences along
/// random directions (one directional derivative per probe). Directional
/// probes keep the difference quotient large relative to float32 roundoff
/// while still catching indexing, sign, and scale errors anywhere in the
/// gradient: a wrong entry changes dot(grad, d) for a random d.
///
/// `build` receives a fresh tape plus leaf handles for the given inputs and
/// returns a scalar node. Returns the max relative discrepancy over
/// `ndirs` probes per input tensor.
inline double grad_check(const std::function<int(Tape&, const std::vector<int>&)>& build,
                         std::vector<Tensor> inputs, double epsilon = 1e-3, int ndirs = 4) {
  auto eval = [&](const std::vector<Tensor>& ins) {
    Tape tp;
    std::vector<int> ids;
    ids.reserve(ins.size());
    for (const auto& t : ins) ids.push_back(tp.leaf(t));
    const int root = build(tp, ids);
    return static_cast<double>(tp.val(root).v[0]);
  };

  // Analytic gradients.
  Tape tp;
  std::vector<int> ids;
  for (const auto& t : inputs) ids.push_back(tp.leaf(t));
  const int root = build(tp, ids);
  tp.backward(root);

  Rng rng(97);
  double max_rel = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& analytic = tp.grad(ids[i]);
    for (int d = 0; d < ndirs; ++d) {
      Tensor dir(inputs[i].shape);
      for (auto& x : dir.v) x = (rng.uniform(0.0f, 1.0f) < 0.5f ? -1.0f : 1.0f);

      const Tensor saved = inputs[i];
      double dd = 0.0;
      for (size_t j = 0; j < dir.v.size(); ++j) {
        inputs[i].v[j] = saved.v[j] + static_cast<float>(epsilon) * dir.v[j];
        dd += static_cast<double>(analytic.v[j]) * dir.v[j];
      }
      const double fp = eval(inputs);
      for (size_t j = 0; j < dir.v.size(); ++j)
        inputs[i].v[j] = saved.v[j] - static_cast<float>(epsilon) * dir.v[j];
      const double fm = eval(inputs);
      inputs[i] = saved;

      const double fd = (fp - fm) / (2.0 * epsilon);
      const double denom = std::max({std::abs(fd), std::abs(dd), 1e-3});
      max_rel = std::max(max_rel, std::abs(fd - dd) / denom);
    }
  }
  return max_rel;
}

}  // namespace tsan
