#pragma once

#include <stdexcept>
#include <vector>

#include "tsan/ops.hpp"
#include "tsan/tape.hpp"
#include "tsan/tensor.hpp"

namespace tsan {

struct LossConfig {
  double alpha = 0.2;  // weight of the auxiliary (intermediate-label) term
  double beta = 0.8;   // weight of the global (raw-label) term
};

struct LossReport {
  double loss_a = 0;
  double loss_g = 0;
  double total = 0;
  LossConfig config;
};

namespace detail {

inline double batch_mse(const std::vector<Tensor>& pred, const std::vector<Tensor>& target) {
  if (pred.size() != target.size() || pred.empty())
    throw std::invalid_argument("loss: batch sizes differ or empty");
  double acc = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!pred[i].same_shape(target[i])) throw std::invalid_argument("loss: shape mismatch in batch");
    double s = 0;
    for (size_t j = 0; j < pred[i].v.size(); ++j) {
      const double d = static_cast<double>(pred[i].v[j]) - target[i].v[j];
      s += d * d;
    }
    acc += s / static_cast<double>(pred[i].numel());
  }
  return acc / static_cast<double>(pred.size());
}

}  // namespace detail

/// Mean over the batch of per-pixel MSE against the initial-encoded label.
inline double loss_auxiliary(const std::vector<Tensor>& h_re, const std::vector<Tensor>& y_init) {
  return detail::batch_mse(h_re, y_init);
}

/// Mean over the batch of per-pixel MSE against the raw label.
inline double loss_global(const std::vector<Tensor>& y_re, const std::vector<Tensor>& y_raw) {
  return detail::batch_mse(y_re, y_raw);
}

inline LossReport loss_total(double loss_a, double loss_g, const LossConfig& cfg) {
  LossReport r;
  r.loss_a = loss_a;
  r.loss_g = loss_g;
  r.config = cfg;
  r.total = cfg.alpha * loss_a + cfg.beta * loss_g;
  return r;
}

// Tape-side variants used by the training loop.

inline int batch_mse_node(Tape& tp, const std::vector<int>& preds, const std::vector<Tensor>& targets) {
  if (preds.size() != targets.size() || preds.empty())
    throw std::invalid_argument("batch_mse_node: batch sizes differ or empty");
  std::vector<int> terms;
  for (size_t i = 0; i < preds.size(); ++i) terms.push_back(ops::mse(tp, preds[i], targets[i]));
  return ops::add_scalars(tp, terms, 1.0f / static_cast<float>(terms.size()));
}

inline int loss_total_node(Tape& tp, int loss_a, int loss_g, const LossConfig& cfg) {
  return ops::axpby(tp, static_cast<float>(cfg.alpha), loss_a, static_cast<float>(cfg.beta), loss_g);
}

}  // namespace tsan
