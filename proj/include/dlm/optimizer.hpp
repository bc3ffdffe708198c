#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dlm/checkpoint.hpp"
#include "dlm/model.hpp"

namespace dlm {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // only on entries flagged for decay
};

// Adaptive moments with decoupled weight decay:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   p <- p - lr * wd * p - lr * mhat / (sqrt(vhat) + eps)
// with bias-corrected mhat, vhat. Entries without a gradient count as g = 0.
template <typename T>
class AdamW {
 public:
  AdamW(const ParameterStore<T>& params, AdamWConfig config = {});

  void step(ParameterStore<T>& params, double learning_rate);
  std::int64_t steps() const { return step_; }
  const AdamWConfig& config() const { return config_; }

  std::vector<T>& first_moment(std::size_t entry) { return m_.at(entry); }
  std::vector<T>& second_moment(std::size_t entry) { return v_.at(entry); }

  OptimizerSnapshot snapshot(const ParameterStore<T>& params) const;
  void restore(const ParameterStore<T>& params, const OptimizerSnapshot& snapshot);

 private:
  void check_shapes(const ParameterStore<T>& params) const;

  AdamWConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

// Rescales all gradients so their joint L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm);

template <typename T>
double global_grad_norm(const ParameterStore<T>& params);

// Linear warmup to base_lr over warmup_steps, then linear decay towards 0 at
// total_steps.
class LinearSchedule {
 public:
  LinearSchedule(double base_lr, std::size_t warmup_steps, std::size_t total_steps);
  double at(std::size_t step) const;

 private:
  double base_lr_;
  std::size_t warmup_;
  std::size_t total_;
};

}  // namespace dlm
