#include "dlm/optimizer.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dlm {

template <typename T>
AdamW<T>::AdamW(const ParameterStore<T>& params, AdamWConfig config) : config_(config) {
  for (const auto& entry : params.entries()) {
    m_.emplace_back(entry.value.numel(), T{0});
    v_.emplace_back(entry.value.numel(), T{0});
  }
}

template <typename T>
void AdamW<T>::check_shapes(const ParameterStore<T>& params) const {
  if (params.size() != m_.size()) {
    throw ShapeError("optimizer tracks " + std::to_string(m_.size()) + " tensors, store has " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const auto& entry = params.entries()[i];
    if (entry.value.numel() != m_[i].size()) {
      throw ShapeError("optimizer state for '" + entry.name + "' has " + std::to_string(m_[i].size()) +
                       " elements, parameter has shape " + shape_to_string(entry.value.shape()));
    }
  }
}

template <typename T>
void AdamW<T>::step(ParameterStore<T>& params, double learning_rate) {
  check_shapes(params);
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    auto& entry = params.entries()[i];
    auto value = entry.value.mutable_data();
    const bool has_grad = entry.value.has_grad();
    const auto grad = entry.value.grad();
    const double decay = entry.decay ? config_.weight_decay : 0.0;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = has_grad ? static_cast<double>(grad[j]) : 0.0;
      const double mj = b1 * m[j] + (1.0 - b1) * g;
      const double vj = b2 * v[j] + (1.0 - b2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mhat = mj / correction1;
      const double vhat = vj / correction2;
      double p = static_cast<double>(value[j]);
      p -= learning_rate * decay * p;
      p -= learning_rate * mhat / (std::sqrt(vhat) + config_.eps);
      value[j] = static_cast<T>(p);
    }
  }
}

template <typename T>
OptimizerSnapshot AdamW<T>::snapshot(const ParameterStore<T>& params) const {
  check_shapes(params);
  OptimizerSnapshot snap;
  snap.step = step_;
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const auto& entry = params.entries()[i];
    snap.first_moment.push_back({entry.name, entry.value.shape(), std::vector<float>(m_[i].begin(), m_[i].end())});
    snap.second_moment.push_back({entry.name, entry.value.shape(), std::vector<float>(v_[i].begin(), v_[i].end())});
  }
  return snap;
}

template <typename T>
void AdamW<T>::restore(const ParameterStore<T>& params, const OptimizerSnapshot& snap) {
  if (snap.first_moment.size() != params.size() || snap.second_moment.size() != params.size()) {
    throw ShapeError("optimizer snapshot does not cover the parameter store");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& entry = params.entries()[i];
    for (const auto* arrays : {&snap.first_moment, &snap.second_moment}) {
      const auto& a = (*arrays)[i];
      if (a.name != entry.name || a.shape != entry.value.shape()) {
        throw ShapeError("optimizer snapshot entry '" + a.name + "' " + shape_to_string(a.shape) +
                         " does not match parameter '" + entry.name + "' " + shape_to_string(entry.value.shape()));
      }
    }
    m_[i].assign(snap.first_moment[i].values.begin(), snap.first_moment[i].values.end());
    v_[i].assign(snap.second_moment[i].values.begin(), snap.second_moment[i].values.end());
  }
  step_ = snap.step;
}

template <typename T>
double global_grad_norm(const ParameterStore<T>& params) {
  double total = 0.0;
  for (const auto& entry : params.entries()) {
    if (!entry.value.has_grad()) continue;
    for (T g : entry.value.grad()) total += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(total);
}

template <typename T>
double clip_grad_norm(ParameterStore<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& entry : params.entries()) {
      if (!entry.value.has_grad()) continue;
      for (T& g : entry.value.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * factor);
    }
  }
  return norm;
}

LinearSchedule::LinearSchedule(double base_lr, std::size_t warmup_steps, std::size_t total_steps)
    : base_lr_(base_lr), warmup_(warmup_steps), total_(total_steps) {
  if (!(base_lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (warmup_steps > total_steps) throw std::invalid_argument("warmup exceeds total steps");
}

double LinearSchedule::at(std::size_t step) const {
  if (step < warmup_) return base_lr_ * static_cast<double>(step + 1) / static_cast<double>(warmup_);
  if (step >= total_) return 0.0;
  return base_lr_ * static_cast<double>(total_ - step) / static_cast<double>(total_ - warmup_);
}

template class AdamW<float>;
template class AdamW<double>;
template double clip_grad_norm<float>(ParameterStore<float>&, double);
template double clip_grad_norm<double>(ParameterStore<double>&, double);
template double global_grad_norm<float>(const ParameterStore<float>&);
template double global_grad_norm<double>(const ParameterStore<double>&);

}  // namespace dlm
