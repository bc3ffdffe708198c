#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "dlm/tensor.hpp"

namespace dlm::testing {

// Central-difference roundoff level; floors tensors whose exact gradient is
// zero, such as attention key biases.
inline constexpr double kGradNormFloor = 1e-6;

struct GradCheck {
  // max over tensors of ||autodiff - central|| / (||central|| + kGradNormFloor)
  double max_relative_error = 0.0;
  std::string worst;
  std::size_t checked = 0;
};

// `loss` must rebuild the computation from the current values of `params`
// every call and return a scalar.
inline GradCheck check_gradients(const std::function<Tensord()>& loss, std::vector<std::pair<std::string, Tensord>> params,
                                 double h = 1e-4) {
  for (auto& [name, p] : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const Tensord l = loss();
    tape.backward(l);
  }
  GradCheck result;
  for (auto& [name, p] : params) {
    std::vector<double> analytic(p.numel(), 0.0);
    if (p.has_grad()) std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
    double diff2 = 0.0;
    double ref2 = 0.0;
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = loss().item();
      values[i] = saved - h;
      const double down = loss().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      ref2 += numeric * numeric;
      ++result.checked;
    }
    const double rel = std::sqrt(diff2) / (std::sqrt(ref2) + kGradNormFloor);
    if (result.worst.empty() || rel > result.max_relative_error) {
      result.max_relative_error = rel;
      result.worst = name;
    }
  }
  return result;
}

}  // namespace dlm::testing
