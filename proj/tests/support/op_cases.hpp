#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dlm/ops.hpp"
#include "dlm/rng.hpp"
#include "dlm/tensor.hpp"

namespace dlm::testing {

inline Tensord random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensord(std::move(shape), std::move(v));
}

// Weighted sum with fixed random weights turns any output into a scalar with
// non-trivial upstream gradients.
inline Tensord project(const Tensord& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(y.shape(), rng)));
}

struct OpCase {
  std::string name;
  std::function<Tensord()> loss;
  std::vector<std::pair<std::string, Tensord>> params;
};

// One small composite loss per differentiable op.
inline std::vector<OpCase> op_gradcheck_cases() {
  Rng rng(11);
  const auto a = random_tensor({2, 3, 4}, rng);
  const auto b = random_tensor({4, 5}, rng);
  const auto c = random_tensor({1, 3, 4}, rng);
  const auto w = random_tensor({4}, rng);
  const auto gamma = random_tensor({4}, rng, 0.5, 1.5);
  const auto beta = random_tensor({4}, rng);
  const auto table = random_tensor({6, 3}, rng);
  const std::vector<std::int32_t> ids{0, 5, 2, 2};

  std::vector<OpCase> cases{
      {"matmul", [=] { return project(ops::matmul(a, b), 1); }, {{"a", a}, {"b", b}}},
      {"matmul-batched", [=] { return project(ops::matmul(a, ops::transpose(c, 1, 2)), 2); }, {{"a", a}, {"c", c}}},
      {"add", [=] { return project(ops::add(a, c), 3); }, {{"a", a}, {"c", c}}},
      {"add-vector", [=] { return project(ops::add(a, w), 4); }, {{"a", a}, {"w", w}}},
      {"mul", [=] { return project(ops::mul(a, c), 5); }, {{"a", a}, {"c", c}}},
      {"scale", [=] { return project(ops::scale(a, -1.7), 6); }, {{"a", a}}},
      {"reshape", [=] { return project(ops::reshape(a, {6, 4}), 7); }, {{"a", a}}},
      {"permute", [=] { return project(ops::permute(a, {2, 0, 1}), 8); }, {{"a", a}}},
      {"transpose", [=] { return project(ops::transpose(a, 0, 2), 9); }, {{"a", a}}},
      {"softmax", [=] { return project(ops::softmax(a, -1), 10); }, {{"a", a}}},
      {"softmax-axis1", [=] { return project(ops::softmax(a, 1), 11); }, {{"a", a}}},
      {"layer_norm", [=] { return project(ops::layer_norm(a, gamma, beta, 1e-5), 12); },
       {{"a", a}, {"gamma", gamma}, {"beta", beta}}},
      {"gelu", [=] { return project(ops::gelu(ops::scale(a, 3.0)), 13); }, {{"a", a}}},
      {"dropout",
       [=] {
         Rng drop(99);
         return project(ops::dropout(a, 0.3, drop, true), 14);
       },
       {{"a", a}}},
      {"embedding", [=] { return project(ops::embedding(table, ids, {2, 2}), 15); }, {{"table", table}}},
      {"select", [=] { return project(ops::select(a, 1, 2), 16); }, {{"a", a}}},
      {"cross_entropy",
       [=] { return ops::cross_entropy(ops::reshape(a, {6, 4}), std::vector<std::int32_t>{0, 3, -100, 1, 2, 2}, -100); },
       {{"a", a}}},
      {"sum", [=] { return ops::sum(ops::mul(a, a)); }, {{"a", a}}},
      {"mean", [=] { return ops::mean(ops::mul(a, c)); }, {{"a", a}, {"c", c}}},
  };
  return cases;
}

}  // namespace dlm::testing
