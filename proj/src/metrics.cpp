#include "dlm/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlm {
namespace {

void check_lengths(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("metric: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(golds.size()) + " gold labels");
  }
}

double variance(std::span<const double> xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size() - 1);
}

}  // namespace

double macro_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds, std::size_t num_labels) {
  check_lengths(preds, golds);
  if (num_labels == 0) throw std::invalid_argument("macro_f1: num_labels must be positive");
  std::vector<std::size_t> tp(num_labels, 0), fp(num_labels, 0), fn(num_labels, 0);
  auto check = [&](std::int32_t id) {
    if (id < 0 || static_cast<std::size_t>(id) >= num_labels) {
      throw std::out_of_range("macro_f1: label " + std::to_string(id) + " outside [0, " + std::to_string(num_labels) + ")");
    }
    return static_cast<std::size_t>(id);
  };
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const std::size_t p = check(preds[i]);
    const std::size_t g = check(golds[i]);
    if (p == g) {
      ++tp[p];
    } else {
      ++fp[p];
      ++fn[g];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_labels; ++c) {
    const std::size_t denom = 2 * tp[c] + fp[c] + fn[c];
    total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp[c]) / static_cast<double>(denom);
  }
  return total / static_cast<double>(num_labels);
}

double accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds) {
  check_lengths(preds, golds);
  if (preds.empty()) throw std::invalid_argument("accuracy: no predictions");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i] == golds[i];
  return static_cast<double>(correct) / static_cast<double>(preds.size());
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of an empty sample");
  double total = 0.0;
  for (double x : xs) total += x;
  return total / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) {
    if (xs.empty()) throw std::invalid_argument("std of an empty sample");
    return 0.0;
  }
  return std::sqrt(variance(xs));
}

double student_t_two_sided_p(double t, double df) {
  if (std::isnan(t)) return 1.0;
  if (std::isinf(t)) return 0.0;
  const boost::math::students_t_distribution<double> dist(df);
  const double p = 2.0 * boost::math::cdf(dist, -std::abs(t));
  return std::min(1.0, p);
}

namespace {

TTestResult degenerate(double mean_difference, double df) {
  TTestResult r;
  r.df = df;
  if (mean_difference == 0.0) {
    r.t = 0.0;
    r.p_value = 1.0;
  } else {
    r.t = std::copysign(std::numeric_limits<double>::infinity(), mean_difference);
    r.p_value = 0.0;
  }
  return r;
}

}  // namespace

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("t-test needs at least two values per sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double sa = variance(a) / na;
  const double sb = variance(b) / nb;
  const double diff = mean(a) - mean(b);
  const double se2 = sa + sb;
  if (se2 == 0.0) return degenerate(diff, na + nb - 2.0);
  TTestResult r;
  r.t = diff / std::sqrt(se2);
  r.df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  r.p_value = student_t_two_sided_p(r.t, r.df);
  return r;
}

TTestResult paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test needs samples of equal size");
  if (a.size() < 2) throw std::invalid_argument("t-test needs at least two values per sample");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  const double n = static_cast<double>(d.size());
  const double md = mean(d);
  const double var = variance(d);
  if (var == 0.0) return degenerate(md, n - 1.0);
  TTestResult r;
  r.t = md / std::sqrt(var / n);
  r.df = n - 1.0;
  r.p_value = student_t_two_sided_p(r.t, r.df);
  return r;
}

}  // namespace dlm
