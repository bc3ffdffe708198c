#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace dlm {

// Unweighted mean of per-class F1 over all num_labels classes. A class with
// no predictions and no gold instances scores 0.
double macro_f1(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds, std::size_t num_labels);

double accuracy(std::span<const std::int32_t> preds, std::span<const std::int32_t> golds);

double mean(std::span<const double> xs);
// n - 1 denominator; 0 for a single value.
double sample_std(std::span<const double> xs);

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p_value = 1.0;  // two-sided
};

// Unequal-variance two-sample test with Welch-Satterthwaite degrees of
// freedom. Both samples constant: p = 1 for equal means, 0 otherwise.
TTestResult welch_t_test(std::span<const double> a, std::span<const double> b);

// Paired test on a[i] - b[i].
TTestResult paired_t_test(std::span<const double> a, std::span<const double> b);

// Two-sided tail probability of |T| >= |t| for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

}  // namespace dlm
