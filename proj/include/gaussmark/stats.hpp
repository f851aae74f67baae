#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "gaussmark/linalg.hpp"

namespace gaussmark::stats {

double mean(std::span<const double> xs);
// Unbiased sample variance.
double variance(std::span<const double> xs);
// Standard error of the mean.
double standard_error(std::span<const double> xs);
double median(std::vector<double> xs);
// Linear-interpolation quantile (type 7), q in [0, 1].
double quantile(std::vector<double> xs, double q);
double correlation(std::span<const double> xs, std::span<const double> ys);

// Two-sided Kolmogorov-Smirnov distance sup |F_n - F|.
double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf);
double ks_uniform(std::vector<double> xs);
double ks_standard_normal(std::vector<double> xs);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

// Wilson score interval for a binomial proportion; z = 1.96 gives 95%.
Interval wilson_interval(std::size_t successes, std::size_t n, double z = 1.959963984540054);

// Binomial standard error sqrt(p (1 - p) / n).
double binomial_se(double p, std::size_t n);

struct RocPoint {
  double false_positive_rate;
  double true_positive_rate;
};

// Scores where smaller is "more watermarked" (p-values). AUC counts ties as 1/2.
double auc_from_pvalues(std::span<const double> positive_pvalues, std::span<const double> null_pvalues);
std::vector<RocPoint> roc_from_pvalues(std::span<const double> positive_pvalues,
                                       std::span<const double> null_pvalues, std::size_t points = 21);

}  // namespace gaussmark::stats
