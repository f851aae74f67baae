#include "gaussmark/stats.hpp"

#include <algorithm>
#include <cmath>

#include "gaussmark/core.hpp"

namespace gaussmark::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw EmptyInput("mean of empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double variance(std::span<const double> xs) {
  if (xs.size() < 2) throw EmptyInput("variance needs at least two values");
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

double standard_error(std::span<const double> xs) {
  return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

double median(std::vector<double> xs) { return quantile(std::move(xs), 0.5); }

double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw EmptyInput("quantile of empty sample");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile level outside [0, 1]");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

double correlation(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw DimensionError("correlation: length mismatch");
  const double mx = mean(xs), my = mean(ys);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (ys[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (ys[i] - my) * (ys[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

double ks_distance(std::vector<double> xs, const std::function<double(double)>& cdf) {
  if (xs.empty()) throw EmptyInput("ks_distance of empty sample");
  std::sort(xs.begin(), xs.end());
  const double n = static_cast<double>(xs.size());
  double d = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double f = cdf(xs[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

double ks_uniform(std::vector<double> xs) {
  return ks_distance(std::move(xs), [](double x) { return std::clamp(x, 0.0, 1.0); });
}

double ks_standard_normal(std::vector<double> xs) {
  return ks_distance(std::move(xs), [](double x) { return normal_cdf(x); });
}

Interval wilson_interval(std::size_t successes, std::size_t n, double z) {
  if (n == 0) throw EmptyInput("wilson_interval with zero trials");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double centre = (p + z2 / (2 * nn)) / (1 + z2 / nn);
  const double half = z / (1 + z2 / nn) * std::sqrt(p * (1 - p) / nn + z2 / (4 * nn * nn));
  return {std::max(0.0, std::min(p, centre - half)), std::min(1.0, std::max(p, centre + half))};
}

double binomial_se(double p, std::size_t n) {
  if (n == 0) throw EmptyInput("binomial_se with zero trials");
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

double auc_from_pvalues(std::span<const double> positive, std::span<const double> null) {
  if (positive.empty() || null.empty()) throw EmptyInput("auc needs both classes");
  std::vector<double> sorted_null(null.begin(), null.end());
  std::sort(sorted_null.begin(), sorted_null.end());
  double wins = 0.0;
  for (double p : positive) {
    const auto lo = std::lower_bound(sorted_null.begin(), sorted_null.end(), p);
    const auto hi = std::upper_bound(sorted_null.begin(), sorted_null.end(), p);
    const double greater = static_cast<double>(sorted_null.end() - hi);
    const double ties = static_cast<double>(hi - lo);
    wins += greater + 0.5 * ties;
  }
  return wins / (static_cast<double>(positive.size()) * static_cast<double>(null.size()));
}

std::vector<RocPoint> roc_from_pvalues(std::span<const double> positive, std::span<const double> null,
                                       std::size_t points) {
  if (positive.empty() || null.empty()) throw EmptyInput("roc needs both classes");
  if (points < 2) throw DomainError("roc needs at least two points");
  std::vector<RocPoint> out;
  out.reserve(points);
  for (std::size_t i = 0; i < points; ++i) {
    const double threshold = static_cast<double>(i) / static_cast<double>(points - 1);
    auto rate = [threshold](std::span<const double> xs) {
      const auto hits = std::count_if(xs.begin(), xs.end(), [threshold](double p) { return p <= threshold; });
      return static_cast<double>(hits) / static_cast<double>(xs.size());
    };
    out.push_back({rate(null), rate(positive)});
  }
  return out;
}

}  // namespace gaussmark::stats
