#include "gaussmark/sequence_space.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gaussmark/stats.hpp"

namespace gaussmark {

bool SequenceSpace::enumerable(int vocab_size, std::size_t length, std::size_t dim) {
  std::size_t n = 1;
  for (std::size_t t = 0; t < length; ++t) {
    n *= static_cast<std::size_t>(vocab_size);
    if (n > kMaxSequences) return false;
  }
  return n * std::max<std::size_t>(dim, 1) <= kMaxEntries;
}

Tokens SequenceSpace::decode(std::size_t index, int vocab_size, std::size_t length) {
  Tokens y(length);
  const auto V = static_cast<std::size_t>(vocab_size);
  for (std::size_t t = length; t-- > 0;) {
    y[t] = static_cast<Token>(index % V);
    index /= V;
  }
  return y;
}

SequenceSpace::SequenceSpace(std::shared_ptr<const FeatureMap> features, Tokens prompt, std::size_t length)
    : features_(std::move(features)), prompt_(std::move(prompt)), length_(length), size_(1) {
  if (!features_) throw InvalidInput("SequenceSpace: missing feature map");
  validate_tokens(prompt_, features_->vocab_size());
  if (!enumerable(features_->vocab_size(), length_, features_->dim()))
    throw BudgetError("SequenceSpace: |V|^T exceeds the enumeration budget");
  for (std::size_t t = 0; t < length_; ++t) size_ *= static_cast<std::size_t>(features_->vocab_size());

  const std::size_t d = dim();
  phi_.assign(size_ * d, 0.0);
  Tokens context = prompt_;
  const std::size_t base = context.size();
  context.resize(base + length_);
  for (std::size_t i = 0; i < size_; ++i) {
    const Tokens y = sequence(i);
    std::copy(y.begin(), y.end(), context.begin() + static_cast<std::ptrdiff_t>(base));
    std::span<double> out(phi_.data() + i * d, d);
    for (std::size_t t = 0; t < length_; ++t) {
      const std::size_t b = features_->bucket(std::span<const Token>(context.data(), base + t));
      axpy(1.0, features_->feature(b, y[t]), out);
    }
  }
}

std::size_t SequenceSpace::index_of(std::span<const Token> y) const {
  if (y.size() != length_) throw DimensionError("SequenceSpace::index_of: wrong response length");
  validate_tokens(y, features_->vocab_size());
  std::size_t index = 0;
  for (Token v : y) index = index * static_cast<std::size_t>(features_->vocab_size()) + static_cast<std::size_t>(v);
  return index;
}

Vec SequenceSpace::scores(std::span<const double> theta) const {
  if (theta.size() != dim()) throw DimensionError("SequenceSpace: parameter length mismatch");
  Vec s(size_);
  for (std::size_t i = 0; i < size_; ++i) s[i] = dot(theta, phi(i));
  return s;
}

double log_sum_exp(std::span<const double> a) {
  if (a.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : a) s += std::exp(x - m);
  return m + std::log(s);
}

Vec SequenceSpace::log_probs(std::span<const double> theta) const {
  Vec s = scores(theta);
  const double lz = log_sum_exp(s);
  for (double& x : s) x -= lz;
  return s;
}

Vec SequenceSpace::mean_phi(std::span<const double> theta) const {
  const Vec lp = log_probs(theta);
  Vec m(dim(), 0.0);
  for (std::size_t i = 0; i < size_; ++i) axpy(std::exp(lp[i]), phi(i), m);
  return m;
}

Vec SequenceSpace::gradient(std::span<const double> theta, std::size_t index) const {
  if (index >= size_) throw InvalidInput("SequenceSpace::gradient: index out of range");
  Vec g(phi(index).begin(), phi(index).end());
  axpy(-1.0, mean_phi(theta), g);
  return g;
}

DensityRatio density_ratio(const LinearSoftmaxLM& model, std::span<const double> xi, std::span<const Token> prompt,
                           std::span<const Token> y, RngStream* rng, std::size_t mc_samples) {
  const FeatureMap& fm = model.features();
  if (xi.size() != fm.dim()) throw DimensionError("density_ratio: xi length differs from parameter dimension");
  validate_tokens(prompt, fm.vocab_size());
  validate_tokens(y, fm.vocab_size());

  // Work with <xi, Phi>; the centring term E[Phi] cancels between numerator and denominator.
  if (SequenceSpace::enumerable(fm.vocab_size(), y.size(), fm.dim())) {
    SequenceSpace space(model.feature_ptr(), Tokens(prompt.begin(), prompt.end()), y.size());
    const Vec lp = space.log_probs(model.params());
    const Vec tilt = space.scores(xi);
    Vec terms(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) terms[i] = lp[i] + tilt[i];
    const double log_ratio = tilt[space.index_of(y)] - log_sum_exp(terms);
    return {std::exp(log_ratio), 0.0, true, space.size()};
  }

  if (mc_samples == 0 || rng == nullptr)
    throw BudgetError("density_ratio: sequence space too large to enumerate and no Monte-Carlo budget given");
  if (fm.context_buckets() != 1)
    throw InvalidInput("density_ratio: Monte-Carlo estimate requires context-free features");

  auto tilt_of = [&](std::span<const Token> seq) {
    double s = 0.0;
    for (Token v : seq) s += dot(xi, fm.feature(0, v));
    return s;
  };
  const double target = tilt_of(y);
  Vec w(mc_samples);
  for (std::size_t i = 0; i < mc_samples; ++i) {
    const Tokens draw = sample_sequence(model, prompt, y.size(), *rng);
    w[i] = std::exp(tilt_of(draw) - target);
  }
  const double m = stats::mean(w);
  const double se_m = stats::standard_error(w);
  const double ratio = 1.0 / m;
  return {ratio, ratio * se_m / m, false, mc_samples};
}

}  // namespace gaussmark
