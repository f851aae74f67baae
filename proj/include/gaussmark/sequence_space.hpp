#pragma once

#include <cstdint>
#include <span>

#include "gaussmark/toylm.hpp"

namespace gaussmark {

// All |V|^T responses of a fixed length after a fixed prompt, with their
// summed features Phi(y) = Σ_t phi(v_t | x ∘ v_{<t}). The sequence-level
// linear softmax p(y) ∝ exp(<theta, Phi(y)>) coincides with the autoregressive
// product only when the per-step normalizers do not depend on the context,
// i.e. for context-free feature maps.
class SequenceSpace {
 public:
  static constexpr std::size_t kMaxSequences = std::size_t{1} << 16;
  static constexpr std::size_t kMaxEntries = std::size_t{1} << 24;

  // Throws BudgetError when |V|^T or |V|^T * d exceeds the limits above.
  SequenceSpace(std::shared_ptr<const FeatureMap> features, Tokens prompt, std::size_t length);

  static bool enumerable(int vocab_size, std::size_t length, std::size_t dim);
  // i-th sequence in lexicographic order (first token most significant).
  static Tokens decode(std::size_t index, int vocab_size, std::size_t length);

  std::size_t size() const { return size_; }
  std::size_t length() const { return length_; }
  const Tokens& prompt() const { return prompt_; }
  const FeatureMap& features() const { return *features_; }

  Tokens sequence(std::size_t index) const { return decode(index, features_->vocab_size(), length_); }
  std::size_t index_of(std::span<const Token> y) const;
  std::span<const double> phi(std::size_t index) const { return {phi_.data() + index * dim(), dim()}; }
  std::size_t dim() const { return features_->dim(); }

  // <theta, Phi(y)> for every y.
  Vec scores(std::span<const double> theta) const;
  // Sequence-level log p_theta(y) for every y.
  Vec log_probs(std::span<const double> theta) const;
  // E_theta[Phi] under the sequence-level softmax.
  Vec mean_phi(std::span<const double> theta) const;
  // Sequence-level ∇ log p_theta(y) = Phi(y) − E_theta[Phi].
  Vec gradient(std::span<const double> theta, std::size_t index) const;

 private:
  std::shared_ptr<const FeatureMap> features_;
  Tokens prompt_;
  std::size_t length_;
  std::size_t size_;
  Vec phi_;
};

// log Σ_i exp(a_i), stable.
double log_sum_exp(std::span<const double> a);

struct DensityRatio {
  double value = 1.0;
  double std_error = 0.0;
  bool exact = true;
  std::size_t samples = 0;
};

// p_{theta+xi}(y|x) / p_theta(y|x) via the tilting identity
//   e^{<xi, ∇log p_theta(y|x)>} / E_{y'~p_theta} e^{<xi, ∇log p_theta(y'|x)>}.
// The expectation is enumerated when |V|^T fits the SequenceSpace limits;
// otherwise it is estimated from `mc_samples` draws (context-free features
// only, so that autoregressive sampling draws from the sequence-level model),
// and BudgetError is thrown if no Monte-Carlo budget was provided.
DensityRatio density_ratio(const LinearSoftmaxLM& model, std::span<const double> xi, std::span<const Token> prompt,
                           std::span<const Token> y, RngStream* rng = nullptr, std::size_t mc_samples = 0);

}  // namespace gaussmark
