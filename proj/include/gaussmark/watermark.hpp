#pragma once

#include <span>
#include <vector>

#include "gaussmark/key.hpp"
#include "gaussmark/rankreduce.hpp"
#include "gaussmark/toylm.hpp"

namespace gaussmark {

// Gradients at or below this norm make the statistic undefined.
inline constexpr double kNullGradientTolerance = 1e-12;

// θ + ξ; throws DimensionError on a length mismatch.
Vec perturb(std::span<const double> theta, const WatermarkKey& key);

// The model with its watermarkable block replaced by θ + ξ.
ModelPtr watermarked_model(const LanguageModel& model, const WatermarkKey& key);

// Samples T tokens from the perturbed model.
Tokens generate(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt, std::size_t length,
                RngStream& rng);

// ∇ log p_θ(y | x) at the unperturbed θ, projected when the key carries a projector.
Vec detection_gradient(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt,
                       std::span<const Token> y);

// <ξ, g> / (σ‖g‖); throws NullGradient when ‖g‖ ≤ kNullGradientTolerance.
double alignment_statistic(std::span<const double> xi, double sigma, std::span<const double> grad);

double test_statistic(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt,
                      std::span<const Token> y);

// 1 − Φ(ψ).
double p_value(double psi);
// τ_α = Φ^{-1}(1 − α); throws DomainError unless 0 < α < 1.
double rejection_threshold(double alpha);

enum class Decision { Reject, FailToReject };
const char* to_string(Decision d);

struct DetectionReport {
  double psi = 0.0;
  double grad_norm = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  double tau_alpha = 0.0;
  Decision decision = Decision::FailToReject;
  bool null_gradient = false;
};

// Decision from a precomputed gradient; a null gradient yields p = 1 with the flag set.
DetectionReport detect_from_gradient(const WatermarkKey& key, std::span<const double> grad, double alpha);

DetectionReport detect(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt,
                       std::span<const Token> y, double alpha);

// ξ_1..ξ_K drawn i.i.d. N(0, σ² I_d), key k from stream derive(k).
struct TokenKeyChain {
  std::vector<WatermarkKey> keys;

  std::size_t size() const { return keys.size(); }
  double sigma() const { return keys.empty() ? 0.0 : keys.front().sigma; }
};

TokenKeyChain make_key_chain(std::size_t count, std::size_t d, double sigma, std::uint64_t master_seed,
                             std::uint64_t stream_id);

// Token k drawn from p_{θ+ξ_k}(· | x ∘ v_{<k}).
Tokens robust_generate(const LanguageModel& model, const TokenKeyChain& chain, std::span<const Token> prompt,
                       RngStream& rng);

struct TokenStatistics {
  Vec gammas;
  std::vector<bool> null_gradient;
};

// Γ_k = <ξ_k, ∇ log p_θ(v_k | x ∘ v_{<k})> / (σ‖·‖); null gradients give Γ_k = 0 with a flag.
TokenStatistics per_token_statistics(const LanguageModel& model, const TokenKeyChain& chain,
                                     std::span<const Token> prompt, std::span<const Token> y);

// Largest order statistic Γ' with #{k : Γ_k ≤ Γ'} / K ≤ λ'; −∞ when none qualifies.
double quantile_lambda(std::span<const double> values, double lambda_prime);

struct RobustDetectionReport {
  Vec gammas;
  std::size_t null_gradients = 0;
  double lambda_prime = 0.5;
  double token_level_alpha = 0.05;
  double threshold = 0.0;
  double statistic = 0.0;
  Decision decision = Decision::FailToReject;
};

RobustDetectionReport robust_detect_from_statistics(const TokenStatistics& stats, double alpha0, double lambda_prime);

RobustDetectionReport robust_detect(const LanguageModel& model, const TokenKeyChain& chain,
                                    std::span<const Token> prompt, std::span<const Token> y, double alpha0,
                                    double lambda_prime);

}  // namespace gaussmark
