#include "gaussmark/watermark.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gaussmark {

WatermarkKey make_key(std::size_t d, double sigma, std::uint64_t master_seed, std::uint64_t stream_id) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidInput("make_key: sigma must be positive and finite");
  RngStream rng(master_seed, stream_id);
  WatermarkKey key;
  key.xi = sample_gaussian_vector(d, sigma, rng).values;
  key.sigma = sigma;
  key.master_seed = master_seed;
  key.stream_id = stream_id;
  return key;
}

WatermarkKey key_from_values(Vec xi, double sigma) {
  if (sigma < 0.0 || !std::isfinite(sigma)) throw InvalidInput("key_from_values: sigma must be nonnegative");
  WatermarkKey key;
  key.xi = std::move(xi);
  key.sigma = sigma;
  return key;
}

Vec perturb(std::span<const double> theta, const WatermarkKey& key) {
  if (theta.size() != key.xi.size()) throw DimensionError("perturb: key length differs from parameter length");
  Vec out(theta.begin(), theta.end());
  axpy(1.0, key.xi, out);
  return out;
}

ModelPtr watermarked_model(const LanguageModel& model, const WatermarkKey& key) {
  return model.with_params(perturb(model.params(), key));
}

Tokens generate(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt, std::size_t length,
                RngStream& rng) {
  if (length == 0) throw InvalidInput("generate: response length must be at least 1");
  return sample_sequence(*watermarked_model(model, key), prompt, length, rng);
}

Vec detection_gradient(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt,
                       std::span<const Token> y) {
  if (key.xi.size() != model.param_dim()) throw DimensionError("detect: key length differs from parameter length");
  Vec g = model.grad_log_prob(prompt, y);
  if (key.projector) g = project_gradient(g, *key.projector);
  return g;
}

double alignment_statistic(std::span<const double> xi, double sigma, std::span<const double> grad) {
  const double gn = norm(grad);
  if (gn <= kNullGradientTolerance) throw NullGradient("gradient norm below tolerance; statistic undefined");
  if (!(sigma > 0.0)) throw InvalidInput("alignment_statistic: sigma must be positive");
  return dot(xi, grad) / (sigma * gn);
}

double test_statistic(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt,
                      std::span<const Token> y) {
  return alignment_statistic(key.xi, key.sigma, detection_gradient(model, key, prompt, y));
}

double p_value(double psi) { return normal_sf(psi); }

double rejection_threshold(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
  return -normal_quantile(alpha);
}

const char* to_string(Decision d) { return d == Decision::Reject ? "reject" : "fail_to_reject"; }

DetectionReport detect_from_gradient(const WatermarkKey& key, std::span<const double> grad, double alpha) {
  DetectionReport r;
  r.alpha = alpha;
  r.tau_alpha = rejection_threshold(alpha);
  r.grad_norm = norm(grad);
  if (r.grad_norm <= kNullGradientTolerance) {
    r.null_gradient = true;
    r.p_value = 1.0;
    r.psi = 0.0;
    return r;
  }
  r.psi = alignment_statistic(key.xi, key.sigma, grad);
  r.p_value = p_value(r.psi);
  r.decision = r.psi >= r.tau_alpha ? Decision::Reject : Decision::FailToReject;
  return r;
}

DetectionReport detect(const LanguageModel& model, const WatermarkKey& key, std::span<const Token> prompt,
                       std::span<const Token> y, double alpha) {
  rejection_threshold(alpha);
  return detect_from_gradient(key, detection_gradient(model, key, prompt, y), alpha);
}

TokenKeyChain make_key_chain(std::size_t count, std::size_t d, double sigma, std::uint64_t master_seed,
                             std::uint64_t stream_id) {
  if (count == 0) throw InvalidInput("make_key_chain: need at least one key");
  TokenKeyChain chain;
  chain.keys.reserve(count);
  const RngStream parent(master_seed, stream_id);
  for (std::size_t k = 0; k < count; ++k) chain.keys.push_back(make_key(d, sigma, master_seed, parent.derive(k).stream_id()));
  return chain;
}

Tokens robust_generate(const LanguageModel& model, const TokenKeyChain& chain, std::span<const Token> prompt,
                       RngStream& rng) {
  if (chain.keys.empty()) throw InvalidInput("robust_generate: empty key chain");
  validate_tokens(prompt, model.vocab_size());
  Tokens context(prompt.begin(), prompt.end());
  for (const WatermarkKey& key : chain.keys) {
    const Vec params = perturb(model.params(), key);
    context.push_back(sample_categorical(model.next_token_dist_at(params, context), rng));
  }
  return Tokens(context.begin() + static_cast<std::ptrdiff_t>(prompt.size()), context.end());
}

TokenStatistics per_token_statistics(const LanguageModel& model, const TokenKeyChain& chain,
                                     std::span<const Token> prompt, std::span<const Token> y) {
  if (y.size() != chain.size()) throw DimensionError("per_token_statistics: response length must equal chain length");
  validate_tokens(prompt, model.vocab_size());
  validate_tokens(y, model.vocab_size());
  TokenStatistics out{Vec(y.size(), 0.0), std::vector<bool>(y.size(), false)};
  Tokens context(prompt.begin(), prompt.end());
  for (std::size_t k = 0; k < y.size(); ++k) {
    const WatermarkKey& key = chain.keys[k];
    Vec g = model.token_grad(context, y[k]);
    if (key.projector) g = project_gradient(g, *key.projector);
    if (norm(g) <= kNullGradientTolerance)
      out.null_gradient[k] = true;
    else
      out.gammas[k] = alignment_statistic(key.xi, key.sigma, g);
    context.push_back(y[k]);
  }
  return out;
}

double quantile_lambda(std::span<const double> values, double lambda_prime) {
  if (values.empty()) throw EmptyInput("quantile_lambda: no values");
  if (!(lambda_prime > 0.0 && lambda_prime < 1.0)) throw DomainError("quantile_lambda: lambda' must lie in (0, 1)");
  Vec sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const auto K = static_cast<double>(sorted.size());
  // Walk distinct values upward; the empirical CDF at sorted[i] counts all ties.
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    if (static_cast<double>(j) / K > lambda_prime) break;
    best = sorted[i];
    i = j;
  }
  return best;
}

RobustDetectionReport robust_detect_from_statistics(const TokenStatistics& stats, double alpha0, double lambda_prime) {
  RobustDetectionReport r;
  r.gammas = stats.gammas;
  r.null_gradients = static_cast<std::size_t>(std::count(stats.null_gradient.begin(), stats.null_gradient.end(), true));
  r.lambda_prime = lambda_prime;
  r.token_level_alpha = alpha0;
  r.threshold = rejection_threshold(alpha0);
  r.statistic = quantile_lambda(stats.gammas, lambda_prime);
  r.decision = r.statistic >= r.threshold ? Decision::Reject : Decision::FailToReject;
  return r;
}

RobustDetectionReport robust_detect(const LanguageModel& model, const TokenKeyChain& chain,
                                    std::span<const Token> prompt, std::span<const Token> y, double alpha0,
                                    double lambda_prime) {
  rejection_threshold(alpha0);
  if (!(lambda_prime > 0.0 && lambda_prime < 1.0)) throw DomainError("robust_detect: lambda' must lie in (0, 1)");
  return robust_detect_from_statistics(per_token_statistics(model, chain, prompt, y), alpha0, lambda_prime);
}

}  // namespace gaussmark
