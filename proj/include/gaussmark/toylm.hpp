#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "gaussmark/core.hpp"
#include "gaussmark/linalg.hpp"

namespace gaussmark {

using Token = std::int32_t;
using Tokens = std::vector<Token>;

// Checks every id lies in [0, vocab_size).
void validate_tokens(std::span<const Token> tokens, int vocab_size);

// Concatenation x ∘ y.
Tokens concat(std::span<const Token> prefix, std::span<const Token> suffix);

// Fixed random features phi(v | context). Contexts are reduced to the last
// `context_window` tokens (padded with the sentinel id vocab_size) and hashed
// into `context_buckets` buckets; each (bucket, token) pair owns one vector.
class FeatureMap {
 public:
  struct Options {
    int vocab_size = 32;
    std::size_t dim = 256;
    int context_window = 2;
    std::size_t context_buckets = 64;
    std::uint64_t seed = 0;
    // Features are N(0, I/d) draws rescaled onto this ball when longer.
    double norm_bound = 3.0;
  };

  explicit FeatureMap(const Options& options);
  // Explicit table laid out as [bucket][token][dim].
  FeatureMap(int vocab_size, std::size_t dim, int context_window, std::size_t context_buckets, Vec table);

  int vocab_size() const { return vocab_size_; }
  std::size_t dim() const { return dim_; }
  int context_window() const { return context_window_; }
  std::size_t context_buckets() const { return buckets_; }
  std::uint64_t seed() const { return seed_; }
  double norm_bound() const { return norm_bound_; }

  std::size_t bucket(std::span<const Token> context) const;
  std::span<const double> feature(std::size_t bucket, Token token) const {
    return {table_.data() + (bucket * static_cast<std::size_t>(vocab_size_) + static_cast<std::size_t>(token)) * dim_,
            dim_};
  }

 private:
  int vocab_size_;
  std::size_t dim_;
  int context_window_;
  std::size_t buckets_;
  std::uint64_t seed_ = 0;
  double norm_bound_ = 0.0;
  Vec table_;
};

// Autoregressive model whose watermarkable parameters form one flat vector.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual int vocab_size() const = 0;
  virtual std::size_t param_dim() const = 0;
  virtual const Vec& params() const = 0;
  // Same model with the watermarkable block replaced.
  virtual std::shared_ptr<const LanguageModel> with_params(Vec params) const = 0;

  // p(. | context), where context is the full history x ∘ v_{<t}.
  virtual Vec next_token_dist(std::span<const Token> context) const = 0;
  // Next-token distribution under a different watermarkable block, without
  // building a new model.
  virtual Vec next_token_dist_at(std::span<const double> params, std::span<const Token> context) const = 0;
  // ∇ log p(token | context) with respect to the watermarkable block.
  virtual Vec token_grad(std::span<const Token> context, Token token) const = 0;
  // ∇ Σ_t log p(y_t | x ∘ y_{<t}); throws EmptySequence for empty y.
  virtual Vec grad_log_prob(std::span<const Token> prompt, std::span<const Token> y) const = 0;

  // Reconstructible description (seeds and sizes, never weights).
  virtual nlohmann::json spec() const = 0;
};

using ModelPtr = std::shared_ptr<const LanguageModel>;

// p_theta(v | x) ∝ exp(<theta, phi(v | x)>).
class LinearSoftmaxLM final : public LanguageModel {
 public:
  LinearSoftmaxLM(std::shared_ptr<const FeatureMap> features, Vec theta, nlohmann::json spec = {});

  const FeatureMap& features() const { return *features_; }
  std::shared_ptr<const FeatureMap> feature_ptr() const { return features_; }

  int vocab_size() const override { return features_->vocab_size(); }
  std::size_t param_dim() const override { return theta_.size(); }
  const Vec& params() const override { return theta_; }
  ModelPtr with_params(Vec params) const override;
  Vec next_token_dist(std::span<const Token> context) const override;
  Vec next_token_dist_at(std::span<const double> params, std::span<const Token> context) const override;
  Vec token_grad(std::span<const Token> context, Token token) const override;
  Vec grad_log_prob(std::span<const Token> prompt, std::span<const Token> y) const override;
  nlohmann::json spec() const override { return spec_; }

 private:
  std::shared_ptr<const FeatureMap> features_;
  Vec theta_;
  Vec logit_table_;  // [bucket][token] = <theta, phi>
  nlohmann::json spec_;
};

struct MlpWeights {
  Matrix embedding;  // (vocab + 1) x embed; last row embeds the padding sentinel
  Matrix output;     // vocab x hidden; the hidden x embed block W lives in the model
  Vec bias;          // vocab
};

// Mean of the last `context_window` embeddings -> ReLU(W x) -> output projection.
// Only W is perturbed or differentiated.
class MlpSoftmaxLM final : public LanguageModel {
 public:
  MlpSoftmaxLM(std::shared_ptr<const MlpWeights> frozen, Matrix hidden, int context_window, nlohmann::json spec = {});

  const Matrix& hidden_weights() const { return hidden_; }
  const MlpWeights& frozen() const { return *frozen_; }
  int context_window() const { return context_window_; }

  int vocab_size() const override { return static_cast<int>(frozen_->output.rows()); }
  std::size_t param_dim() const override { return hidden_.data().size(); }
  const Vec& params() const override { return hidden_.data(); }
  ModelPtr with_params(Vec params) const override;
  Vec next_token_dist(std::span<const Token> context) const override;
  Vec next_token_dist_at(std::span<const double> params, std::span<const Token> context) const override;
  Vec token_grad(std::span<const Token> context, Token token) const override;
  Vec grad_log_prob(std::span<const Token> prompt, std::span<const Token> y) const override;
  nlohmann::json spec() const override { return spec_; }

 private:
  struct Activations {
    Vec input;
    Vec pre;
    Vec probs;
  };
  Activations forward(std::span<const double> hidden, std::span<const Token> context) const;
  void accumulate_grad(const Activations& act, Token token, std::span<double> grad) const;

  std::shared_ptr<const MlpWeights> frozen_;
  Matrix hidden_;
  int context_window_;
  nlohmann::json spec_;
};

// Numerically stable softmax; throws NumericalOverflow on non-finite logits.
Vec softmax(std::span<const double> logits);

// Draws an index with probability proportional to weights (need not sum to 1).
Token sample_categorical(std::span<const double> weights, RngStream& rng);

Vec next_token_dist(const LanguageModel& model, std::span<const Token> context);
Tokens sample_sequence(const LanguageModel& model, std::span<const Token> prompt, std::size_t length, RngStream& rng);
double sequence_log_prob(const LanguageModel& model, std::span<const Token> prompt, std::span<const Token> y);
Vec grad_sequence_log_prob(const LinearSoftmaxLM& model, std::span<const Token> prompt, std::span<const Token> y);
Vec mlp_grad_log_prob(const MlpSoftmaxLM& model, std::span<const Token> prompt, std::span<const Token> y);

// Model construction from a JSON spec:
//   {"kind": "linear", "vocab": 32, "dim": 256, "context_window": 2,
//    "context_buckets": 64, "feature_seed": 1, "theta_seed": 2, "theta_scale": 1.0}
//   {"kind": "mlp", "vocab": 32, "embed": 16, "hidden": 32, "context_window": 2,
//    "seed": 3, "hidden_init": "random" | "identity", "hidden_scale": 1.0, "output_scale": 3.0}
// Missing fields take the defaults shown.
ModelPtr make_model(const nlohmann::json& spec);
std::shared_ptr<const LinearSoftmaxLM> make_linear_model(const nlohmann::json& spec);
std::shared_ptr<const MlpSoftmaxLM> make_mlp_model(const nlohmann::json& spec);
// Fills defaults so the spec is canonical (stable hashing).
nlohmann::json normalize_model_spec(const nlohmann::json& spec);

}  // namespace gaussmark
