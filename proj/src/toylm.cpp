#include "gaussmark/toylm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace gaussmark {

void validate_tokens(std::span<const Token> tokens, int vocab_size) {
  for (Token t : tokens)
    if (t < 0 || t >= vocab_size)
      throw InvalidInput("token id " + std::to_string(t) + " outside vocabulary of size " + std::to_string(vocab_size));
}

Tokens concat(std::span<const Token> prefix, std::span<const Token> suffix) {
  Tokens out(prefix.begin(), prefix.end());
  out.insert(out.end(), suffix.begin(), suffix.end());
  return out;
}

// ---------------------------------------------------------------------------
// FeatureMap

FeatureMap::FeatureMap(const Options& o)
    : vocab_size_(o.vocab_size),
      dim_(o.dim),
      context_window_(o.context_window),
      buckets_(o.context_window == 0 ? 1 : o.context_buckets),
      seed_(o.seed),
      norm_bound_(o.norm_bound) {
  if (vocab_size_ < 1) throw InvalidDimension("FeatureMap: vocabulary must be nonempty");
  if (dim_ == 0) throw InvalidDimension("FeatureMap: dimension must be positive");
  if (context_window_ < 0) throw InvalidInput("FeatureMap: negative context window");
  if (buckets_ == 0) throw InvalidDimension("FeatureMap: need at least one context bucket");
  if (!(norm_bound_ > 0.0)) throw InvalidInput("FeatureMap: norm bound must be positive");

  table_.resize(buckets_ * static_cast<std::size_t>(vocab_size_) * dim_);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
  RngStream rng(seed_, 0x46454154ULL);  // "FEAT"
  for (std::size_t row = 0; row < buckets_ * static_cast<std::size_t>(vocab_size_); ++row) {
    std::span<double> v(table_.data() + row * dim_, dim_);
    for (double& x : v) x = scale * rng.normal();
    const double n = norm(v);
    if (n > norm_bound_)
      for (double& x : v) x *= norm_bound_ / n;
  }
}

FeatureMap::FeatureMap(int vocab_size, std::size_t dim, int context_window, std::size_t context_buckets, Vec table)
    : vocab_size_(vocab_size),
      dim_(dim),
      context_window_(context_window),
      buckets_(context_buckets),
      table_(std::move(table)) {
  if (vocab_size_ < 1 || dim_ == 0 || buckets_ == 0) throw InvalidDimension("FeatureMap: empty shape");
  if (table_.size() != buckets_ * static_cast<std::size_t>(vocab_size_) * dim_)
    throw DimensionError("FeatureMap: table size does not match buckets x vocab x dim");
  for (std::size_t row = 0; row < buckets_ * static_cast<std::size_t>(vocab_size_); ++row)
    norm_bound_ = std::max(norm_bound_, norm(std::span<const double>(table_.data() + row * dim_, dim_)));
}

std::size_t FeatureMap::bucket(std::span<const Token> context) const {
  if (context_window_ == 0 || buckets_ == 1) return 0;
  std::uint64_t h = mix64(seed_ ^ 0x43545854ULL);
  const auto c = static_cast<std::size_t>(context_window_);
  for (std::size_t i = 0; i < c; ++i) {
    // Window position i holds context[size - c + i], or the sentinel before the start.
    const std::size_t missing = c > context.size() ? c - context.size() : 0;
    const Token t = i < missing ? vocab_size_ : context[context.size() - c + i];
    h = hash_combine(h, static_cast<std::uint64_t>(t));
  }
  return static_cast<std::size_t>(h % buckets_);
}

// ---------------------------------------------------------------------------
// Helpers

Vec softmax(std::span<const double> logits) {
  if (logits.empty()) throw EmptyInput("softmax of empty logits");
  double m = -std::numeric_limits<double>::infinity();
  for (double l : logits) {
    if (!std::isfinite(l)) throw NumericalOverflow("softmax: non-finite logit");
    m = std::max(m, l);
  }
  Vec p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - m);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

Token sample_categorical(std::span<const double> weights, RngStream& rng) {
  if (weights.empty()) throw EmptyInput("sample_categorical: no categories");
  double total = 0.0;
  for (double w : weights) total += w;
  const double target = rng.uniform() * total;
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    last_positive = i;
    cumulative += weights[i];
    if (target < cumulative) return static_cast<Token>(i);
  }
  return static_cast<Token>(last_positive);
}

// ---------------------------------------------------------------------------
// LinearSoftmaxLM

LinearSoftmaxLM::LinearSoftmaxLM(std::shared_ptr<const FeatureMap> features, Vec theta, nlohmann::json spec)
    : features_(std::move(features)), theta_(std::move(theta)), spec_(std::move(spec)) {
  if (!features_) throw InvalidInput("LinearSoftmaxLM: missing feature map");
  if (theta_.size() != features_->dim()) throw DimensionError("LinearSoftmaxLM: theta length differs from feature dim");
  const auto V = static_cast<std::size_t>(features_->vocab_size());
  logit_table_.resize(features_->context_buckets() * V);
  for (std::size_t b = 0; b < features_->context_buckets(); ++b)
    for (std::size_t v = 0; v < V; ++v) logit_table_[b * V + v] = dot(theta_, features_->feature(b, static_cast<Token>(v)));
}

ModelPtr LinearSoftmaxLM::with_params(Vec params) const {
  return std::make_shared<LinearSoftmaxLM>(features_, std::move(params), spec_);
}

Vec LinearSoftmaxLM::next_token_dist(std::span<const Token> context) const {
  const auto V = static_cast<std::size_t>(vocab_size());
  const std::size_t b = features_->bucket(context);
  return softmax(std::span<const double>(logit_table_.data() + b * V, V));
}

Vec LinearSoftmaxLM::next_token_dist_at(std::span<const double> params, std::span<const Token> context) const {
  if (params.size() != theta_.size()) throw DimensionError("next_token_dist_at: parameter length mismatch");
  const auto V = vocab_size();
  const std::size_t b = features_->bucket(context);
  Vec logits(static_cast<std::size_t>(V));
  for (Token v = 0; v < V; ++v) logits[static_cast<std::size_t>(v)] = dot(params, features_->feature(b, v));
  return softmax(logits);
}

Vec LinearSoftmaxLM::token_grad(std::span<const Token> context, Token token) const {
  validate_tokens(std::span<const Token>(&token, 1), vocab_size());
  const std::size_t b = features_->bucket(context);
  const Vec p = next_token_dist(context);
  Vec g(features_->feature(b, token).begin(), features_->feature(b, token).end());
  for (Token v = 0; v < vocab_size(); ++v) axpy(-p[static_cast<std::size_t>(v)], features_->feature(b, v), g);
  return g;
}

Vec LinearSoftmaxLM::grad_log_prob(std::span<const Token> prompt, std::span<const Token> y) const {
  if (y.empty()) throw EmptySequence("gradient of an empty response is undefined");
  validate_tokens(prompt, vocab_size());
  validate_tokens(y, vocab_size());
  // Σ_t φ(v_t|ctx_t) − E[φ|ctx_t], grouped by bucket so each feature vector is touched once.
  const auto V = static_cast<std::size_t>(vocab_size());
  Vec coef(features_->context_buckets() * V, 0.0);
  std::vector<char> used(features_->context_buckets(), 0);
  Tokens context(prompt.begin(), prompt.end());
  context.reserve(prompt.size() + y.size());
  for (Token v : y) {
    const std::size_t b = features_->bucket(context);
    const double* logits = logit_table_.data() + b * V;
    const Vec p = softmax(std::span<const double>(logits, V));
    for (std::size_t u = 0; u < V; ++u) coef[b * V + u] -= p[u];
    coef[b * V + static_cast<std::size_t>(v)] += 1.0;
    used[b] = 1;
    context.push_back(v);
  }
  Vec g(theta_.size(), 0.0);
  for (std::size_t b = 0; b < features_->context_buckets(); ++b) {
    if (!used[b]) continue;
    for (std::size_t u = 0; u < V; ++u) {
      const double c = coef[b * V + u];
      if (c != 0.0) axpy(c, features_->feature(b, static_cast<Token>(u)), g);
    }
  }
  return g;
}

// ---------------------------------------------------------------------------
// MlpSoftmaxLM

MlpSoftmaxLM::MlpSoftmaxLM(std::shared_ptr<const MlpWeights> frozen, Matrix hidden, int context_window,
                           nlohmann::json spec)
    : frozen_(std::move(frozen)), hidden_(std::move(hidden)), context_window_(context_window), spec_(std::move(spec)) {
  if (!frozen_) throw InvalidInput("MlpSoftmaxLM: missing frozen weights");
  const auto& f = *frozen_;
  if (context_window_ < 1) throw InvalidInput("MlpSoftmaxLM: context window must be at least 1");
  if (f.output.rows() < 1) throw InvalidDimension("MlpSoftmaxLM: empty vocabulary");
  if (f.embedding.rows() != f.output.rows() + 1) throw DimensionError("MlpSoftmaxLM: embedding needs vocab + 1 rows");
  if (hidden_.cols() != f.embedding.cols()) throw DimensionError("MlpSoftmaxLM: W columns must equal embed dim");
  if (hidden_.rows() != f.output.cols()) throw DimensionError("MlpSoftmaxLM: W rows must equal output columns");
  if (f.bias.size() != f.output.rows()) throw DimensionError("MlpSoftmaxLM: bias length must equal vocab");
}

ModelPtr MlpSoftmaxLM::with_params(Vec params) const {
  if (params.size() != param_dim()) throw DimensionError("MlpSoftmaxLM::with_params: wrong parameter count");
  return std::make_shared<MlpSoftmaxLM>(frozen_, Matrix(hidden_.rows(), hidden_.cols(), std::move(params)),
                                        context_window_, spec_);
}

MlpSoftmaxLM::Activations MlpSoftmaxLM::forward(std::span<const double> hidden, std::span<const Token> context) const {
  const auto& f = *frozen_;
  const std::size_t e = f.embedding.cols(), h = hidden_.rows();
  const auto V = static_cast<std::size_t>(vocab_size());
  Activations act{Vec(e, 0.0), Vec(h, 0.0), {}};
  const auto c = static_cast<std::size_t>(context_window_);
  for (std::size_t i = 0; i < c; ++i) {
    const std::size_t missing = c > context.size() ? c - context.size() : 0;
    const std::size_t row = i < missing ? V : static_cast<std::size_t>(context[context.size() - c + i]);
    axpy(1.0 / static_cast<double>(c), f.embedding.row(row), act.input);
  }
  for (std::size_t j = 0; j < h; ++j) act.pre[j] = dot(hidden.subspan(j * e, e), act.input);
  Vec logits(f.bias);
  for (std::size_t v = 0; v < V; ++v) {
    double s = 0.0;
    for (std::size_t j = 0; j < h; ++j) s += f.output(v, j) * std::max(0.0, act.pre[j]);
    logits[v] += s;
  }
  act.probs = softmax(logits);
  return act;
}

void MlpSoftmaxLM::accumulate_grad(const Activations& act, Token token, std::span<double> grad) const {
  const auto& f = *frozen_;
  const std::size_t e = f.embedding.cols(), h = hidden_.rows();
  const auto V = static_cast<std::size_t>(vocab_size());
  // d log p / d logits = onehot − p; back through U, the ReLU gate, then W x.
  for (std::size_t j = 0; j < h; ++j) {
    if (act.pre[j] <= 0.0) continue;
    double upstream = f.output(static_cast<std::size_t>(token), j);
    for (std::size_t v = 0; v < V; ++v) upstream -= act.probs[v] * f.output(v, j);
    axpy(upstream, act.input, grad.subspan(j * e, e));
  }
}

Vec MlpSoftmaxLM::next_token_dist(std::span<const Token> context) const {
  validate_tokens(context, vocab_size());
  return forward(hidden_.data(), context).probs;
}

Vec MlpSoftmaxLM::next_token_dist_at(std::span<const double> params, std::span<const Token> context) const {
  if (params.size() != param_dim()) throw DimensionError("next_token_dist_at: parameter length mismatch");
  validate_tokens(context, vocab_size());
  return forward(params, context).probs;
}

Vec MlpSoftmaxLM::token_grad(std::span<const Token> context, Token token) const {
  validate_tokens(context, vocab_size());
  validate_tokens(std::span<const Token>(&token, 1), vocab_size());
  Vec g(param_dim(), 0.0);
  accumulate_grad(forward(hidden_.data(), context), token, g);
  return g;
}

Vec MlpSoftmaxLM::grad_log_prob(std::span<const Token> prompt, std::span<const Token> y) const {
  if (y.empty()) throw EmptySequence("gradient of an empty response is undefined");
  validate_tokens(prompt, vocab_size());
  validate_tokens(y, vocab_size());
  Vec g(param_dim(), 0.0);
  Tokens context(prompt.begin(), prompt.end());
  for (Token v : y) {
    accumulate_grad(forward(hidden_.data(), context), v, g);
    context.push_back(v);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Free functions

Vec next_token_dist(const LanguageModel& model, std::span<const Token> context) {
  validate_tokens(context, model.vocab_size());
  return model.next_token_dist(context);
}

Tokens sample_sequence(const LanguageModel& model, std::span<const Token> prompt, std::size_t length, RngStream& rng) {
  validate_tokens(prompt, model.vocab_size());
  Tokens context(prompt.begin(), prompt.end());
  context.reserve(prompt.size() + length);
  for (std::size_t t = 0; t < length; ++t) context.push_back(sample_categorical(model.next_token_dist(context), rng));
  return Tokens(context.begin() + static_cast<std::ptrdiff_t>(prompt.size()), context.end());
}

double sequence_log_prob(const LanguageModel& model, std::span<const Token> prompt, std::span<const Token> y) {
  validate_tokens(prompt, model.vocab_size());
  validate_tokens(y, model.vocab_size());
  double total = 0.0;
  Tokens context(prompt.begin(), prompt.end());
  for (Token v : y) {
    total += std::log(model.next_token_dist(context)[static_cast<std::size_t>(v)]);
    context.push_back(v);
  }
  return total;
}

Vec grad_sequence_log_prob(const LinearSoftmaxLM& model, std::span<const Token> prompt, std::span<const Token> y) {
  return model.grad_log_prob(prompt, y);
}

Vec mlp_grad_log_prob(const MlpSoftmaxLM& model, std::span<const Token> prompt, std::span<const Token> y) {
  return model.grad_log_prob(prompt, y);
}

// ---------------------------------------------------------------------------
// Construction from specs

nlohmann::json normalize_model_spec(const nlohmann::json& spec) {
  const std::string kind = spec.value("kind", "linear");
  nlohmann::json out;
  out["kind"] = kind;
  out["vocab"] = spec.value("vocab", 32);
  out["context_window"] = spec.value("context_window", 2);
  if (kind == "linear") {
    out["dim"] = spec.value("dim", 256);
    out["context_buckets"] = spec.value("context_buckets", 64);
    out["feature_seed"] = spec.value("feature_seed", std::uint64_t{1});
    out["theta_seed"] = spec.value("theta_seed", std::uint64_t{2});
    out["theta_scale"] = spec.value("theta_scale", 1.0);
    out["norm_bound"] = spec.value("norm_bound", 3.0);
  } else if (kind == "mlp") {
    out["embed"] = spec.value("embed", 16);
    out["hidden"] = spec.value("hidden", 32);
    out["seed"] = spec.value("seed", std::uint64_t{3});
    out["hidden_init"] = spec.value("hidden_init", std::string("random"));
    out["hidden_scale"] = spec.value("hidden_scale", 1.0);
    out["output_scale"] = spec.value("output_scale", 3.0);
  } else {
    throw FormatError("unknown model kind '" + kind + "'");
  }
  return out;
}

std::shared_ptr<const LinearSoftmaxLM> make_linear_model(const nlohmann::json& raw) {
  const auto spec = normalize_model_spec(raw);
  if (spec["kind"] != "linear") throw FormatError("make_linear_model: spec is not a linear model");
  FeatureMap::Options o;
  o.vocab_size = spec["vocab"].get<int>();
  o.dim = spec["dim"].get<std::size_t>();
  o.context_window = spec["context_window"].get<int>();
  o.context_buckets = spec["context_buckets"].get<std::size_t>();
  o.seed = spec["feature_seed"].get<std::uint64_t>();
  o.norm_bound = spec["norm_bound"].get<double>();
  auto features = std::make_shared<const FeatureMap>(o);
  RngStream rng(spec["theta_seed"].get<std::uint64_t>(), 0x54484554ULL);  // "THET"
  Vec theta = sample_gaussian_vector(o.dim, spec["theta_scale"].get<double>(), rng).values;
  return std::make_shared<const LinearSoftmaxLM>(std::move(features), std::move(theta), spec);
}

std::shared_ptr<const MlpSoftmaxLM> make_mlp_model(const nlohmann::json& raw) {
  const auto spec = normalize_model_spec(raw);
  if (spec["kind"] != "mlp") throw FormatError("make_mlp_model: spec is not an mlp model");
  const auto V = spec["vocab"].get<std::size_t>();
  const auto e = spec["embed"].get<std::size_t>();
  const auto h = spec["hidden"].get<std::size_t>();
  if (V == 0 || e == 0 || h == 0) throw InvalidDimension("make_mlp_model: sizes must be positive");
  const auto seed = spec["seed"].get<std::uint64_t>();
  RngStream rng(seed, 0x4D4C5000ULL);  // "MLP"
  auto frozen = std::make_shared<MlpWeights>();
  frozen->embedding = Matrix(V + 1, e);
  for (double& x : frozen->embedding.data()) x = rng.normal();
  frozen->output = Matrix(V, h);
  const double out_scale = spec["output_scale"].get<double>() / std::sqrt(static_cast<double>(h));
  for (double& x : frozen->output.data()) x = out_scale * rng.normal();
  frozen->bias = Vec(V, 0.0);
  Matrix hidden(h, e);
  const double hidden_scale = spec["hidden_scale"].get<double>();
  const std::string init = spec["hidden_init"].get<std::string>();
  if (init == "random") {
    for (double& x : hidden.data()) x = hidden_scale / std::sqrt(static_cast<double>(e)) * rng.normal();
  } else if (init == "identity") {
    for (std::size_t i = 0; i < std::min(h, e); ++i) hidden(i, i) = hidden_scale;
  } else {
    throw FormatError("unknown hidden_init '" + init + "'");
  }
  return std::make_shared<const MlpSoftmaxLM>(std::move(frozen), std::move(hidden),
                                              spec["context_window"].get<int>(), spec);
}

ModelPtr make_model(const nlohmann::json& spec) {
  const std::string kind = spec.value("kind", "linear");
  if (kind == "mlp") return make_mlp_model(spec);
  return make_linear_model(spec);
}

}  // namespace gaussmark
