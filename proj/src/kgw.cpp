#include "gaussmark/kgw.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gaussmark {

void validate(const KgwParams& params) {
  if (!(params.gamma > 0.0 && params.gamma < 1.0)) throw InvalidInput("kgw: gamma must lie in (0, 1)");
  if (!(params.delta >= 0.0) || !std::isfinite(params.delta)) throw InvalidInput("kgw: delta must be nonnegative");
  if (params.context_width < 1) throw InvalidInput("kgw: context width must be at least 1");
}

std::size_t green_list_size(int vocab_size, const KgwParams& params) {
  validate(params);
  if (vocab_size < 2) throw InvalidDimension("kgw: vocabulary needs at least two tokens");
  const auto g = std::lround(params.gamma * vocab_size);
  return static_cast<std::size_t>(std::clamp<long>(g, 1, vocab_size - 1));
}

std::vector<Token> green_set(std::span<const Token> context, int vocab_size, const KgwParams& params) {
  const std::size_t size = green_list_size(vocab_size, params);
  std::uint64_t h = mix64(params.hash_seed ^ 0x4B475700ULL);
  const auto m = static_cast<std::size_t>(params.context_width);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t missing = m > context.size() ? m - context.size() : 0;
    const Token t = i < missing ? vocab_size : context[context.size() - m + i];
    h = hash_combine(h, static_cast<std::uint64_t>(t));
  }
  // Partial Fisher-Yates driven by the context hash.
  RngStream rng(params.hash_seed, h);
  std::vector<Token> perm(static_cast<std::size_t>(vocab_size));
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < size; ++i) std::swap(perm[i], perm[i + rng.below(perm.size() - i)]);
  perm.resize(size);
  std::sort(perm.begin(), perm.end());
  return perm;
}

std::vector<char> green_mask(std::span<const Token> context, int vocab_size, const KgwParams& params) {
  std::vector<char> mask(static_cast<std::size_t>(vocab_size), 0);
  for (Token t : green_set(context, vocab_size, params)) mask[static_cast<std::size_t>(t)] = 1;
  return mask;
}

Tokens kgw_generate(const LanguageModel& model, const KgwParams& params, std::span<const Token> prompt,
                    std::size_t length, RngStream& rng) {
  validate(params);
  if (length == 0) throw InvalidInput("kgw_generate: response length must be at least 1");
  validate_tokens(prompt, model.vocab_size());
  const double boost = std::exp(params.delta);
  Tokens context(prompt.begin(), prompt.end());
  for (std::size_t t = 0; t < length; ++t) {
    Vec w = model.next_token_dist(context);
    const auto mask = green_mask(context, model.vocab_size(), params);
    for (std::size_t v = 0; v < w.size(); ++v)
      if (mask[v]) w[v] *= boost;
    context.push_back(sample_categorical(w, rng));
  }
  return Tokens(context.begin() + static_cast<std::ptrdiff_t>(prompt.size()), context.end());
}

KgwTestResult kgw_z_test(std::span<const Token> prompt, std::span<const Token> y, int vocab_size,
                         const KgwParams& params) {
  if (y.empty()) throw EmptySequence("kgw_z_test: empty response");
  validate_tokens(prompt, vocab_size);
  validate_tokens(y, vocab_size);
  KgwTestResult r;
  r.length = y.size();
  r.gamma_effective = static_cast<double>(green_list_size(vocab_size, params)) / vocab_size;
  Tokens context(prompt.begin(), prompt.end());
  for (Token v : y) {
    r.green_count += green_mask(context, vocab_size, params)[static_cast<std::size_t>(v)] ? 1 : 0;
    context.push_back(v);
  }
  const double T = static_cast<double>(r.length), g = r.gamma_effective;
  r.z = (static_cast<double>(r.green_count) - g * T) / std::sqrt(T * g * (1.0 - g));
  r.p_value = normal_sf(r.z);
  return r;
}

}  // namespace gaussmark
