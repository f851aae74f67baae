#pragma once

#include <cstdint>
#include <span>

#include "gaussmark/toylm.hpp"

namespace gaussmark {

// Soft red list scheme: a seeded γ-fraction of the vocabulary, chosen from the
// previous `context_width` tokens, gets +δ added to its log-probabilities.
struct KgwParams {
  double gamma = 0.25;
  double delta = 1.0;
  int context_width = 1;
  std::uint64_t hash_seed = 0;
};

void validate(const KgwParams& params);

// Number of green tokens, round(γ |V|).
std::size_t green_list_size(int vocab_size, const KgwParams& params);

// Green tokens (sorted) for the window ending the context; positions before the
// start of the context read as the sentinel id vocab_size.
std::vector<Token> green_set(std::span<const Token> context, int vocab_size, const KgwParams& params);
std::vector<char> green_mask(std::span<const Token> context, int vocab_size, const KgwParams& params);

Tokens kgw_generate(const LanguageModel& model, const KgwParams& params, std::span<const Token> prompt,
                    std::size_t length, RngStream& rng);

struct KgwTestResult {
  std::size_t green_count = 0;
  std::size_t length = 0;
  double gamma_effective = 0.0;
  double z = 0.0;
  double p_value = 0.5;
};

// z = (G − γT) / sqrt(T γ (1 − γ)) with γ = |green| / |V|; p = 1 − Φ(z).
KgwTestResult kgw_z_test(std::span<const Token> prompt, std::span<const Token> y, int vocab_size,
                         const KgwParams& params);

}  // namespace gaussmark
