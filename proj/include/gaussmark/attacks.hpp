#pragma once

#include <string>

#include "gaussmark/toylm.hpp"

namespace gaussmark {

enum class AttackKind { Insert, Delete, Substitute };
enum class AttackLocus { Random, Prefix };

struct AttackSpec {
  AttackKind kind = AttackKind::Substitute;
  AttackLocus locus = AttackLocus::Random;
  // Number of edited tokens is round(fraction * length of the input).
  double fraction = 0.0;
};

struct AttackResult {
  Tokens tokens;
  std::size_t edits = 0;
  // Set when more deletions/substitutions were requested than tokens exist.
  bool clamped = false;
};

// Insert: round(f T) uniform tokens at uniform positions (Random) or in front (Prefix).
// Delete: round(f T) positions without replacement (Random) or the first ones (Prefix).
// Substitute: round(f T) positions without replacement, or the first ones, replaced by uniform tokens.
AttackResult corrupt(std::span<const Token> y, const AttackSpec& spec, int vocab_size, RngStream& rng);

std::string to_string(AttackKind kind);
std::string to_string(AttackLocus locus);
AttackKind parse_attack_kind(const std::string& s);
AttackLocus parse_attack_locus(const std::string& s);

}  // namespace gaussmark
