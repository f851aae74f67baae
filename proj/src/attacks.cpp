#include "gaussmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace gaussmark {

namespace {

// First `count` entries of a uniformly random permutation of [0, n).
std::vector<std::size_t> sample_positions(std::size_t n, std::size_t count, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < count; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(count);
  return idx;
}

Token random_token(int vocab_size, RngStream& rng) {
  return static_cast<Token>(rng.below(static_cast<std::uint64_t>(vocab_size)));
}

}  // namespace

AttackResult corrupt(std::span<const Token> y, const AttackSpec& spec, int vocab_size, RngStream& rng) {
  if (!std::isfinite(spec.fraction) || spec.fraction < 0.0) throw InvalidInput("attack fraction must be nonnegative");
  if (vocab_size < 1) throw InvalidDimension("attack needs a nonempty vocabulary");
  validate_tokens(y, vocab_size);
  if (y.empty() && spec.kind != AttackKind::Insert && spec.fraction > 0.0)
    throw EmptySequence("cannot delete or substitute in an empty sequence");

  const auto T = y.size();
  std::size_t requested = static_cast<std::size_t>(std::lround(spec.fraction * static_cast<double>(T)));
  AttackResult out;
  out.tokens.assign(y.begin(), y.end());
  if (spec.kind != AttackKind::Insert && requested > T) {
    out.clamped = true;
    requested = T;
  }
  out.edits = requested;

  switch (spec.kind) {
    case AttackKind::Insert:
      if (spec.locus == AttackLocus::Prefix) {
        Tokens prefix(requested);
        for (Token& t : prefix) t = random_token(vocab_size, rng);
        out.tokens.insert(out.tokens.begin(), prefix.begin(), prefix.end());
      } else {
        for (std::size_t i = 0; i < requested; ++i) {
          const auto pos = rng.below(out.tokens.size() + 1);
          out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(pos), random_token(vocab_size, rng));
        }
      }
      break;
    case AttackKind::Delete: {
      std::vector<char> drop(T, 0);
      if (spec.locus == AttackLocus::Prefix)
        std::fill(drop.begin(), drop.begin() + static_cast<std::ptrdiff_t>(requested), 1);
      else
        for (std::size_t pos : sample_positions(T, requested, rng)) drop[pos] = 1;
      Tokens kept;
      kept.reserve(T - requested);
      for (std::size_t i = 0; i < T; ++i)
        if (!drop[i]) kept.push_back(y[i]);
      out.tokens = std::move(kept);
      break;
    }
    case AttackKind::Substitute:
      if (spec.locus == AttackLocus::Prefix) {
        for (std::size_t i = 0; i < requested; ++i) out.tokens[i] = random_token(vocab_size, rng);
      } else {
        for (std::size_t pos : sample_positions(T, requested, rng)) out.tokens[pos] = random_token(vocab_size, rng);
      }
      break;
  }
  return out;
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::Insert: return "insert";
    case AttackKind::Delete: return "delete";
    case AttackKind::Substitute: return "substitute";
  }
  return "unknown";
}

std::string to_string(AttackLocus locus) { return locus == AttackLocus::Prefix ? "prefix" : "random"; }

AttackKind parse_attack_kind(const std::string& s) {
  if (s == "insert") return AttackKind::Insert;
  if (s == "delete") return AttackKind::Delete;
  if (s == "substitute") return AttackKind::Substitute;
  throw FormatError("unknown attack kind '" + s + "'");
}

AttackLocus parse_attack_locus(const std::string& s) {
  if (s == "random") return AttackLocus::Random;
  if (s == "prefix") return AttackLocus::Prefix;
  throw FormatError("unknown attack locus '" + s + "'");
}

}  // namespace gaussmark
