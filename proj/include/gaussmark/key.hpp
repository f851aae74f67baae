#pragma once

#include <cstdint>
#include <memory>

#include "gaussmark/core.hpp"

namespace gaussmark {

class SubspaceProjector;

// Secret key ξ ~ N(0, sigma^2 I_d), optionally restricted to a subspace.
// (master_seed, stream_id) is the stream the values were drawn from.
struct WatermarkKey {
  Vec xi;
  double sigma = 0.0;
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;
  std::shared_ptr<const SubspaceProjector> projector;

  std::size_t dim() const { return xi.size(); }
};

// Draws a full-dimensional key; throws InvalidInput unless sigma > 0.
WatermarkKey make_key(std::size_t d, double sigma, std::uint64_t master_seed, std::uint64_t stream_id);

// Key with explicit values (sigma may be 0 for degenerate experiments).
WatermarkKey key_from_values(Vec xi, double sigma);

}  // namespace gaussmark
