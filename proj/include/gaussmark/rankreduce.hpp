#pragma once

#include <cstdint>
#include <span>

#include "gaussmark/key.hpp"
#include "gaussmark/linalg.hpp"

namespace gaussmark {

// Thin SVD A = U diag(S) Vt with m = min(rows, cols) components.
struct SvdResult {
  Matrix U;   // rows x m
  Vec S;      // m, nonincreasing
  Matrix Vt;  // m x cols
};

// One-sided Jacobi SVD for matrices up to 512 x 512. Each column of U has its
// first nonzero entry positive. Throws NumericalError after 60 sweeps without
// convergence.
SvdResult svd_small(const Matrix& a);

enum class ProjectionSide { Left, Right };

// Orthogonal projector on r x c matrices (flattened row-major) that removes
// the top-k singular directions. With m = min(r, c) the projection acts on the
// side whose singular space has dimension m: Ξ -> U_{>k} U_{>k}^T Ξ when
// r <= c, and Ξ -> Ξ V_{>k} V_{>k}^T otherwise.
class SubspaceProjector {
 public:
  SubspaceProjector(std::size_t rows, std::size_t cols, std::size_t dropped_top_k, ProjectionSide side, Matrix basis,
                    std::uint64_t source_hash);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t dim() const { return rows_ * cols_; }
  std::size_t dropped_top_k() const { return k_; }
  ProjectionSide side() const { return side_; }
  // Retained orthonormal directions, one per row.
  const Matrix& basis() const { return basis_; }
  // Fingerprint of the matrix the projector was built from.
  std::uint64_t source_hash() const { return source_hash_; }

  Vec apply(std::span<const double> flat) const;

 private:
  std::size_t rows_, cols_, k_;
  ProjectionSide side_;
  Matrix basis_;
  std::uint64_t source_hash_;
};

// Fingerprint of a matrix's shape and bit pattern.
std::uint64_t matrix_hash(const Matrix& a);

// Throws DomainError when k > min(rows, cols).
SubspaceProjector bottom_subspace_projector(const Matrix& a, std::size_t k);

// P grad; throws DimensionError on a length mismatch.
Vec project_gradient(std::span<const double> grad, const SubspaceProjector& projector);

// Full Gaussian noise shaped like A, projected away from its top-k directions.
WatermarkKey rank_reduced_key(const Matrix& a, std::size_t k, double sigma, RngStream& rng);

}  // namespace gaussmark
