#include "gaussmark/rankreduce.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

namespace gaussmark {

namespace {

constexpr std::size_t kMaxSvdDim = 512;
constexpr int kMaxSweeps = 60;
constexpr double kJacobiTolerance = 1e-12;

// Orthonormal columns: returns a unit vector orthogonal to all of `basis`.
Vec orthogonal_complement_vector(const std::vector<Vec>& basis, std::size_t n) {
  for (std::size_t e = 0; e < n; ++e) {
    Vec v(n, 0.0);
    v[e] = 1.0;
    for (int pass = 0; pass < 2; ++pass)
      for (const Vec& b : basis) axpy(-dot(b, v), b, v);
    const double len = norm(v);
    if (len > 0.5) {
      for (double& x : v) x /= len;
      return v;
    }
  }
  throw NumericalError("svd_small: could not complete orthonormal basis");
}

}  // namespace

SvdResult svd_small(const Matrix& a) {
  const std::size_t r = a.rows(), c = a.cols();
  if (r == 0 || c == 0) throw InvalidDimension("svd_small: empty matrix");
  if (r > kMaxSvdDim || c > kMaxSvdDim) throw InvalidDimension("svd_small: matrix larger than 512 x 512");
  for (double x : a.data())
    if (!std::isfinite(x)) throw InvalidInput("svd_small: non-finite entry");

  // Orthogonalize the columns of B (n x p, n >= p); B = A or A^T.
  const bool transposed = r < c;
  const Matrix b = transposed ? a.transposed() : a;
  const std::size_t n = b.rows(), p = b.cols();
  std::vector<Vec> cols(p, Vec(n)), v(p, Vec(p, 0.0));
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < n; ++i) cols[j][i] = b(i, j);
    v[j][j] = 1.0;
  }

  bool converged = false;
  for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
    converged = true;
    for (std::size_t i = 0; i + 1 < p; ++i)
      for (std::size_t j = i + 1; j < p; ++j) {
        const double alpha = dot(cols[i], cols[i]);
        const double beta = dot(cols[j], cols[j]);
        const double gamma = dot(cols[i], cols[j]);
        if (gamma == 0.0 || std::abs(gamma) <= kJacobiTolerance * std::sqrt(alpha * beta)) continue;
        converged = false;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t), sn = cs * t;
        for (std::size_t k = 0; k < n; ++k) {
          const double x = cols[i][k], y = cols[j][k];
          cols[i][k] = cs * x - sn * y;
          cols[j][k] = sn * x + cs * y;
        }
        for (std::size_t k = 0; k < p; ++k) {
          const double x = v[i][k], y = v[j][k];
          v[i][k] = cs * x - sn * y;
          v[j][k] = sn * x + cs * y;
        }
      }
  }
  if (!converged) throw NumericalError("svd_small: Jacobi sweeps did not converge");

  Vec sigma(p);
  for (std::size_t j = 0; j < p; ++j) sigma[j] = norm(cols[j]);
  std::vector<std::size_t> order(p);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  const double cutoff = sigma[order[0]] * static_cast<double>(n) * 1e-15;
  std::vector<Vec> left;  // n-vectors
  std::vector<Vec> right;  // p-vectors
  Vec s;
  for (std::size_t idx : order) {
    Vec u(n);
    if (sigma[idx] > cutoff && sigma[idx] > 0.0) {
      for (std::size_t k = 0; k < n; ++k) u[k] = cols[idx][k] / sigma[idx];
      // Re-orthogonalize against earlier columns to absorb roundoff.
      for (const Vec& prev : left) axpy(-dot(prev, u), prev, u);
      const double len = norm(u);
      for (double& x : u) x /= len;
    } else {
      u = orthogonal_complement_vector(left, n);
    }
    left.push_back(std::move(u));
    right.push_back(v[idx]);
    s.push_back(sigma[idx] > cutoff ? sigma[idx] : 0.0);
  }

  // A = B^T = V_B S U_B^T when transposed.
  std::vector<Vec>& ucols = transposed ? right : left;
  std::vector<Vec>& vcols = transposed ? left : right;
  for (std::size_t j = 0; j < p; ++j) {
    const auto first = std::find_if(ucols[j].begin(), ucols[j].end(), [](double x) { return std::abs(x) > 1e-14; });
    if (first != ucols[j].end() && *first < 0.0) {
      for (double& x : ucols[j]) x = -x;
      for (double& x : vcols[j]) x = -x;
    }
  }

  SvdResult out{Matrix(r, p), std::move(s), Matrix(p, c)};
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < r; ++i) out.U(i, j) = ucols[j][i];
    for (std::size_t i = 0; i < c; ++i) out.Vt(j, i) = vcols[j][i];
  }
  return out;
}

SubspaceProjector::SubspaceProjector(std::size_t rows, std::size_t cols, std::size_t dropped_top_k,
                                     ProjectionSide side, Matrix basis, std::uint64_t source_hash)
    : rows_(rows), cols_(cols), k_(dropped_top_k), side_(side), basis_(std::move(basis)), source_hash_(source_hash) {
  const std::size_t width = side_ == ProjectionSide::Left ? rows_ : cols_;
  if (basis_.rows() > 0 && basis_.cols() != width) throw DimensionError("SubspaceProjector: basis width mismatch");
}

Vec SubspaceProjector::apply(std::span<const double> flat) const {
  if (flat.size() != dim()) throw DimensionError("SubspaceProjector: vector length differs from matrix size");
  Vec out(flat.size(), 0.0);
  if (side_ == ProjectionSide::Left) {
    // Σ_i u_i (u_i^T X)
    Vec w(cols_);
    for (std::size_t i = 0; i < basis_.rows(); ++i) {
      const auto u = basis_.row(i);
      std::fill(w.begin(), w.end(), 0.0);
      for (std::size_t a = 0; a < rows_; ++a) axpy(u[a], flat.subspan(a * cols_, cols_), w);
      for (std::size_t a = 0; a < rows_; ++a) axpy(u[a], w, std::span<double>(out).subspan(a * cols_, cols_));
    }
  } else {
    // Each row x_a -> Σ_i (x_a . v_i) v_i
    for (std::size_t a = 0; a < rows_; ++a) {
      const auto row = flat.subspan(a * cols_, cols_);
      std::span<double> dst(out.data() + a * cols_, cols_);
      for (std::size_t i = 0; i < basis_.rows(); ++i) axpy(dot(row, basis_.row(i)), basis_.row(i), dst);
    }
  }
  return out;
}

std::uint64_t matrix_hash(const Matrix& a) {
  std::uint64_t h = hash_combine(mix64(a.rows()), a.cols());
  for (double x : a.data()) h = hash_combine(h, std::bit_cast<std::uint64_t>(x));
  return h;
}

SubspaceProjector bottom_subspace_projector(const Matrix& a, std::size_t k) {
  const std::size_t m = std::min(a.rows(), a.cols());
  if (k > m) throw DomainError("bottom_subspace_projector: cannot drop more directions than min(rows, cols)");
  const SvdResult svd = svd_small(a);
  const bool left = a.rows() <= a.cols();
  const std::size_t width = left ? a.rows() : a.cols();
  Matrix basis(m - k, width);
  for (std::size_t i = k; i < m; ++i)
    for (std::size_t j = 0; j < width; ++j) basis(i - k, j) = left ? svd.U(j, i) : svd.Vt(i, j);
  return {a.rows(), a.cols(), k, left ? ProjectionSide::Left : ProjectionSide::Right, std::move(basis),
          matrix_hash(a)};
}

Vec project_gradient(std::span<const double> grad, const SubspaceProjector& projector) {
  return projector.apply(grad);
}

WatermarkKey rank_reduced_key(const Matrix& a, std::size_t k, double sigma, RngStream& rng) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidInput("rank_reduced_key: sigma must be positive");
  auto projector = std::make_shared<const SubspaceProjector>(bottom_subspace_projector(a, k));
  WatermarkKey key;
  key.master_seed = rng.master_seed();
  key.stream_id = rng.stream_id();
  key.sigma = sigma;
  key.xi = projector->apply(sample_gaussian_vector(a.rows() * a.cols(), sigma, rng).values);
  key.projector = std::move(projector);
  return key;
}

}  // namespace gaussmark
