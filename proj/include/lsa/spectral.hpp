#pragma once

// Stage one: truncated SVD of the response matrix, k-means++ on the projected
// rows, and parallel analysis for the number of subgroups.

#include "lsa/rng.hpp"
#include "lsa/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

namespace lsa {

template <class Scalar>
struct SpectralEmbedding {
  Matrix<Scalar> projected_rows;  // n x G, rows of U_G * diag(s)
  Vector<Scalar> singular_values; // nonincreasing, >= 0
  Matrix<Scalar> left_vectors;    // n x G
  Matrix<Scalar> right_vectors;   // J x G
  std::vector<std::string> warnings;
};

struct SvdOptions {
  // Above this min(n, J) the Golub-Kahan-Lanczos path replaces the dense SVD.
  Index dense_limit = 2000;
  double tolerance = 1e-12;
};

template <class Scalar>
struct ClusterAssignment {
  Labels labels;                   // 1-based
  Matrix<Scalar> centers;          // G x d
  Scalar within_cost = 0;
  std::vector<Scalar> cost_trace;  // best restart, one entry per Lloyd iteration
  std::vector<std::string> warnings;
};

struct KMeansOptions {
  int restarts = 10;
  int max_iter = 100;
};

namespace detail {

// Largest-magnitude entry of each left vector made positive (lowest index on
// ties); the matching right vector flips with it.
template <class Scalar>
void orient_signs(Matrix<Scalar>& left, Matrix<Scalar>& right) {
  for (Index k = 0; k < left.cols(); ++k) {
    Index arg = 0;
    Scalar best = -1;
    for (Index i = 0; i < left.rows(); ++i) {
      const Scalar a = std::abs(left(i, k));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (left(arg, k) < 0) {
      left.col(k) *= Scalar(-1);
      right.col(k) *= Scalar(-1);
    }
  }
}

// Orthogonalize `x` against the first `count` columns of `basis` (twice, which
// is enough for full reorthogonalization in floating point).
template <class Scalar>
void reorthogonalize(Vector<Scalar>& x, const Matrix<Scalar>& basis, Index count) {
  for (int pass = 0; pass < 2; ++pass) {
    if (count == 0) return;
    const auto q = basis.leftCols(count);
    x.noalias() -= q * (q.transpose() * x);
  }
}

template <class Scalar>
Vector<Scalar> random_unit_orthogonal(const Matrix<Scalar>& basis, Index count, Rng& rng) {
  Vector<Scalar> x(basis.rows());
  for (int attempt = 0; attempt < 8; ++attempt) {
    for (Index i = 0; i < x.size(); ++i) x(i) = static_cast<Scalar>(rng.normal());
    reorthogonalize(x, basis, count);
    const Scalar norm = x.norm();
    if (norm > Scalar(1e-8)) return x / norm;
  }
  return Vector<Scalar>::Zero(basis.rows());
}

// Golub-Kahan-Lanczos bidiagonalization with full reorthogonalization. The
// Krylov space grows until the top-`rank` Ritz triplets have residual below
// tolerance * s_1, or the space is exhausted (then the result is exact).
template <class Scalar>
SpectralEmbedding<Scalar> lanczos_svd(const Matrix<Scalar>& a, Index rank, double tolerance) {
  const Index n = a.rows();
  const Index m = a.cols();
  const Index limit = std::min(n, m);
  Rng rng(0x5eed'1a9c'0fULL);

  Matrix<Scalar> u(n, limit), v(m, limit + 1);
  Vector<Scalar> alpha = Vector<Scalar>::Zero(limit), beta = Vector<Scalar>::Zero(limit);
  v.col(0) = random_unit_orthogonal(v, 0, rng);

  Index steps = 0;
  Index next_check = std::min(limit, std::max<Index>(2 * rank + 20, 40));
  Eigen::BDCSVD<Matrix<Scalar>> small;
  for (;;) {
    for (; steps < next_check; ++steps) {
      const Index k = steps;
      Vector<Scalar> x = a * v.col(k);
      if (k > 0) x -= beta(k - 1) * u.col(k - 1);
      reorthogonalize(x, u, k);
      alpha(k) = x.norm();
      if (alpha(k) > Scalar(1e-12)) {
        u.col(k) = x / alpha(k);
      } else {
        alpha(k) = 0;
        u.col(k) = random_unit_orthogonal(u, k, rng);
      }
      Vector<Scalar> y = a.transpose() * u.col(k) - alpha(k) * v.col(k);
      reorthogonalize(y, v, k + 1);
      beta(k) = y.norm();
      if (beta(k) > Scalar(1e-12) && k + 1 < m) {
        v.col(k + 1) = y / beta(k);
      } else {
        beta(k) = 0;
        v.col(k + 1) = k + 1 < m ? random_unit_orthogonal(v, k + 1, rng) : Vector<Scalar>::Zero(m);
      }
    }

    Matrix<Scalar> bidiag = Matrix<Scalar>::Zero(steps, steps);
    for (Index k = 0; k < steps; ++k) {
      bidiag(k, k) = alpha(k);
      if (k + 1 < steps) bidiag(k, k + 1) = beta(k);
    }
    small.compute(bidiag, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& s = small.singularValues();
    bool converged = steps == limit;
    if (!converged) {
      converged = true;
      const Scalar scale = std::max(s(0), Scalar(1e-300));
      for (Index i = 0; i < rank; ++i)
        if (std::abs(beta(steps - 1) * small.matrixU()(steps - 1, i)) > Scalar(tolerance) * scale) converged = false;
    }
    if (converged) break;
    next_check = std::min(limit, 2 * steps);
  }

  SpectralEmbedding<Scalar> out;
  out.singular_values = small.singularValues().head(rank);
  out.left_vectors = u.leftCols(steps) * small.matrixU().leftCols(rank);
  out.right_vectors = v.leftCols(steps) * small.matrixV().leftCols(rank);
  return out;
}

template <class Scalar>
Scalar squared_distance(const Matrix<Scalar>& points, Index i, const Matrix<Scalar>& centers, Index c) {
  return (points.row(i) - centers.row(c)).squaredNorm();
}

template <class Scalar>
Scalar assignment_cost(const Matrix<Scalar>& points, const std::vector<Index>& labels, const Matrix<Scalar>& centers) {
  Scalar cost = 0;
  for (Index i = 0; i < points.rows(); ++i) cost += squared_distance(points, i, centers, labels[i]);
  return cost;
}

// D^2 seeding. When every point coincides with a chosen center the lowest
// unchosen index is taken.
template <class Scalar>
Matrix<Scalar> seed_centers(const Matrix<Scalar>& points, Index groups, Rng& rng) {
  const Index n = points.rows();
  Matrix<Scalar> centers(groups, points.cols());
  std::vector<char> chosen(static_cast<std::size_t>(n), 0);
  Index first = static_cast<Index>(rng.below(static_cast<std::uint64_t>(n)));
  centers.row(0) = points.row(first);
  chosen[first] = 1;
  Vector<Scalar> d2(n);
  for (Index i = 0; i < n; ++i) d2(i) = squared_distance(points, i, centers, 0);

  for (Index c = 1; c < groups; ++c) {
    const Scalar total = d2.sum();
    Index pick = -1;
    if (total > 0) {
      const Scalar target = static_cast<Scalar>(rng.uniform()) * total;
      Scalar running = 0;
      for (Index i = 0; i < n; ++i) {
        running += d2(i);
        if (running > target && d2(i) > 0) {
          pick = i;
          break;
        }
      }
      if (pick < 0) {  // round-off at the top end
        for (Index i = n - 1; i >= 0; --i)
          if (d2(i) > 0) {
            pick = i;
            break;
          }
      }
    } else {
      for (Index i = 0; i < n && pick < 0; ++i)
        if (!chosen[i]) pick = i;
    }
    chosen[pick] = 1;
    centers.row(c) = points.row(pick);
    for (Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), squared_distance(points, i, centers, c));
  }
  return centers;
}

template <class Scalar>
ClusterAssignment<Scalar> lloyd(const Matrix<Scalar>& points, Matrix<Scalar> centers, int max_iter) {
  const Index n = points.rows();
  const Index groups = centers.rows();
  std::vector<Index> labels(static_cast<std::size_t>(n), -1);
  std::vector<Index> counts(static_cast<std::size_t>(groups));
  Vector<Scalar> dist(n);
  ClusterAssignment<Scalar> out;

  for (int iter = 0; iter < max_iter; ++iter) {
    bool changed = false;
    for (Index i = 0; i < n; ++i) {
      Index best = 0;
      Scalar best_d = squared_distance(points, i, centers, 0);
      for (Index c = 1; c < groups; ++c) {
        const Scalar d = squared_distance(points, i, centers, c);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      if (labels[i] != best) changed = true;
      labels[i] = best;
      dist(i) = best_d;
    }
    if (iter > 0 && !changed) break;

    std::fill(counts.begin(), counts.end(), 0);
    for (Index i = 0; i < n; ++i) ++counts[labels[i]];
    for (Index c = 0; c < groups; ++c) {
      if (counts[c] > 0) continue;
      // Reseed an empty cluster at the point farthest from its center.
      Index far = -1;
      for (Index i = 0; i < n; ++i)
        if (counts[labels[i]] > 1 && (far < 0 || dist(i) > dist(far))) far = i;
      if (far < 0) continue;
      --counts[labels[far]];
      labels[far] = c;
      counts[c] = 1;
      dist(far) = 0;
      changed = true;
    }

    centers.setZero();
    for (Index i = 0; i < n; ++i) centers.row(labels[i]) += points.row(i);
    for (Index c = 0; c < groups; ++c)
      if (counts[c] > 0) centers.row(c) /= static_cast<Scalar>(counts[c]);
    out.cost_trace.push_back(assignment_cost(points, labels, centers));
  }

  out.labels.resize(n);
  for (Index i = 0; i < n; ++i) out.labels(i) = static_cast<int>(labels[i] + 1);
  out.centers = std::move(centers);
  out.within_cost = assignment_cost(points, labels, out.centers);
  return out;
}

}  // namespace detail

/// Top-`rank` singular triplets of `a` with a fixed sign convention. Dense SVD
/// up to `options.dense_limit`, Lanczos bidiagonalization above it.
template <class Scalar>
SpectralEmbedding<Scalar> truncated_svd(const Matrix<Scalar>& a, Index rank, const SvdOptions& options = {}) {
  const Index limit = std::min(a.rows(), a.cols());
  if (rank < 1 || rank > limit)
    throw DomainError("truncated_svd: rank " + std::to_string(rank) + " outside [1, " + std::to_string(limit) + "]");

  SpectralEmbedding<Scalar> out;
  if (limit <= options.dense_limit) {
    Eigen::BDCSVD<Matrix<Scalar>> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    out.singular_values = svd.singularValues().head(rank);
    out.left_vectors = svd.matrixU().leftCols(rank);
    out.right_vectors = svd.matrixV().leftCols(rank);
  } else {
    out = detail::lanczos_svd(a, rank, options.tolerance);
  }
  detail::orient_signs(out.left_vectors, out.right_vectors);

  const Scalar floor = out.singular_values.size() > 0
                           ? out.singular_values(0) * static_cast<Scalar>(limit) * std::numeric_limits<Scalar>::epsilon()
                           : Scalar(0);
  Index numeric_rank = 0;
  for (Index k = 0; k < rank; ++k) {
    if (out.singular_values(k) > floor) {
      ++numeric_rank;
    } else {
      out.singular_values(k) = 0;
    }
  }
  if (numeric_rank < rank) {
    out.warnings.push_back("response matrix has numerical rank " + std::to_string(numeric_rank) + " < " +
                           std::to_string(rank) + "; embedding columns beyond the rank are zero");
  }
  out.projected_rows = out.left_vectors * out.singular_values.asDiagonal();
  return out;
}

/// k-means++ seeding plus Lloyd iterations; best of `restarts` runs by cost,
/// earliest restart on ties. Restart r draws from `rng.derive(r)`.
template <class Scalar>
ClusterAssignment<Scalar> kmeans_pp(const Matrix<Scalar>& points, Index groups, const Rng& rng,
                                    const KMeansOptions& options = {}) {
  if (groups < 1) throw DomainError("kmeans_pp: need at least one cluster");
  if (points.rows() < groups)
    throw DomainError("kmeans_pp: " + std::to_string(points.rows()) + " points for " + std::to_string(groups) +
                      " clusters");
  if (options.restarts < 1 || options.max_iter < 1) throw ConfigError("kmeans_pp: restarts and max_iter must be >= 1");

  ClusterAssignment<Scalar> best;
  for (int r = 0; r < options.restarts; ++r) {
    Rng stream = rng.derive(static_cast<std::uint64_t>(r));
    auto run = detail::lloyd(points, detail::seed_centers(points, groups, stream), options.max_iter);
    if (r == 0 || run.within_cost < best.within_cost) best = std::move(run);
  }
  return best;
}

/// Steps one and two of the two-stage method composed.
template <class Scalar>
ClusterAssignment<Scalar> spectral_cluster(const Matrix<Scalar>& responses, Index groups, const Rng& rng,
                                           const KMeansOptions& kmeans = {}, const SvdOptions& svd = {}) {
  auto embedding = truncated_svd(responses, groups, svd);
  auto clusters = kmeans_pp(embedding.projected_rows, groups, rng, kmeans);
  clusters.warnings = std::move(embedding.warnings);
  return clusters;
}

/// Leading `count` singular values (values only).
template <class Scalar>
Vector<Scalar> leading_singular_values(const Matrix<Scalar>& a, Index count) {
  Eigen::BDCSVD<Matrix<Scalar>> svd(a);
  Vector<Scalar> out = Vector<Scalar>::Zero(count);
  const Index have = std::min(count, svd.singularValues().size());
  out.head(have) = svd.singularValues().head(have);
  return out;
}

struct ParallelAnalysis {
  Index groups = 0;
  VectorXd observed;    // leading singular values of R
  VectorXd thresholds;  // (1 - q)-quantiles under column permutation
};

struct ParallelAnalysisOptions {
  int permutations = 100;
  double quantile = 0.05;
};

/// Counts the leading singular values of `responses` that exceed the
/// (1 - q)-quantile of the same-rank singular values of column-wise permuted
/// copies; capped at max_groups. Permutation b draws from `rng.derive(b)`.
template <class Scalar>
ParallelAnalysis select_groups_parallel_analysis(const Matrix<Scalar>& responses, Index max_groups, const Rng& rng,
                                                 const ParallelAnalysisOptions& options = {}) {
  if (options.permutations < 1) throw ConfigError("parallel analysis needs at least one permutation");
  if (!(options.quantile > 0.0 && options.quantile < 1.0)) throw ConfigError("parallel analysis quantile in (0,1)");
  const Index cap = std::clamp<Index>(max_groups, 0, std::min(responses.rows(), responses.cols()));
  ParallelAnalysis out;
  out.observed = leading_singular_values(responses, cap).template cast<double>();
  out.thresholds = VectorXd::Zero(cap);
  if (cap == 0) return out;

  const auto perms = static_cast<std::size_t>(options.permutations);
  std::vector<VectorXd> null_values(perms);
  Matrix<Scalar> shuffled(responses.rows(), responses.cols());
  std::vector<Index> order(static_cast<std::size_t>(responses.rows()));
  for (std::size_t b = 0; b < perms; ++b) {
    Rng stream = rng.derive(b);
    for (Index j = 0; j < responses.cols(); ++j) {
      std::iota(order.begin(), order.end(), Index{0});
      lsa::shuffle(order.begin(), order.end(), stream);
      for (Index i = 0; i < responses.rows(); ++i) shuffled(i, j) = responses(order[i], j);
    }
    null_values[b] = leading_singular_values(shuffled, cap).template cast<double>();
  }

  // Type-1 (inverse empirical CDF) quantile.
  const auto rank = static_cast<std::size_t>(
      std::max<double>(1.0, std::ceil((1.0 - options.quantile) * static_cast<double>(perms))));
  std::vector<double> column(perms);
  for (Index k = 0; k < cap; ++k) {
    for (std::size_t b = 0; b < perms; ++b) column[b] = null_values[b](k);
    std::nth_element(column.begin(), column.begin() + static_cast<std::ptrdiff_t>(rank - 1), column.end());
    out.thresholds(k) = column[rank - 1];
  }
  while (out.groups < cap && out.observed(out.groups) > out.thresholds(out.groups)) ++out.groups;
  return out;
}

}  // namespace lsa
