#include "lsa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace lsa {

namespace {

void check_labels(const Labels& labels, int groups, const char* what) {
  for (Index i = 0; i < labels.size(); ++i)
    if (labels(i) < 1 || labels(i) > groups)
      throw DomainError(std::string(what) + " label " + std::to_string(labels(i)) + " at position " +
                        std::to_string(i + 1) + " outside [1, " + std::to_string(groups) + "]");
}

long matched(const Eigen::MatrixXi& confusion, const std::vector<int>& perm) {
  long total = 0;
  for (std::size_t a = 0; a < perm.size(); ++a) total += confusion(static_cast<Index>(a), perm[a] - 1);
  return total;
}

}  // namespace

Eigen::MatrixXi confusion_matrix(const Labels& truth, const Labels& estimate, int groups) {
  if (truth.size() != estimate.size())
    throw DomainError("label vectors differ in length (" + std::to_string(truth.size()) + " vs " +
                      std::to_string(estimate.size()) + ")");
  if (groups < 1) throw DomainError("need at least one group");
  check_labels(truth, groups, "true");
  check_labels(estimate, groups, "estimated");
  Eigen::MatrixXi confusion = Eigen::MatrixXi::Zero(groups, groups);
  for (Index i = 0; i < truth.size(); ++i) ++confusion(truth(i) - 1, estimate(i) - 1);
  return confusion;
}

std::vector<int> best_permutation_brute_force(const Eigen::MatrixXi& confusion) {
  const int groups = static_cast<int>(confusion.rows());
  std::vector<int> perm(static_cast<std::size_t>(groups));
  std::iota(perm.begin(), perm.end(), 1);
  std::vector<int> best = perm;
  long best_matched = matched(confusion, perm);
  while (std::next_permutation(perm.begin(), perm.end())) {
    const long m = matched(confusion, perm);
    if (m > best_matched) {
      best_matched = m;
      best = perm;
    }
  }
  return best;
}

std::vector<int> best_permutation_hungarian(const Eigen::MatrixXi& confusion) {
  // Potentials formulation on cost = -confusion, 1-based working arrays.
  const int size = static_cast<int>(confusion.rows());
  constexpr long inf = std::numeric_limits<long>::max() / 4;
  std::vector<long> u(size + 1, 0), v(size + 1, 0);
  std::vector<int> col_owner(size + 1, 0), way(size + 1, 0);
  for (int row = 1; row <= size; ++row) {
    col_owner[0] = row;
    int col0 = 0;
    std::vector<long> minv(size + 1, inf);
    std::vector<char> used(size + 1, 0);
    do {
      used[col0] = 1;
      const int row0 = col_owner[col0];
      long delta = inf;
      int col1 = 0;
      for (int col = 1; col <= size; ++col) {
        if (used[col]) continue;
        const long cur = -static_cast<long>(confusion(row0 - 1, col - 1)) - u[row0] - v[col];
        if (cur < minv[col]) {
          minv[col] = cur;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (int col = 0; col <= size; ++col) {
        if (used[col]) {
          u[col_owner[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (col_owner[col0] != 0);
    do {
      const int col1 = way[col0];
      col_owner[col0] = col_owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }
  std::vector<int> perm(static_cast<std::size_t>(size));
  for (int col = 1; col <= size; ++col) perm[static_cast<std::size_t>(col_owner[col] - 1)] = col;
  return perm;
}

AlignmentResult misclassification_rate(const Labels& truth, const Labels& estimate, int groups) {
  AlignmentResult out;
  out.confusion = confusion_matrix(truth, estimate, groups);
  out.permutation =
      groups <= 6 ? best_permutation_brute_force(out.confusion) : best_permutation_hungarian(out.confusion);
  const auto n = truth.size();
  out.rate = n == 0 ? 0.0 : 1.0 - static_cast<double>(matched(out.confusion, out.permutation)) / static_cast<double>(n);
  return out;
}

Labels relabel_to_truth(const Labels& estimate, const AlignmentResult& alignment) {
  std::vector<int> inverse(alignment.permutation.size());
  for (std::size_t a = 0; a < alignment.permutation.size(); ++a)
    inverse[static_cast<std::size_t>(alignment.permutation[a] - 1)] = static_cast<int>(a + 1);
  Labels out(estimate.size());
  for (Index i = 0; i < estimate.size(); ++i) out(i) = inverse[static_cast<std::size_t>(estimate(i) - 1)];
  return out;
}

VectorXd align_to_truth(const VectorXd& by_estimated_label, const AlignmentResult& alignment) {
  VectorXd out(static_cast<Index>(alignment.permutation.size()));
  for (std::size_t a = 0; a < alignment.permutation.size(); ++a)
    out(static_cast<Index>(a)) = by_estimated_label(alignment.permutation[a] - 1);
  return out;
}

RmseResult rmse(const std::vector<VectorXd>& estimates, const VectorXd& truth) {
  if (estimates.empty()) throw DomainError("rmse: no estimates");
  RmseResult out;
  out.per_coordinate = VectorXd::Zero(truth.size());
  for (const auto& est : estimates) {
    if (est.size() != truth.size()) throw DomainError("rmse: estimate length differs from truth");
    out.per_coordinate += (est - truth).array().square().matrix();
  }
  const double reps = static_cast<double>(estimates.size());
  out.pooled = std::sqrt(out.per_coordinate.sum() / (reps * static_cast<double>(truth.size())));
  out.per_coordinate = (out.per_coordinate / reps).array().sqrt().matrix();
  return out;
}

CoverageResult coverage(const std::vector<std::vector<Interval>>& intervals, const VectorXd& truth) {
  if (intervals.empty()) throw DomainError("coverage: no intervals");
  CoverageResult out;
  out.coverage = VectorXd::Zero(truth.size());
  for (const auto& rep : intervals) {
    if (static_cast<Index>(rep.size()) != truth.size()) throw DomainError("coverage: interval count differs from truth");
    for (Index g = 0; g < truth.size(); ++g)
      if (rep[static_cast<std::size_t>(g)].contains(truth(g))) out.coverage(g) += 1.0;
  }
  const double reps = static_cast<double>(intervals.size());
  out.coverage /= reps;
  out.standard_error = (out.coverage.array() * (1.0 - out.coverage.array()) / reps).sqrt().matrix();
  return out;
}

}  // namespace lsa
