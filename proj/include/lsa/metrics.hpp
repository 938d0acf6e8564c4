#pragma once

#include "lsa/types.hpp"

#include <vector>

namespace lsa {

/// Optimal matching between true and estimated labels.
struct AlignmentResult {
  // permutation[a - 1] = estimated label matched to true label a.
  std::vector<int> permutation;
  double rate = 0.0;
  Eigen::MatrixXi confusion;  // confusion(a - 1, b - 1) = #{Z = a, Zhat = b}
};

Eigen::MatrixXi confusion_matrix(const Labels& truth, const Labels& estimate, int groups);

/// Exhaustive search over all G! permutations; ties go to the
/// lexicographically smallest permutation.
std::vector<int> best_permutation_brute_force(const Eigen::MatrixXi& confusion);

/// Hungarian (Kuhn-Munkres) maximum-weight assignment, O(G^3).
std::vector<int> best_permutation_hungarian(const Eigen::MatrixXi& confusion);

/// Misclassification rate minimized over label permutations. Brute force for
/// G <= 6, Hungarian above.
AlignmentResult misclassification_rate(const Labels& truth, const Labels& estimate, int groups);

/// Renames estimated labels so that they agree with the true labels they were
/// matched to.
Labels relabel_to_truth(const Labels& estimate, const AlignmentResult& alignment);

/// Reorders per-subgroup estimates indexed by estimated label into true-label
/// order.
VectorXd align_to_truth(const VectorXd& by_estimated_label, const AlignmentResult& alignment);

struct RmseResult {
  double pooled = 0.0;
  VectorXd per_coordinate;
};

RmseResult rmse(const std::vector<VectorXd>& estimates, const VectorXd& truth);

struct CoverageResult {
  VectorXd coverage;
  VectorXd standard_error;  // sqrt(c (1 - c) / reps)
};

CoverageResult coverage(const std::vector<std::vector<Interval>>& intervals, const VectorXd& truth);

}  // namespace lsa
