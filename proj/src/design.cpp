#include "lsa/regress.hpp"

#include <cmath>

namespace lsa {

std::string ColumnRole::name() const {
  switch (kind) {
    case Kind::Subgroup: return "subgroup_" + std::to_string(index);
    case Kind::TreatedSubgroup: return "treated_subgroup_" + std::to_string(index);
    case Kind::Confounder: return "x_" + std::to_string(index);
  }
  return {};
}

namespace {

void check_treatment(const VectorXd& treatment, Index n) {
  if (treatment.size() != n)
    throw DomainError("treatment vector has length " + std::to_string(treatment.size()) + ", expected " +
                      std::to_string(n));
  for (Index i = 0; i < n; ++i)
    if (treatment(i) != 0.0 && treatment(i) != 1.0)
      throw DomainError("treatment entry " + std::to_string(i + 1) + " is not 0 or 1");
}

DesignMatrix assemble(const MatrixXd& memberships, const VectorXd& treatment, const MatrixXd& confounders, bool soft) {
  const Index n = memberships.rows();
  const int groups = static_cast<int>(memberships.cols());
  const Index p = confounders.cols();
  if (p > 0 && confounders.rows() != n)
    throw DomainError("confounder matrix has " + std::to_string(confounders.rows()) + " rows, expected " +
                      std::to_string(n));

  DesignMatrix design;
  design.groups = groups;
  design.confounders = p;
  design.soft = soft;
  design.values.resize(n, 2 * groups + p);
  design.values.leftCols(groups) = memberships;
  design.values.middleCols(groups, groups) = treatment.asDiagonal() * memberships;
  if (p > 0) design.values.rightCols(p) = confounders;
  for (int g = 1; g <= groups; ++g) design.roles.push_back({ColumnRole::Kind::Subgroup, g});
  for (int g = 1; g <= groups; ++g) design.roles.push_back({ColumnRole::Kind::TreatedSubgroup, g});
  for (Index k = 1; k <= p; ++k) design.roles.push_back({ColumnRole::Kind::Confounder, static_cast<int>(k)});
  return design;
}

}  // namespace

void DesignMatrix::validate(const VectorXd& treatment) const {
  check_treatment(treatment, rows());
  const auto indicators = values.leftCols(groups);
  for (Index i = 0; i < rows(); ++i) {
    if (std::abs(indicators.row(i).sum() - 1.0) > 1e-10)
      throw DomainError("membership row " + std::to_string(i + 1) + " does not sum to 1");
    if (!soft)
      for (int g = 0; g < groups; ++g)
        if (indicators(i, g) != 0.0 && indicators(i, g) != 1.0)
          throw DomainError("hard design row " + std::to_string(i + 1) + " is not one-hot");
    for (int g = 0; g < groups; ++g)
      if (values(i, groups + g) != indicators(i, g) * treatment(i))
        throw DomainError("treated column " + std::to_string(g + 1) + " differs from indicator x treatment at row " +
                          std::to_string(i + 1));
  }
}

DesignMatrix build_design(const Labels& labels, const VectorXd& treatment, const MatrixXd& confounders, int groups) {
  if (groups < 1) throw DomainError("build_design: need at least one group");
  const Index n = labels.size();
  check_treatment(treatment, n);
  MatrixXd onehot = MatrixXd::Zero(n, groups);
  for (Index i = 0; i < n; ++i) {
    if (labels(i) < 1 || labels(i) > groups)
      throw DomainError("label " + std::to_string(labels(i)) + " at row " + std::to_string(i + 1) + " outside [1, " +
                        std::to_string(groups) + "]");
    onehot(i, labels(i) - 1) = 1.0;
  }
  return assemble(onehot, treatment, confounders, false);
}

DesignMatrix build_soft_design(const MatrixXd& memberships, const VectorXd& treatment, const MatrixXd& confounders) {
  check_treatment(treatment, memberships.rows());
  for (Index i = 0; i < memberships.rows(); ++i)
    if ((memberships.row(i).array() < 0.0).any() || std::abs(memberships.row(i).sum() - 1.0) > 1e-10)
      throw DomainError("membership row " + std::to_string(i + 1) + " is not a probability vector");
  return assemble(memberships, treatment, confounders, true);
}

const char* to_string(Method method) {
  switch (method) {
    case Method::Ols: return "ols";
    case Method::Lasso: return "lasso";
    case Method::DebiasedLasso: return "debiased-lasso";
  }
  return "?";
}

bool prefer_ols(Index n, int groups, Index confounders) { return n > 2 * groups + confounders + 30; }

}  // namespace lsa
