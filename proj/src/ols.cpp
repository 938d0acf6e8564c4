#include "lsa/normal.hpp"
#include "lsa/regress.hpp"

#include <cmath>

namespace lsa {

namespace {

constexpr double kMaxCondition = 1e12;

std::string offending_columns(const DesignMatrix& design) {
  std::string names;
  auto append = [&](Index c) {
    if (!names.empty()) names += ", ";
    names += design.roles[static_cast<std::size_t>(c)].name();
  };
  bool any_zero = false;
  for (Index c = 0; c < design.cols(); ++c)
    if (design.values.col(c).squaredNorm() == 0.0) {
      append(c);
      any_zero = true;
    }
  if (any_zero) return names;

  // Columns that column-pivoted QR places beyond the numerical rank.
  Eigen::ColPivHouseholderQR<MatrixXd> qr(design.values);
  qr.setThreshold(std::sqrt(1.0 / kMaxCondition));
  const Index rank = qr.rank();
  for (Index k = rank; k < design.cols(); ++k) append(qr.colsPermutation().indices()(k));
  return names;
}

}  // namespace

EffectEstimate ols_fit(const VectorXd& y, const DesignMatrix& design, double level) {
  const Index n = design.rows();
  const Index k = design.cols();
  if (y.size() != n) throw DomainError("ols_fit: outcome length differs from design rows");
  if (n <= k)
    throw DomainError("ols_fit: need n > 2G + p (n = " + std::to_string(n) + ", columns = " + std::to_string(k) + ")");

  Eigen::BDCSVD<MatrixXd> svd(design.values, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double smallest = s(k - 1);
  if (!(smallest > 0.0) || (s(0) / smallest) * (s(0) / smallest) > kMaxCondition)
    throw NumericalError("ols_fit: singular design (cond(M'M) > 1e12); offending columns: " +
                         offending_columns(design));

  const VectorXd inv_s = s.cwiseInverse();
  EffectEstimate est;
  est.method = Method::Ols;
  est.level = level;
  est.n = n;
  est.gamma = svd.matrixV() * (inv_s.asDiagonal() * (svd.matrixU().transpose() * y));
  const double rss = (y - design.values * est.gamma).squaredNorm();
  est.sigma2 = rss / static_cast<double>(n - k);

  // Sigma = sigma^2 n (M'M)^-1, restricted to the mu block.
  const auto v_mu = svd.matrixV().middleRows(design.groups, design.groups);
  est.covariance = est.sigma2 * static_cast<double>(n) * (v_mu * inv_s.array().square().matrix().asDiagonal() * v_mu.transpose());
  est.covariance = 0.5 * (est.covariance + est.covariance.transpose()).eval();
  est.mu = est.gamma.segment(design.groups, design.groups);

  const double z = two_sided_critical(level);
  est.standard_error = (est.covariance.diagonal() / static_cast<double>(n)).cwiseSqrt();
  for (int g = 0; g < design.groups; ++g) {
    const double half = z * est.standard_error(g);
    est.intervals.push_back({est.mu(g) - half, est.mu(g) + half});
  }
  return est;
}

}  // namespace lsa
