#include "lsa/lcm.hpp"

#include "lsa/csv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lsa {

void ItemParams::validate() const {
  if (theta.rows() < 1 || theta.cols() < 1) throw ConfigError("item parameters need J >= 1 and G >= 1");
  if (tau.size() != theta.cols()) throw ConfigError("tau length must equal the number of classes");
  for (Index j = 0; j < theta.rows(); ++j)
    for (Index g = 0; g < theta.cols(); ++g)
      if (!(theta(j, g) >= 0.0 && theta(j, g) <= 1.0))
        throw ConfigError("theta(" + std::to_string(j + 1) + "," + std::to_string(g + 1) + ") outside [0,1]");
  if ((tau.array() <= 0.0).any()) throw ConfigError("class proportions must be positive");
  if (std::abs(tau.sum() - 1.0) > 1e-12) throw ConfigError("class proportions must sum to 1");
}

ItemParams ItemParams::balanced(MatrixXd theta) {
  const Index groups = theta.cols();
  return {std::move(theta), VectorXd::Constant(groups, 1.0 / static_cast<double>(groups))};
}

LabeledResponses sample_lcm(const ItemParams& params, Index n, Rng rng) {
  params.validate();
  if (n < 1) throw ConfigError("sample size must be at least 1");

  const Index items = params.items();
  const Index groups = params.classes();
  VectorXd cumulative(groups);
  double acc = 0.0;
  for (Index g = 0; g < groups; ++g) cumulative(g) = (acc += params.tau(g));

  Rng label_rng = rng.derive(0);
  Rng response_rng = rng.derive(1);
  LabeledResponses out{MatrixXd(n, items), Labels(n)};
  for (Index i = 0; i < n; ++i) {
    const double u = label_rng.uniform() * acc;
    Index g = 0;
    while (g + 1 < groups && u >= cumulative(g)) ++g;
    (*out.labels)(i) = static_cast<int>(g + 1);
    for (Index j = 0; j < items; ++j) out.responses(i, j) = response_rng.bernoulli(params.theta(j, g)) ? 1.0 : 0.0;
  }
  return out;
}

MatrixXd make_stacked_theta(const MatrixXd& base, Index copies) {
  if (copies < 1) throw ConfigError("make_stacked_theta: copies must be at least 1");
  if ((base.array() < 0.0).any() || (base.array() > 1.0).any())
    throw ConfigError("make_stacked_theta: base entries must lie in [0,1]");
  MatrixXd out(base.rows() * copies, base.cols());
  for (Index k = 0; k < copies; ++k) out.middleRows(k * base.rows(), base.rows()) = base;
  return out;
}

MatrixXd append_noninformative(const MatrixXd& theta, Index count, double value) {
  if (!(value >= 0.0 && value <= 1.0)) throw ConfigError("noninformative item probability must lie in [0,1]");
  if (count < 0) throw ConfigError("noninformative item count must be nonnegative");
  MatrixXd out(theta.rows() + count, theta.cols());
  out.topRows(theta.rows()) = theta;
  out.bottomRows(count).setConstant(value);
  return out;
}

MatrixXd base_theta_block() {
  MatrixXd base(5, 3);
  base << 0.25, 0.75, 0.75,
          0.25, 0.75, 0.25,
          0.75, 0.25, 0.75,
          0.75, 0.25, 0.25,
          0.75, 0.75, 0.25;
  return base;
}

SeparabilityReport separability(const MatrixXd& theta, double delta) {
  if (theta.cols() < 2) throw DomainError("separability needs at least two classes");
  if (!(delta > 0.0 && delta < 1.0)) throw DomainError("separation threshold must lie in (0,1)");

  // Slack absorbs decimal round-off such as 0.7 - 0.2 < 0.5.
  constexpr double slack = 1e-12;
  SeparabilityReport report;
  report.delta = delta;
  report.j_informative = std::numeric_limits<Index>::max();
  for (Index g = 0; g < theta.cols(); ++g) {
    for (Index h = g + 1; h < theta.cols(); ++h) {
      SeparabilityReport::PairItems pair{static_cast<int>(g + 1), static_cast<int>(h + 1), {}};
      for (Index j = 0; j < theta.rows(); ++j)
        if (std::abs(theta(j, g) - theta(j, h)) >= delta - slack) pair.items.push_back(j);
      report.j_informative = std::min<Index>(report.j_informative, static_cast<Index>(pair.items.size()));
      report.informative_items.push_back(std::move(pair));
    }
  }
  return report;
}

const char* to_string(DesignDiagnostics::Regime regime) {
  return regime == DesignDiagnostics::Regime::LowDim ? "low-dim" : "high-dim";
}

DesignDiagnostics check_design_conditions(const SeparabilityReport& report, Index n, Index p, Index groups,
                                          const Labels* labels, const MatrixXd* theta) {
  DesignDiagnostics diag;
  const double nd = static_cast<double>(n);
  const double width = static_cast<double>(p + 2 * groups);
  diag.regime = width < nd ? DesignDiagnostics::Regime::LowDim : DesignDiagnostics::Regime::HighDim;

  const double exponent = static_cast<double>(report.j_informative) * report.delta * report.delta;
  diag.signal_exp = std::exp(exponent);

  auto add = [&](std::string name, double threshold) {
    diag.checks.push_back({std::move(name), diag.signal_exp, threshold, diag.signal_exp > threshold});
  };
  add("low-dim estimation", 1.0);
  add("low-dim inference", std::sqrt(nd));
  add("high-dim estimation", std::sqrt(nd / std::log(width)));
  add("high-dim inference", nd);

  const double g2 = static_cast<double>(groups * groups);
  diag.sample_ratio = nd / g2;
  diag.item_ratio = exponent / g2;

  if (labels && labels->size() > 0) {
    std::vector<Index> counts(static_cast<std::size_t>(groups), 0);
    for (Index i = 0; i < labels->size(); ++i) {
      const int g = (*labels)(i);
      if (g >= 1 && g <= groups) ++counts[static_cast<std::size_t>(g - 1)];
    }
    const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
    diag.balance_ratio = *hi > 0 ? static_cast<double>(*lo) / static_cast<double>(*hi) : 0.0;
  }

  if (theta && theta->size() > 0) {
    Eigen::JacobiSVD<MatrixXd> svd(*theta);
    const VectorXd& s = svd.singularValues();
    const double tol = s(0) * 1e-12 * static_cast<double>(std::max(theta->rows(), theta->cols()));
    double smallest = s(0);
    for (Index k = 0; k < s.size(); ++k)
      if (s(k) > tol) smallest = s(k);
    if (smallest > 0.0) diag.singular_ratio = s(0) / smallest;
  }
  return diag;
}

void write_item_params(const ItemParams& params, const std::filesystem::path& theta_csv,
                       const std::filesystem::path& tau_csv) {
  std::vector<std::string> header;
  for (Index g = 0; g < params.classes(); ++g) header.push_back("class_" + std::to_string(g + 1));
  csv::write_matrix(theta_csv, header, params.theta);
  csv::write_matrix(tau_csv, header, params.tau.transpose());
}

MatrixXd read_theta_csv(const std::filesystem::path& theta_csv) {
  auto table = csv::read(theta_csv);
  if (table.values.size() == 0) throw DataError(theta_csv.string() + ": empty item parameter matrix");
  for (Index j = 0; j < table.values.rows(); ++j)
    for (Index g = 0; g < table.values.cols(); ++g)
      if (!(table.values(j, g) >= 0.0 && table.values(j, g) <= 1.0))
        throw DataError(theta_csv.string() + ": theta outside [0, 1] at row " + std::to_string(j + 1) + ", column " +
                        std::to_string(g + 1));
  return std::move(table.values);
}

ItemParams read_item_params(const std::filesystem::path& theta_csv,
                            const std::optional<std::filesystem::path>& tau_csv) {
  ItemParams params = ItemParams::balanced(read_theta_csv(theta_csv));
  if (tau_csv) {
    const auto tau = csv::read(*tau_csv);
    if (tau.values.rows() != 1) throw DataError(tau_csv->string() + ": tau must be a single row");
    params.tau = tau.values.row(0).transpose();
  }
  params.validate();
  return params;
}

}  // namespace lsa
