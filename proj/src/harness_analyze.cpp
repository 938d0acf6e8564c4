#include "lsa/csv.hpp"
#include "lsa/harness.hpp"
#include "lsa/spectral.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace lsa {

namespace {

void check_binary(const MatrixXd& responses) {
  for (Index i = 0; i < responses.rows(); ++i)
    for (Index j = 0; j < responses.cols(); ++j) {
      const double v = responses(i, j);
      if (v != 0.0 && v != 1.0)
        throw DataError("responses: non-binary entry " + csv::format(v) + " at row " + std::to_string(i + 1) +
                        ", column " + std::to_string(j + 1));
    }
}

}  // namespace

AnalysisReport analyze(const MatrixXd& responses, const MatrixXd& outcome, const AnalyzeOptions& options) {
  const Index n = responses.rows();
  if (n == 0 || responses.cols() == 0) throw DataError("responses: empty matrix");
  check_binary(responses);
  if (outcome.rows() != n)
    throw DataError("outcome has " + std::to_string(outcome.rows()) + " rows but responses have " + std::to_string(n));
  if (outcome.cols() < 2) throw DataError("outcome needs columns Y and D");
  if (options.estimator && *options.estimator != Estimator::Ols && *options.estimator != Estimator::Lasso &&
      *options.estimator != Estimator::Dl)
    throw ConfigError("analyze: estimator must be ols, lasso or dl");

  const Rng rng(options.seed);
  AnalysisReport report;

  if (options.groups) {
    if (*options.groups < 1) throw ConfigError("analyze: number of groups must be >= 1");
    report.groups = *options.groups;
  } else {
    const auto pa = select_groups_parallel_analysis(responses, options.max_groups, rng.derive(1));
    report.groups = static_cast<int>(pa.groups);
    report.groups_selected = true;
    report.singular_values = pa.observed;
    report.pa_thresholds = pa.thresholds;
    if (report.groups < 1) {
      report.warnings.push_back("parallel analysis found no structure; using a single group");
      report.groups = 1;
    }
  }
  const int groups = report.groups;

  KMeansOptions km;
  km.restarts = options.kmeans_restarts;
  auto clusters = spectral_cluster(responses, groups, rng.derive(2), km);
  report.labels = clusters.labels;
  report.warnings.insert(report.warnings.end(), clusters.warnings.begin(), clusters.warnings.end());

  report.tau_hat = VectorXd::Zero(groups);
  report.theta_hat = MatrixXd::Zero(responses.cols(), groups);
  for (Index i = 0; i < n; ++i) {
    const int g = report.labels(i) - 1;
    report.tau_hat(g) += 1.0;
    report.theta_hat.col(g) += responses.row(i).transpose();
  }
  for (int g = 0; g < groups; ++g) {
    if (report.tau_hat(g) > 0) report.theta_hat.col(g) /= report.tau_hat(g);
  }
  report.tau_hat /= static_cast<double>(n);

  // Heatmap items: largest spread of the cluster means (population variance).
  VectorXd spread(responses.cols());
  for (Index j = 0; j < responses.cols(); ++j) {
    const auto row = report.theta_hat.row(j).array();
    spread(j) = (row - row.mean()).square().mean();
  }
  std::vector<Index> order(static_cast<std::size_t>(responses.cols()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return spread(a) > spread(b); });
  order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(std::max(0, options.top_items))));
  report.top_items = std::move(order);

  const VectorXd y = outcome.col(0);
  const VectorXd d = outcome.col(1);
  const MatrixXd x = outcome.rightCols(outcome.cols() - 2);
  const DesignMatrix design = build_design(report.labels, d, x, groups);
  report.estimator = options.estimator.value_or(prefer_ols(n, groups, x.cols()) ? Estimator::Ols : Estimator::Dl);
  if (report.estimator == Estimator::Ols) {
    report.effect = ols_fit(y, design, options.level);
  } else {
    HighDimOptions hd;
    hd.folds = options.folds;
    hd.grid_size = options.grid_size;
    hd.level = options.level;
    hd.debias = report.estimator == Estimator::Dl;
    HighDimFit fit = fit_high_dim(y, design, rng.derive(3), hd);
    report.effect = fit.debiased ? *fit.debiased : fit.lasso;
  }
  return report;
}

AnalysisReport analyze_dataset(const std::filesystem::path& responses_csv, const std::filesystem::path& outcome_csv,
                               const AnalyzeOptions& options) {
  const csv::Table responses = csv::read(responses_csv);
  const csv::Table outcome = csv::read(outcome_csv);
  if (!outcome.header.empty()) {
    if (outcome.header.size() < 2 || outcome.header[0] != "Y" || outcome.header[1] != "D")
      throw DataError(outcome_csv.string() + ": header must start with Y, D");
  }
  return analyze(responses.values, outcome.values, options);
}

void write_analysis(const AnalysisReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int groups = report.groups;
  const EffectEstimate& e = report.effect;
  {
    std::ofstream out(dir / "effects.csv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "effects.csv").string());
    csv::write_row(out, {"subgroup", "method", "mu_hat", "se", "lower", "upper", "lambda"});
    for (int g = 0; g < groups; ++g) {
      const bool ci = !e.intervals.empty();
      csv::write_row(out, {std::to_string(g + 1), to_string(report.estimator), csv::format(e.mu(g)),
                           ci ? csv::format(e.standard_error(g)) : "", ci ? csv::format(e.intervals[g].lower) : "",
                           ci ? csv::format(e.intervals[g].upper) : "", e.lambda ? csv::format(*e.lambda) : ""});
    }
  }
  std::vector<std::string> classes;
  for (int g = 1; g <= groups; ++g) classes.push_back("class_" + std::to_string(g));
  csv::write_matrix(dir / "tau.csv", classes, report.tau_hat.transpose());
  csv::write_matrix(dir / "theta.csv", classes, report.theta_hat);
  csv::write_matrix(dir / "labels.csv", {"label"}, report.labels.cast<double>());

  MatrixXd heat(static_cast<Index>(report.top_items.size()), groups + 1);
  for (std::size_t k = 0; k < report.top_items.size(); ++k) {
    heat(static_cast<Index>(k), 0) = static_cast<double>(report.top_items[k] + 1);
    heat.row(static_cast<Index>(k)).tail(groups) = report.theta_hat.row(report.top_items[k]);
  }
  std::vector<std::string> heat_header{"item"};
  heat_header.insert(heat_header.end(), classes.begin(), classes.end());
  csv::write_matrix(dir / "heatmap.csv", heat_header, heat);

  if (report.groups_selected) {
    MatrixXd pa(report.singular_values.size(), 3);
    for (Index k = 0; k < pa.rows(); ++k) pa.row(k) << static_cast<double>(k + 1), report.singular_values(k), report.pa_thresholds(k);
    csv::write_matrix(dir / "parallel_analysis.csv", {"component", "singular_value", "threshold"}, pa);
  }

  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << "program = " << version_string() << "\n";
  out << "groups = " << groups << (report.groups_selected ? " (parallel analysis)" : " (given)") << "\n";
  out << "estimator = " << to_string(report.estimator) << "\n";
  out << "n = " << report.labels.size() << "\n";
  for (const auto& w : report.warnings) out << "warning = " << w << "\n";
}

}  // namespace lsa
