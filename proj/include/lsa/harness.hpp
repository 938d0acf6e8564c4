#pragma once

// Monte Carlo orchestration, real-data analysis and result tables.

#include "lsa/lcm.hpp"
#include "lsa/regress.hpp"
#include "lsa/rng.hpp"
#include "lsa/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lsa {

enum class Estimator { Ols, Lasso, Dl, OracleOls, OracleLasso, OracleDl, EmHard, EmSoft };
const char* to_string(Estimator estimator);
Estimator parse_estimator(std::string_view name);

enum class SweepAxis { None, J, JNoninf, N };
const char* to_string(SweepAxis axis);
SweepAxis parse_axis(std::string_view name);

/// One Monte Carlo scenario. Vectors beta and beta_l may be shorter than p and
/// are zero-padded; everything else must be dimensionally exact.
struct ScenarioConfig {
  std::string name = "custom";

  // Item parameters: either `theta_base` stacked J / rows(theta_base) times,
  // or an explicit matrix read from `theta_file`. `noninformative` constant
  // rows at `noninformative_value` are appended in both cases.
  MatrixXd theta_base;
  Index informative_items = 0;  // J
  std::string theta_file;
  Index noninformative = 0;
  double noninformative_value = 0.25;
  VectorXd tau;  // empty = balanced

  Index n = 150;
  Index p = 10;
  double rho = 0.1;
  VectorXd beta, beta_l;
  double treatment_intercept = 1.0;
  bool random_treatment = false;  // D ~ Bernoulli(1/2) independent of X
  VectorXd alpha, mu;
  double noise_sd = 1.0;

  std::vector<Estimator> estimators{Estimator::Ols};
  int replicates = 200;
  std::uint64_t master_seed = 1;
  double level = 0.95;
  int folds = 10;
  int grid_size = 100;
  int kmeans_restarts = 10;
  int em_starts = 10;

  SweepAxis sweep_axis = SweepAxis::None;
  std::vector<double> sweep_values;

  int groups() const { return static_cast<int>(mu.size()); }
  /// Throws ConfigError describing the first inconsistency.
  void validate() const;
  ItemParams item_params() const;
  VectorXd padded_beta() const;
  VectorXd padded_beta_l() const;
  /// True outcome coefficients (alpha, mu, beta).
  VectorXd gamma() const;
};

/// lowdim, highdim, noninform, toy-fig2.
ScenarioConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// key = value lines; '#' starts a comment; vectors are [a, b, ...] and
/// matrices [[...], [...]]. Unknown keys are an error. A `preset = name` line
/// (which must come first) seeds the defaults.
ScenarioConfig parse_config(std::string_view text);
ScenarioConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` assignment on top of an existing config.
void apply_setting(ScenarioConfig& config, std::string_view assignment);
/// Canonical text form; parse_config(to_text(c)) reproduces c.
std::string to_text(const ScenarioConfig& config);
std::uint64_t config_hash(const ScenarioConfig& config);
/// The scenario at one sweep point (sweep cleared, axis variable set).
ScenarioConfig at_sweep_point(const ScenarioConfig& config, double value);
/// Value of the axis variable in `config`.
double axis_value(const ScenarioConfig& config, SweepAxis axis);

struct SimulatedData {
  LabeledResponses items;
  VectorXd treatment;
  MatrixXd confounders;
  VectorXd outcome;
};

// Per-replicate streams: every consumer draws from its own child of
// Rng(master_seed, index), so sweep points share common random numbers.
namespace stream {
inline constexpr std::uint64_t kItems = 1, kConfounders = 2, kTreatment = 3, kNoise = 4, kKMeans = 5, kEm = 6,
                               kStageTwo = 7;
}

SimulatedData generate_replicate(const ScenarioConfig& config, Index index);

struct ReplicateResult {
  Index index = 0;
  Estimator estimator = Estimator::Ols;
  bool ok = false;
  std::string error;
  double misclassification = 0.0;
  VectorXd mu_hat;  // in true-label order
  std::vector<Interval> intervals;  // empty for plain Lasso
  std::optional<double> lambda;
  double wall_time = 0.0;  // seconds; never written to result files
};

/// Every configured estimator on one replicate, in config order.
std::vector<ReplicateResult> run_replicate(const ScenarioConfig& config, Index index);

struct MethodSummary {
  Estimator estimator = Estimator::Ols;
  int replicates = 0;
  int failed = 0;
  double misclassification = 0.0, misclassification_se = 0.0;
  double rmse = 0.0, rmse_se = 0.0;  // pooled over subgroups
  VectorXd rmse_per_group, bias, coverage, coverage_se, mean_width;  // empty coverage for Lasso
};

struct ScenarioRun {
  ScenarioConfig config;
  std::vector<ReplicateResult> results;  // ordered by (index, estimator)
  std::vector<MethodSummary> summaries;  // config estimator order
};

struct RunOptions {
  int workers = 1;
};

/// Replicates run on a bounded worker pool; output is identical for any
/// worker count.
ScenarioRun run_scenario(const ScenarioConfig& config, const RunOptions& options = {});
std::vector<MethodSummary> summarize(const ScenarioConfig& config, const std::vector<ReplicateResult>& results);

/// replicates.csv, summary.csv, config.txt and manifest.txt.
void write_scenario(const ScenarioRun& run, const std::filesystem::path& dir);
/// Runs a single scenario or, with a sweep, one sub-directory per sweep value.
void simulate(const ScenarioConfig& config, const std::filesystem::path& out_dir, const RunOptions& options = {});

/// responses.csv (R), outcome.csv (Y, D, X_1..X_p) and labels.csv (Z).
void write_dataset(const SimulatedData& data, const std::filesystem::path& dir);

struct AnalyzeOptions {
  std::optional<int> groups;  // unset: parallel analysis
  int max_groups = 10;
  std::optional<Estimator> estimator;  // Ols, Lasso or Dl; unset: regime rule
  double level = 0.95;
  std::uint64_t seed = 1;
  int top_items = 20;
  int folds = 10;
  int grid_size = 100;
  int kmeans_restarts = 10;
};

struct AnalysisReport {
  int groups = 0;
  bool groups_selected = false;  // by parallel analysis
  VectorXd singular_values, pa_thresholds;
  Labels labels;
  VectorXd tau_hat;
  MatrixXd theta_hat;  // J x G, within-cluster column means
  Estimator estimator = Estimator::Ols;
  EffectEstimate effect;
  std::vector<Index> top_items;  // 0-based, largest across-cluster variance first
  std::vector<std::string> warnings;
};

/// `outcome` has columns (Y, D, X_1..X_p).
AnalysisReport analyze(const MatrixXd& responses, const MatrixXd& outcome, const AnalyzeOptions& options = {});
AnalysisReport analyze_dataset(const std::filesystem::path& responses_csv, const std::filesystem::path& outcome_csv,
                               const AnalyzeOptions& options = {});
void write_analysis(const AnalysisReport& report, const std::filesystem::path& dir);

struct PlotSource {
  ScenarioConfig config;
  std::vector<MethodSummary> summaries;
};

/// Reads config.txt + summary.csv from `dir` or from each sub-directory.
std::vector<PlotSource> load_summaries(const std::filesystem::path& dir);
/// Tidy rows (axis, method, metric, value, se) sorted by (method, metric,
/// axis). Throws ConfigError when the sources differ in anything but the axis
/// variable or repeat an axis value.
std::string emit_plot_data(const std::vector<PlotSource>& sources, SweepAxis axis);

std::string version_string();

}  // namespace lsa
