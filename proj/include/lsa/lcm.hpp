#pragma once

// Latent class model: item parameters, sampling, separability and the
// design-condition diagnostics that go with them.

#include "lsa/rng.hpp"
#include "lsa/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lsa {

/// J x G Bernoulli item parameters plus class proportions.
struct ItemParams {
  MatrixXd theta;  // theta(j, g) = P(R_j = 1 | Z = g + 1)
  VectorXd tau;

  Index items() const { return theta.rows(); }
  Index classes() const { return theta.cols(); }

  /// Throws ConfigError unless every probability is in [0,1], tau > 0 and
  /// sum(tau) = 1 within 1e-12.
  void validate() const;

  static ItemParams balanced(MatrixXd theta);
};

struct LabeledResponses {
  MatrixXd responses;             // n x J, entries exactly 0 or 1
  std::optional<Labels> labels;   // 1-based
};

/// Draws n subjects from the model. Labels are categorical(tau); responses are
/// independent Bernoulli(theta(j, Z_i)).
LabeledResponses sample_lcm(const ItemParams& params, Index n, Rng rng);

/// Vertical stack of `copies` copies of `base`.
MatrixXd make_stacked_theta(const MatrixXd& base, Index copies);

/// Appends `count` rows that are constant at `value` across classes.
MatrixXd append_noninformative(const MatrixXd& theta, Index count, double value);

/// The 5 x 3 well-separated base block used by the simulation designs.
MatrixXd base_theta_block();

struct SeparabilityReport {
  double delta = 0.0;
  Index j_informative = 0;
  // One entry per unordered class pair (g < g', 1-based) with the 0-based
  // item indices separated by at least delta.
  struct PairItems {
    int first = 0;
    int second = 0;
    std::vector<Index> items;
  };
  std::vector<PairItems> informative_items;
};

SeparabilityReport separability(const MatrixXd& theta, double delta);

struct ConditionCheck {
  std::string name;
  double signal = 0.0;     // exp(J_I delta^2)
  double threshold = 0.0;  // comparison quantity, constants dropped
  bool pass = false;       // signal > threshold
};

struct DesignDiagnostics {
  enum class Regime { LowDim, HighDim };
  Regime regime = Regime::LowDim;
  double signal_exp = 1.0;
  // Order: low-dim estimation (vs 1), low-dim inference (vs sqrt n),
  // high-dim estimation (vs sqrt(n / log(p + 2G))), high-dim inference (vs n).
  std::vector<ConditionCheck> checks;
  // Raw signal-to-noise ratios n / G^2 and J_I delta^2 / G^2.
  double sample_ratio = 0.0;
  double item_ratio = 0.0;
  std::optional<double> balance_ratio;   // n_min / n_max over observed labels
  std::optional<double> singular_ratio;  // ||theta||_2 / smallest nonzero singular value
};

/// Purely advisory; never throws for positive inputs.
DesignDiagnostics check_design_conditions(const SeparabilityReport& report, Index n, Index p, Index groups,
                                          const Labels* labels = nullptr, const MatrixXd* theta = nullptr);

const char* to_string(DesignDiagnostics::Regime regime);

// Plain-text I/O: theta is a CSV with J rows and G columns, tau a one-row CSV.
// A header line is written on output and skipped on input when non-numeric.
void write_item_params(const ItemParams& params, const std::filesystem::path& theta_csv,
                       const std::filesystem::path& tau_csv);
MatrixXd read_theta_csv(const std::filesystem::path& theta_csv);
ItemParams read_item_params(const std::filesystem::path& theta_csv,
                            const std::optional<std::filesystem::path>& tau_csv);

}  // namespace lsa
