#pragma once

// Stage two: design assembly and the OLS / Lasso / debiased-Lasso estimators
// of the subgroup outcome model
//
//   Y = sum_g 1{Z = g} alpha_g + D sum_g 1{Z = g} mu_g + X' beta + eps.

#include "lsa/rng.hpp"
#include "lsa/types.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lsa {

struct ColumnRole {
  enum class Kind { Subgroup, TreatedSubgroup, Confounder };
  Kind kind = Kind::Subgroup;
  int index = 1;  // 1-based within its kind
  std::string name() const;
};

/// n x (2G + p) regression matrix (Z, DZ, X) with column roles.
struct DesignMatrix {
  MatrixXd values;
  std::vector<ColumnRole> roles;
  int groups = 0;
  Index confounders = 0;
  // Soft designs carry posterior probabilities instead of one-hot indicators;
  // the row-sum invariant still holds.
  bool soft = false;

  Index rows() const { return values.rows(); }
  Index cols() const { return values.cols(); }
  /// Column of mu_g (g is 1-based).
  Index treated_column(int g) const { return groups + g - 1; }

  /// Throws DomainError when the indicator block is not row-stochastic
  /// (one-hot for hard designs) or a treated column is not indicator x D.
  void validate(const VectorXd& treatment) const;
};

DesignMatrix build_design(const Labels& labels, const VectorXd& treatment, const MatrixXd& confounders, int groups);

/// Design with a row-stochastic membership matrix in place of the one-hot
/// indicators.
DesignMatrix build_soft_design(const MatrixXd& memberships, const VectorXd& treatment, const MatrixXd& confounders);

enum class Method { Ols, Lasso, DebiasedLasso };
const char* to_string(Method method);

struct EffectEstimate {
  VectorXd gamma;            // (alpha, mu, beta)
  VectorXd mu;
  MatrixXd covariance;       // G x G; empty for plain Lasso
  VectorXd standard_error;   // sqrt(covariance_gg / n)
  std::vector<Interval> intervals;
  Method method = Method::Ols;
  std::optional<double> lambda;
  double sigma2 = 0.0;
  double level = 0.95;
  Index n = 0;
};

/// Ordinary least squares with homoskedastic covariance
/// sigma^2 n (M'M)^-1. Throws NumericalError naming the offending columns when
/// cond(M'M) exceeds 1e12.
EffectEstimate ols_fit(const VectorXd& y, const DesignMatrix& design, double level = 0.95);

struct LassoOptions {
  double tolerance = 1e-8;   // max standardized coefficient change per sweep
  int max_sweeps = 100000;
  bool protect_subgroups = false;  // leave the 2G subgroup columns unpenalized
  // Penalize on the unit-scale columns M_j / rms(M_j) (no centering: the
  // indicator block already spans the intercept). Coefficients are always
  // reported on the original scale.
  bool standardize = true;
  bool track_objective = false;
};

struct LassoFit {
  VectorXd coef;
  double lambda = 0.0;
  int sweeps = 0;
  std::vector<double> objective_trace;  // one value per sweep when tracked
};

/// argmin (1/n)||y - M g||^2 + lambda * sum_j w_j s_j |g_j| by cyclic
/// coordinate descent, where s_j = ||M_j|| / sqrt(n) under standardization and
/// 1 otherwise. `weights` defaults to all ones; an infinite weight pins a
/// coefficient at zero.
LassoFit lasso_fit(const VectorXd& y, const MatrixXd& design, double lambda, const VectorXd& weights = {},
                   const LassoOptions& options = {});
LassoFit lasso_fit(const VectorXd& y, const DesignMatrix& design, double lambda, const LassoOptions& options = {});

/// Smallest lambda with an all-zero penalized solution: max_j 2|M_j' r| / (n w_j s_j)
/// where r is the residual after fitting the unpenalized columns.
double lambda_max(const VectorXd& y, const MatrixXd& design, const VectorXd& weights = {},
                  const LassoOptions& options = {});

/// `count` points log-spaced over [ratio * top, top], descending.
std::vector<double> lambda_grid(double top, int count = 100, double ratio = 1e-4);

struct CvResult {
  double lambda = 0.0;
  std::size_t index = 0;
  std::vector<double> grid;      // descending
  std::vector<double> cv_error;  // mean out-of-fold squared error per grid point
};

/// K-fold cross-validation over `grid`. Fold assignment is a seeded shuffle;
/// ties in CV error go to the larger lambda.
CvResult cv_lambda(const VectorXd& y, const DesignMatrix& design, std::vector<double> grid, int folds, const Rng& rng,
                   const LassoOptions& options = {});

struct NodewiseOptions {
  enum class Rule { CrossValidated, Fixed };
  Rule rule = Rule::CrossValidated;
  double fixed_lambda = 0.0;  // used by Rule::Fixed for every column
  int folds = 10;
  int grid_size = 100;
  // Rows of Omega to compute; empty means all. Rows not requested stay zero.
  std::vector<Index> rows;
  LassoOptions lasso;
};

struct NodewiseResult {
  MatrixXd omega;           // (2G+p) x (2G+p)
  VectorXd tau2;            // per computed row, zero elsewhere
  VectorXd lambdas;         // per computed row
  std::vector<Index> rows;  // computed rows
};

/// Nodewise Lasso approximate inverse of M'M/n. Row j is c_j / tau_j^2 with
/// c_j = (-coef, 1 at j) from the Lasso of column j on the others and
/// tau_j^2 = M_j'(M_j - M_{-j} coef)/n. Throws NumericalError when tau_j^2 is
/// numerically zero (a near-duplicate column).
NodewiseResult nodewise_lasso(const DesignMatrix& design, const Rng& rng, const NodewiseOptions& options = {});

/// gamma_lasso + Omega M'(y - M gamma_lasso)/n with covariance
/// sigma^2 Omega (M'M/n) Omega' and sigma^2 = RSS / max(n - |support|, n/2).
EffectEstimate debiased_lasso(const VectorXd& y, const DesignMatrix& design, const VectorXd& gamma_lasso,
                              const MatrixXd& omega, double level = 0.95);

struct HighDimOptions {
  int folds = 10;
  int grid_size = 100;
  double level = 0.95;
  bool debias = true;
  LassoOptions lasso;
};

struct HighDimFit {
  EffectEstimate lasso;
  std::optional<EffectEstimate> debiased;
  CvResult cv;
};

/// Cross-validated Lasso and, optionally, its debiased version with nodewise
/// rows computed for the mu coordinates. One fold split, drawn from
/// `rng.derive(0)`, is shared by the outcome and nodewise cross-validations.
HighDimFit fit_high_dim(const VectorXd& y, const DesignMatrix& design, const Rng& rng,
                        const HighDimOptions& options = {});

/// Regime rule for real-data analysis: OLS when n > 2G + p + 30.
bool prefer_ols(Index n, int groups, Index confounders);

}  // namespace lsa
