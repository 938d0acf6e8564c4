#include "lsa/normal.hpp"
#include "lsa/regress.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace lsa {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Coordinate descent on the Gram form of the problem:
//   gram = A'A/n, cross = A'y/n, yy = y'y/n,
//   objective = yy - 2 cross'g + g'gram g + lambda sum_j w_j |g_j|.
// `residual` tracks cross - gram g, i.e. M'(y - M g)/n. Updates are the exact
// coordinate minimizers on the original scale; convergence is judged on the
// standardized scale |dg_j| sqrt(gram_jj).
class CoordinateDescent {
 public:
  // `rows` is the number of observations behind the Gram matrix, an upper
  // bound on the rank of any column block. With `standardize` each penalty
  // weight is multiplied by its column's root mean square, which is the Lasso
  // on unit-scale columns expressed in original-scale coefficients.
  CoordinateDescent(const MatrixXd& gram, VectorXd cross, double yy, const VectorXd& weights, Index rows,
                    bool standardize)
      : gram_(gram), cross_(std::move(cross)), yy_(yy), scale_(gram.diagonal().cwiseMax(0.0).cwiseSqrt()),
        weights_(standardize ? VectorXd(weights.cwiseProduct(scale_)) : weights), rows_(rows) {
    for (Index j = 0; j < gram.rows(); ++j)
      if (std::isfinite(weights_(j)) && gram(j, j) > 0.0) free_.push_back(j);
  }

  LassoFit solve(double lambda, VectorXd start, const LassoOptions& options) {
    LassoFit fit;
    fit.lambda = lambda;
    fit.coef = std::move(start);
    for (Index j = 0; j < fit.coef.size(); ++j)
      if (!std::isfinite(weights_(j)) || gram_(j, j) <= 0.0) fit.coef(j) = 0.0;
    refresh(fit.coef);

    std::vector<Index> active;
    auto sweep = [&](const std::vector<Index>& cols) {
      double max_change = 0.0;
      for (Index j : cols) max_change = std::max(max_change, update(j, lambda, fit.coef));
      ++fit.sweeps;
      if (options.track_objective) fit.objective_trace.push_back(objective(lambda, fit.coef));
      if (fit.sweeps >= options.max_sweeps && max_change >= options.tolerance) fail(fit, lambda, max_change);
      return max_change;
    };

    for (;;) {
      if (sweep(free_) < options.tolerance) break;
      active.clear();
      for (Index j : free_)
        if (fit.coef(j) != 0.0) active.push_back(j);
      // Feature-sign attempts on the current support, backing off
      // geometrically while they fail (singular block or rejected step).
      int next_attempt = kNewtonFirst;
      for (int inner = 1; sweep(active) >= options.tolerance; ++inner) {
        if (inner < next_attempt) continue;
        next_attempt *= 2;
        std::vector<Index> support;
        for (Index j : active)
          if (fit.coef(j) != 0.0) support.push_back(j);
        if (static_cast<Index>(support.size()) < rows_ && newton_step(std::move(support), lambda, fit.coef)) break;
      }
      refresh(fit.coef);
    }
    return fit;
  }

  const VectorXd& residual() const { return residual_; }

  // Share of the (uncentered) response energy explained: 1 - RSS / y'y.
  double explained(const VectorXd& coef) const {
    if (!(yy_ > 0.0)) return 1.0;
    return (cross_.dot(coef) + residual_.dot(coef)) / yy_;
  }

 private:
  double update(Index j, double lambda, VectorXd& coef) {
    const double qjj = gram_(j, j);
    const double z = residual_(j) + qjj * coef(j);
    const double threshold = 0.5 * lambda * weights_(j);
    double next = 0.0;
    if (z > threshold) {
      next = (z - threshold) / qjj;
    } else if (z < -threshold) {
      next = (z + threshold) / qjj;
    }
    const double delta = next - coef(j);
    if (delta != 0.0) {
      residual_.noalias() -= gram_.col(j) * delta;
      coef(j) = next;
    }
    return std::abs(delta) * scale_(j);
  }

  // Feature-sign step on the current support: solve
  //   gram_AA x = cross_A - (lambda/2) w_A sign_A,
  // move towards x up to the first sign change, drop the coordinates that hit
  // zero and repeat. The objective is convex along each segment and minimized
  // at x, so it never increases; coordinate descent crawls on ill-conditioned
  // supports and this jumps there directly.
  bool newton_step(std::vector<Index> support, double lambda, VectorXd& coef) {
    const double before = objective(lambda, coef);
    VectorXd trial = coef;
    bool moved = false;
    while (!support.empty()) {
      const Index size = static_cast<Index>(support.size());
      MatrixXd block(size, size);
      VectorXd rhs(size);
      for (Index a = 0; a < size; ++a) {
        const Index j = support[static_cast<std::size_t>(a)];
        for (Index b = 0; b < size; ++b) block(a, b) = gram_(j, support[static_cast<std::size_t>(b)]);
        rhs(a) = cross_(j) - 0.5 * lambda * weights_(j) * (trial(j) > 0.0 ? 1.0 : -1.0);
      }
      Eigen::LLT<MatrixXd> llt(block);
      if (llt.info() != Eigen::Success) break;
      const VectorXd x = llt.solve(rhs);
      if (!x.allFinite()) break;

      double step = 1.0;
      for (Index a = 0; a < size; ++a) {
        const double current = trial(support[static_cast<std::size_t>(a)]);
        if (x(a) * current <= 0.0) step = std::min(step, current / (current - x(a)));
      }
      std::vector<Index> kept;
      for (Index a = 0; a < size; ++a) {
        const Index j = support[static_cast<std::size_t>(a)];
        const double current = trial(j);
        trial(j) = current + step * (x(a) - current);
        if (step < 1.0 && (x(a) * current <= 0.0) && current / (current - x(a)) <= step) trial(j) = 0.0;
        if (trial(j) != 0.0) kept.push_back(j);
      }
      moved = true;
      if (step >= 1.0) break;
      support = std::move(kept);
    }
    if (!moved) return false;

    const VectorXd saved = residual_;
    refresh(trial);
    if (!(objective(lambda, trial) <= before)) {
      residual_ = saved;
      return false;
    }
    coef = std::move(trial);
    return true;
  }

  static constexpr int kNewtonFirst = 8;

  void refresh(const VectorXd& coef) {
    residual_ = cross_;
    for (Index j = 0; j < coef.size(); ++j)
      if (coef(j) != 0.0) residual_.noalias() -= gram_.col(j) * coef(j);
  }

  double objective(double lambda, const VectorXd& coef) const {
    double penalty = 0.0;
    for (Index j : free_) penalty += weights_(j) * std::abs(coef(j));
    return yy_ - cross_.dot(coef) - residual_.dot(coef) + lambda * penalty;
  }

  [[noreturn]] void fail(const LassoFit& fit, double lambda, double max_change) const {
    double kkt = 0.0;
    for (Index j : free_) {
      const double g = 2.0 * std::abs(residual_(j));
      const double bound = lambda * weights_(j);
      kkt = std::max(kkt, fit.coef(j) == 0.0 ? std::max(0.0, g - bound) : std::abs(g - bound));
    }
    std::ostringstream msg;
    msg << "lasso did not converge after " << fit.sweeps << " sweeps (lambda = " << lambda
        << ", last max standardized change = " << max_change << ", max KKT violation = " << kkt << ")";
    throw NumericalError(msg.str());
  }

  const MatrixXd& gram_;
  VectorXd cross_;
  double yy_;
  VectorXd scale_;
  VectorXd weights_;
  std::vector<Index> free_;
  Index rows_;
  VectorXd residual_;
};

VectorXd default_weights(const VectorXd& weights, Index p) {
  if (weights.size() == 0) return VectorXd::Ones(p);
  if (weights.size() != p) throw DomainError("penalty weight vector length differs from design columns");
  if ((weights.array() < 0.0).any()) throw DomainError("penalty weights must be nonnegative");
  return weights;
}

VectorXd design_weights(const DesignMatrix& design, const LassoOptions& options) {
  VectorXd w = VectorXd::Ones(design.cols());
  if (options.protect_subgroups) w.head(2 * design.groups).setZero();
  return w;
}

// [M y] so that the outcome and every design column can serve as a response.
MatrixXd augment(const MatrixXd& m, const VectorXd& y) {
  MatrixXd a(m.rows(), m.cols() + 1);
  a.leftCols(m.cols()) = m;
  a.col(m.cols()) = y;
  return a;
}

MatrixXd scaled_gram(const MatrixXd& a) {
  MatrixXd g = MatrixXd::Zero(a.cols(), a.cols());
  g.selfadjointView<Eigen::Lower>().rankUpdate(a.transpose(), 1.0 / static_cast<double>(a.rows()));
  g.triangularView<Eigen::StrictlyUpper>() = g.transpose();
  return g;
}

double lambda_max_gram(const MatrixXd& gram, Index rows, Index response, const VectorXd& weights,
                       const LassoOptions& options) {
  // Residual gradient after fitting the unpenalized columns alone.
  VectorXd pinned = weights;
  bool any_free = false;
  for (Index j = 0; j < pinned.size(); ++j) {
    if (std::isfinite(pinned(j)) && pinned(j) > 0.0) pinned(j) = kInf;
    else if (std::isfinite(pinned(j))) any_free = true;
  }
  VectorXd r = gram.col(response);
  if (any_free) {
    CoordinateDescent cd(gram, gram.col(response), gram(response, response), pinned, rows, false);
    cd.solve(1.0, VectorXd::Zero(gram.rows()), options);
    r = cd.residual();
  }
  double top = 0.0;
  for (Index j = 0; j < weights.size(); ++j) {
    const double w = options.standardize ? weights(j) * std::sqrt(std::max(gram(j, j), 0.0)) : weights(j);
    if (std::isfinite(w) && w > 0.0) top = std::max(top, 2.0 * std::abs(r(j)) / w);
  }
  return top;
}

std::vector<int> assign_folds(Index n, int folds, Rng rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  lsa::shuffle(order.begin(), order.end(), rng);
  std::vector<int> fold_of(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < order.size(); ++k) fold_of[static_cast<std::size_t>(order[k])] = static_cast<int>(k % folds);
  return fold_of;
}

// Along a CV path, once a training fit explains this share of the response
// (or its support reaches the number of training rows) the remaining, smaller
// penalties reuse it; near-interpolating fits converge very slowly when
// columns outnumber rows and are never selected anyway.
constexpr double kPathSaturation = 0.999;

struct CvTask {
  Index response;
  VectorXd weights;
  std::vector<double> grid;  // descending
  std::vector<double> error;
};

// One pass over the folds; every task shares the split and the training Gram.
void run_cv(const MatrixXd& augmented, const std::vector<int>& fold_of, int folds, std::vector<CvTask>& tasks,
            const LassoOptions& options) {
  const Index n = augmented.rows();
  for (auto& task : tasks) task.error.assign(task.grid.size(), 0.0);
  for (int f = 0; f < folds; ++f) {
    std::vector<Index> train, held;
    for (Index i = 0; i < n; ++i) (fold_of[static_cast<std::size_t>(i)] == f ? held : train).push_back(i);
    const MatrixXd train_rows = augmented(train, Eigen::all);
    const MatrixXd held_rows = augmented(held, Eigen::all);
    const MatrixXd gram = scaled_gram(train_rows);
    for (auto& task : tasks) {
      CoordinateDescent cd(gram, gram.col(task.response), gram(task.response, task.response), task.weights,
                           static_cast<Index>(train.size()), options.standardize);
      VectorXd coef = VectorXd::Zero(gram.rows());
      bool saturated = false;
      double held_sse = held_rows.col(task.response).squaredNorm();
      for (std::size_t k = 0; k < task.grid.size(); ++k) {
        if (!saturated) {
          try {
            VectorXd next = cd.solve(task.grid[k], coef, options).coef;
            coef = std::move(next);
          } catch (const NumericalError&) {
            // As glmnet does: a penalty that fails to converge ends the path
            // and the smaller penalties keep the last converged solution.
            saturated = true;
          }
          if (!saturated) {
            held_sse = (held_rows.col(task.response) - held_rows * coef).squaredNorm();
            saturated = cd.explained(coef) >= kPathSaturation ||
                        (coef.array() != 0.0).count() >= static_cast<Index>(train.size());
          }
        }
        task.error[k] += held_sse;
      }
    }
  }
  for (auto& task : tasks)
    for (double& e : task.error) e /= static_cast<double>(n);
}

std::size_t pick_lambda(const std::vector<double>& error) {
  // Grid is descending, so the first strict minimum is the largest lambda.
  std::size_t best = 0;
  for (std::size_t k = 1; k < error.size(); ++k)
    if (error[k] < error[best]) best = k;
  return best;
}

void check_folds(Index n, int folds) {
  if (folds < 2) throw ConfigError("cross-validation needs at least two folds");
  if (n < folds)
    throw ConfigError("cross-validation: " + std::to_string(n) + " observations for " + std::to_string(folds) +
                      " folds");
}

VectorXd nodewise_weights(Index columns, Index j) {
  VectorXd w = VectorXd::Ones(columns + 1);
  w(j) = kInf;
  w(columns) = kInf;  // the outcome slot of the augmented matrix
  return w;
}

struct NodewiseRow {
  Index column;
  double lambda;
  VectorXd coef;  // length cols + 1, zero at column and outcome slot
};

void write_nodewise_row(const MatrixXd& gram, const NodewiseRow& row, NodewiseResult& out) {
  const Index j = row.column;
  const Index k = out.omega.cols();
  const VectorXd coef = row.coef.head(k);
  // tau^2 = M_j'(M_j - M_{-j} coef)/n; equals ||res||^2/n + (lambda/2)||coef||_1
  // at the exact minimizer of (1/n)||res||^2 + lambda||coef||_1.
  const double tau2 = gram(j, j) - gram.col(j).head(k).dot(coef);
  const double floor = 1e-12 * std::max(1.0, gram(j, j));
  if (!(tau2 > floor))
    throw NumericalError("nodewise lasso: column " + std::to_string(j + 1) +
                         " is (nearly) a linear combination of the others (tau^2 = " + std::to_string(tau2) + ")");
  out.omega.row(j) = -coef.transpose() / tau2;
  out.omega(j, j) = 1.0 / tau2;
  out.tau2(j) = tau2;
  out.lambdas(j) = row.lambda;
}

std::vector<Index> requested_rows(const NodewiseOptions& options, Index columns) {
  std::vector<Index> rows = options.rows;
  if (rows.empty()) {
    rows.resize(static_cast<std::size_t>(columns));
    std::iota(rows.begin(), rows.end(), Index{0});
  }
  for (Index r : rows)
    if (r < 0 || r >= columns) throw DomainError("nodewise lasso: row index out of range");
  return rows;
}

double grid_top_nodewise(const MatrixXd& gram, Index j, Index columns, bool standardize) {
  double top = 0.0;
  for (Index c = 0; c < columns; ++c) {
    if (c == j || !(gram(c, c) > 0.0)) continue;
    const double w = standardize ? std::sqrt(gram(c, c)) : 1.0;
    top = std::max(top, 2.0 * std::abs(gram(c, j)) / w);
  }
  return top;
}

}  // namespace

LassoFit lasso_fit(const VectorXd& y, const MatrixXd& design, double lambda, const VectorXd& weights,
                   const LassoOptions& options) {
  if (!(lambda >= 0.0)) throw DomainError("lasso penalty must be nonnegative");
  if (y.size() != design.rows()) throw DomainError("lasso_fit: outcome length differs from design rows");
  const Index p = design.cols();
  VectorXd w(p + 1);
  w.head(p) = default_weights(weights, p);
  w(p) = kInf;
  const MatrixXd gram = scaled_gram(augment(design, y));
  CoordinateDescent cd(gram, gram.col(p), gram(p, p), w, design.rows(), options.standardize);
  LassoFit fit = cd.solve(lambda, VectorXd::Zero(p + 1), options);
  fit.coef.conservativeResize(p);
  return fit;
}

LassoFit lasso_fit(const VectorXd& y, const DesignMatrix& design, double lambda, const LassoOptions& options) {
  return lasso_fit(y, design.values, lambda, design_weights(design, options), options);
}

double lambda_max(const VectorXd& y, const MatrixXd& design, const VectorXd& weights, const LassoOptions& options) {
  const Index p = design.cols();
  VectorXd w(p + 1);
  w.head(p) = default_weights(weights, p);
  w(p) = kInf;
  return lambda_max_gram(scaled_gram(augment(design, y)), design.rows(), p, w, options);
}

std::vector<double> lambda_grid(double top, int count, double ratio) {
  if (count < 1) throw ConfigError("lambda grid needs at least one point");
  if (!(top > 0.0)) return std::vector<double>(1, 0.0);
  std::vector<double> grid(static_cast<std::size_t>(count));
  for (int k = 0; k < count; ++k) {
    const double t = count == 1 ? 0.0 : static_cast<double>(k) / static_cast<double>(count - 1);
    grid[static_cast<std::size_t>(k)] = top * std::pow(ratio, t);
  }
  return grid;
}

CvResult cv_lambda(const VectorXd& y, const DesignMatrix& design, std::vector<double> grid, int folds, const Rng& rng,
                   const LassoOptions& options) {
  if (grid.empty()) throw ConfigError("cv_lambda: empty penalty grid");
  if (y.size() != design.rows()) throw DomainError("cv_lambda: outcome length differs from design rows");
  check_folds(design.rows(), folds);
  std::sort(grid.begin(), grid.end(), std::greater<>());

  const Index p = design.cols();
  CvTask task{p, VectorXd(p + 1), grid, {}};
  task.weights.head(p) = design_weights(design, options);
  task.weights(p) = kInf;
  std::vector<CvTask> tasks{std::move(task)};
  run_cv(augment(design.values, y), assign_folds(design.rows(), folds, rng), folds, tasks, options);

  CvResult out;
  out.grid = std::move(tasks[0].grid);
  out.cv_error = std::move(tasks[0].error);
  out.index = pick_lambda(out.cv_error);
  out.lambda = out.grid[out.index];
  return out;
}

NodewiseResult nodewise_lasso(const DesignMatrix& design, const Rng& rng, const NodewiseOptions& options) {
  const Index k = design.cols();
  const MatrixXd augmented = augment(design.values, VectorXd::Zero(design.rows()));
  const MatrixXd gram = scaled_gram(augmented);

  NodewiseResult out;
  out.rows = requested_rows(options, k);
  out.omega = MatrixXd::Zero(k, k);
  out.tau2 = VectorXd::Zero(k);
  out.lambdas = VectorXd::Zero(k);

  std::vector<double> chosen(out.rows.size(), options.fixed_lambda);
  if (options.rule == NodewiseOptions::Rule::CrossValidated) {
    check_folds(design.rows(), options.folds);
    std::vector<CvTask> tasks;
    for (Index j : out.rows)
      tasks.push_back({j, nodewise_weights(k, j), lambda_grid(grid_top_nodewise(gram, j, k, options.lasso.standardize), options.grid_size), {}});
    run_cv(augmented, assign_folds(design.rows(), options.folds, rng), options.folds, tasks, options.lasso);
    for (std::size_t t = 0; t < tasks.size(); ++t) chosen[t] = tasks[t].grid[pick_lambda(tasks[t].error)];
  } else if (!(options.fixed_lambda >= 0.0)) {
    throw DomainError("nodewise lasso: fixed penalty must be nonnegative");
  }

  for (std::size_t t = 0; t < out.rows.size(); ++t) {
    const Index j = out.rows[t];
    const VectorXd w = nodewise_weights(k, j);
    CoordinateDescent cd(gram, gram.col(j), gram(j, j), w, design.rows(), options.lasso.standardize);
    write_nodewise_row(gram, {j, chosen[t], cd.solve(chosen[t], VectorXd::Zero(k + 1), options.lasso).coef}, out);
  }
  return out;
}

EffectEstimate debiased_lasso(const VectorXd& y, const DesignMatrix& design, const VectorXd& gamma_lasso,
                              const MatrixXd& omega, double level) {
  const Index n = design.rows();
  const Index k = design.cols();
  if (y.size() != n || gamma_lasso.size() != k || omega.rows() != k || omega.cols() != k)
    throw DomainError("debiased_lasso: shapes do not conform");

  const VectorXd residual = y - design.values * gamma_lasso;
  EffectEstimate est;
  est.method = Method::DebiasedLasso;
  est.level = level;
  est.n = n;
  est.gamma = gamma_lasso + omega * (design.values.transpose() * residual) / static_cast<double>(n);

  Index support = 0;
  for (Index j = 0; j < k; ++j)
    if (gamma_lasso(j) != 0.0) ++support;
  const double dof = std::max(static_cast<double>(n - support), 0.5 * static_cast<double>(n));
  est.sigma2 = residual.squaredNorm() / dof;

  const auto omega_mu = omega.middleRows(design.groups, design.groups);
  const MatrixXd m_omega = design.values * omega_mu.transpose();  // n x G
  est.covariance = est.sigma2 * (m_omega.transpose() * m_omega) / static_cast<double>(n);
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

HighDimFit fit_high_dim(const VectorXd& y, const DesignMatrix& design, const Rng& rng, const HighDimOptions& options) {
  const Index n = design.rows();
  const Index k = design.cols();
  if (y.size() != n) throw DomainError("fit_high_dim: outcome length differs from design rows");
  check_folds(n, options.folds);

  const MatrixXd augmented = augment(design.values, y);
  const MatrixXd gram = scaled_gram(augmented);

  // Outcome regression first, then one nodewise regression per mu column.
  std::vector<CvTask> tasks;
  VectorXd outcome_weights(k + 1);
  outcome_weights.head(k) = design_weights(design, options.lasso);
  outcome_weights(k) = kInf;
  tasks.push_back({k, outcome_weights,
                   lambda_grid(lambda_max_gram(gram, n, k, outcome_weights, options.lasso), options.grid_size), {}});
  if (options.debias)
    for (int g = 1; g <= design.groups; ++g) {
      const Index j = design.treated_column(g);
      tasks.push_back({j, nodewise_weights(k, j), lambda_grid(grid_top_nodewise(gram, j, k, options.lasso.standardize), options.grid_size), {}});
    }
  run_cv(augmented, assign_folds(n, options.folds, rng.derive(0)), options.folds, tasks, options.lasso);

  HighDimFit out;
  out.cv.grid = tasks[0].grid;
  out.cv.cv_error = tasks[0].error;
  out.cv.index = pick_lambda(out.cv.cv_error);
  out.cv.lambda = out.cv.grid[out.cv.index];

  CoordinateDescent outcome(gram, gram.col(k), gram(k, k), outcome_weights, n, options.lasso.standardize);
  VectorXd gamma = outcome.solve(out.cv.lambda, VectorXd::Zero(k + 1), options.lasso).coef.head(k);

  EffectEstimate& lasso = out.lasso;
  lasso.method = Method::Lasso;
  lasso.level = options.level;
  lasso.n = n;
  lasso.lambda = out.cv.lambda;
  lasso.gamma = gamma;
  lasso.mu = gamma.segment(design.groups, design.groups);
  lasso.sigma2 = (y - design.values * gamma).squaredNorm() / static_cast<double>(n);

  if (options.debias) {
    NodewiseResult nodewise;
    nodewise.omega = MatrixXd::Zero(k, k);
    nodewise.tau2 = VectorXd::Zero(k);
    nodewise.lambdas = VectorXd::Zero(k);
    for (std::size_t t = 1; t < tasks.size(); ++t) {
      const Index j = tasks[t].response;
      const double lambda = tasks[t].grid[pick_lambda(tasks[t].error)];
      CoordinateDescent cd(gram, gram.col(j), gram(j, j), tasks[t].weights, n, options.lasso.standardize);
      write_nodewise_row(gram, {j, lambda, cd.solve(lambda, VectorXd::Zero(k + 1), options.lasso).coef}, nodewise);
    }
    out.debiased = debiased_lasso(y, design, gamma, nodewise.omega, options.level);
    out.debiased->lambda = out.cv.lambda;
  }
  return out;
}

}  // namespace lsa
