#include "lsa/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace lsa {

namespace {

struct EmRun {
  VectorXd tau;
  MatrixXd theta;
  MatrixXd posteriors;
  std::vector<double> trace;
  bool converged = false;
};

// Posteriors in place; returns the log-likelihood.
double e_step(const MatrixXd& responses, const VectorXd& tau, const MatrixXd& theta, MatrixXd& posteriors) {
  const MatrixXd log_theta = theta.array().log();
  const MatrixXd log_comp = (1.0 - theta.array()).log();
  posteriors = responses * (log_theta - log_comp);
  posteriors.rowwise() += (log_comp.colwise().sum() + tau.array().log().matrix().transpose());
  double loglik = 0.0;
  for (Index i = 0; i < posteriors.rows(); ++i) {
    const double top = posteriors.row(i).maxCoeff();
    auto row = posteriors.row(i).array();
    row = (row - top).exp();
    const double total = row.sum();
    row /= total;
    loglik += top + std::log(total);
  }
  return loglik;
}

void m_step(const MatrixXd& responses, const MatrixXd& posteriors, double clamp, VectorXd& tau, MatrixXd& theta) {
  const VectorXd mass = posteriors.colwise().sum().transpose();
  tau = mass / static_cast<double>(responses.rows());
  theta = responses.transpose() * posteriors;
  const VectorXd column_means = responses.colwise().mean().transpose();
  for (Index g = 0; g < theta.cols(); ++g) {
    if (mass(g) > 0.0) {
      theta.col(g) /= mass(g);
    } else {
      theta.col(g) = column_means;  // an emptied class keeps a neutral profile
    }
  }
  theta = theta.cwiseMax(clamp).cwiseMin(1.0 - clamp);
}

EmRun run_em(const MatrixXd& responses, int groups, Rng rng, const EmOptions& options) {
  const Index items = responses.cols();
  EmRun run;
  run.theta.resize(items, groups);
  for (Index g = 0; g < groups; ++g)
    for (Index j = 0; j < items; ++j) run.theta(j, g) = rng.uniform();
  run.theta = run.theta.cwiseMax(options.clamp).cwiseMin(1.0 - options.clamp);
  run.tau.resize(groups);
  for (int g = 0; g < groups; ++g) run.tau(g) = rng.exponential();
  run.tau /= run.tau.sum();

  double loglik = e_step(responses, run.tau, run.theta, run.posteriors);
  run.trace.push_back(loglik);
  for (int iter = 0; iter < options.max_iter; ++iter) {
    m_step(responses, run.posteriors, options.clamp, run.tau, run.theta);
    const double next = e_step(responses, run.tau, run.theta, run.posteriors);
    run.trace.push_back(next);
    const double gain = next - loglik;
    loglik = next;
    if (gain < options.tolerance) {
      run.converged = true;
      break;
    }
  }
  return run;
}

}  // namespace

EmFit em_lcm(const MatrixXd& responses, int groups, const Rng& rng, const EmOptions& options) {
  if (groups < 1) throw DomainError("em_lcm: need at least one class");
  if (options.starts < 1 || options.max_iter < 1) throw ConfigError("em_lcm: starts and max_iter must be >= 1");
  if (responses.rows() < 1 || responses.cols() < 1) throw DomainError("em_lcm: empty response matrix");
  if (((responses.array() != 0.0) && (responses.array() != 1.0)).any())
    throw DataError("em_lcm: responses must be binary");

  EmFit fit;
  for (int s = 0; s < options.starts; ++s) {
    EmRun run = run_em(responses, groups, rng.derive(static_cast<std::uint64_t>(s)), options);
    if (s == 0 || run.trace.back() > fit.loglik) {
      fit.loglik = run.trace.back();
      fit.tau_hat = std::move(run.tau);
      fit.theta_hat = std::move(run.theta);
      fit.posteriors = std::move(run.posteriors);
      fit.loglik_trace = std::move(run.trace);
      fit.converged = run.converged;
      fit.best_start = s;
    }
  }

  const VectorXd means = responses.colwise().mean().transpose();
  for (Index j = 0; j < means.size(); ++j)
    if (means(j) == 0.0 || means(j) == 1.0)
      fit.warnings.push_back("item " + std::to_string(j + 1) + " is constant; theta clamped to the boundary");
  if (!fit.converged)
    fit.warnings.push_back("EM stopped at max_iter = " + std::to_string(options.max_iter) + " before converging");
  return fit;
}

MatrixXd posterior_memberships(const ItemParams& params, const MatrixXd& responses, double clamp) {
  params.validate();
  if (responses.cols() != params.items()) throw DomainError("posterior_memberships: item count differs from theta rows");
  MatrixXd posteriors;
  e_step(responses, params.tau, params.theta.cwiseMax(clamp).cwiseMin(1.0 - clamp), posteriors);
  return posteriors;
}

Labels hard_assign(const EmFit& fit) {
  Labels labels(fit.posteriors.rows());
  for (Index i = 0; i < fit.posteriors.rows(); ++i) {
    Index best = 0;
    for (Index g = 1; g < fit.posteriors.cols(); ++g)
      if (fit.posteriors(i, g) > fit.posteriors(i, best)) best = g;
    labels(i) = static_cast<int>(best) + 1;
  }
  return labels;
}

DesignMatrix soft_design(const EmFit& fit, const VectorXd& treatment, const MatrixXd& confounders) {
  return build_soft_design(fit.posteriors, treatment, confounders);
}

}  // namespace lsa
