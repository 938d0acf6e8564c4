#pragma once

// Two-step EM baseline: maximum-likelihood fit of the latent class model,
// then hard (MAP) or soft (posterior) memberships for stage two.

#include "lsa/lcm.hpp"
#include "lsa/regress.hpp"
#include "lsa/rng.hpp"
#include "lsa/types.hpp"

#include <string>
#include <vector>

namespace lsa {

struct EmOptions {
  int starts = 10;
  double tolerance = 1e-8;  // stop when the log-likelihood gain drops below this
  int max_iter = 1000;
  double clamp = 1e-6;      // theta kept in [clamp, 1 - clamp]
};

struct EmFit {
  VectorXd tau_hat;
  MatrixXd theta_hat;   // J x G
  MatrixXd posteriors;  // n x G, rows sum to 1
  std::vector<double> loglik_trace;
  double loglik = 0.0;
  bool converged = false;
  int best_start = 0;
  std::vector<std::string> warnings;

  ItemParams params() const { return {theta_hat, tau_hat}; }
};

/// Best of `options.starts` EM runs by final log-likelihood. Start s draws
/// theta ~ U(0,1) and tau ~ Dirichlet(1) from `rng.derive(s)`.
EmFit em_lcm(const MatrixXd& responses, int groups, const Rng& rng, const EmOptions& options = {});

/// P(Z = g | R_i) under fixed parameters (theta clamped away from 0 and 1).
MatrixXd posterior_memberships(const ItemParams& params, const MatrixXd& responses, double clamp = 1e-12);

/// MAP labels (1-based); ties go to the lowest class.
Labels hard_assign(const EmFit& fit);

/// (P, DP, X) with the posterior matrix in place of one-hot indicators.
DesignMatrix soft_design(const EmFit& fit, const VectorXd& treatment, const MatrixXd& confounders);

}  // namespace lsa
