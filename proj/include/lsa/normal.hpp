#pragma once

namespace lsa {

/// Standard normal CDF.
double normal_cdf(double x);

/// Inverse standard normal CDF, |error| below 1e-9 on (0, 1).
/// Throws DomainError outside the open unit interval.
double normal_quantile(double p);

/// Two-sided critical value z_{1 - a/2} for confidence level `level` = 1 - a.
double two_sided_critical(double level);

}  // namespace lsa
