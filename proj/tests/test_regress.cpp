#include "lsa/regress.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>

using namespace lsa;

namespace {

struct Problem {
  DesignMatrix design;
  VectorXd y;
  VectorXd gamma;
};

Labels random_labels(Index n, int groups, Rng& rng) {
  Labels z(n);
  for (Index i = 0; i < n; ++i) z(i) = static_cast<int>(rng.below(static_cast<std::uint64_t>(groups))) + 1;
  return z;
}

VectorXd random_treatment(Index n, Rng& rng) {
  VectorXd d(n);
  for (Index i = 0; i < n; ++i) d(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
  return d;
}

// Subgroup model with G = 3, standard normal confounders and the first three
// betas nonzero.
Problem subgroup_problem(Index n, Index p, double noise, Rng& rng) {
  Problem out;
  const Labels z = random_labels(n, 3, rng);
  out.design = build_design(z, random_treatment(n, rng), oracle::random_normal(n, p, rng), 3);
  out.gamma = VectorXd::Zero(6 + p);
  out.gamma.head(6) << 0.0, -0.05, -0.2, -1.0, 0.0, 1.5;
  for (Index k = 0; k < std::min<Index>(3, p); ++k) out.gamma(6 + k) = k == 0 ? 1.0 : 1.5;
  out.y = out.design.values * out.gamma;
  for (Index i = 0; i < n; ++i) out.y(i) += noise * rng.normal();
  return out;
}

DesignMatrix raw_design(const MatrixXd& m, int groups) {
  DesignMatrix d;
  d.values = m;
  d.groups = groups;
  d.confounders = m.cols() - 2 * groups;
  for (int g = 1; g <= groups; ++g) d.roles.push_back({ColumnRole::Kind::Subgroup, g});
  for (int g = 1; g <= groups; ++g) d.roles.push_back({ColumnRole::Kind::TreatedSubgroup, g});
  for (Index k = 1; k <= d.confounders; ++k) d.roles.push_back({ColumnRole::Kind::Confounder, static_cast<int>(k)});
  return d;
}

VectorXd column_rms(const MatrixXd& m) {
  return (m.colwise().squaredNorm().transpose() / static_cast<double>(m.rows())).cwiseSqrt();
}

double soft_threshold(double x, double t) { return x > t ? x - t : x < -t ? x + t : 0.0; }

}  // namespace

TEST_SUITE("regress") {

TEST_CASE("design by hand") {
  Labels z(2);
  z << 1, 2;
  const VectorXd d = (VectorXd(2) << 1.0, 0.0).finished();
  const DesignMatrix m = build_design(z, d, MatrixXd(2, 0), 2);
  MatrixXd expected(2, 4);
  expected << 1, 0, 1, 0, 0, 1, 0, 0;
  CHECK(m.values == expected);
  CHECK(m.roles[2].name() == "treated_subgroup_1");
  CHECK_NOTHROW(m.validate(d));
}

TEST_CASE("design column invariants") {
  Rng rng(1);
  for (int rep = 0; rep < 20; ++rep) {
    const Index n = 30;
    const Labels z = random_labels(n, 4, rng);
    const VectorXd d = random_treatment(n, rng);
    const DesignMatrix m = build_design(z, d, oracle::random_normal(n, 2, rng), 4);
    CHECK(m.values.leftCols(4).rowwise().sum().isOnes());
    for (int g = 1; g <= 4; ++g) {
      double treated = 0;
      for (Index i = 0; i < n; ++i) treated += (z(i) == g && d(i) == 1.0);
      CHECK(m.values.col(m.treated_column(g)).sum() == treated);
    }
  }
  Labels ones = Labels::Ones(5);
  const DesignMatrix all_one = build_design(ones, VectorXd::Ones(5), MatrixXd(5, 0), 3);
  CHECK(all_one.values.col(1).isZero());
  CHECK(all_one.values.col(2).isZero());
  Labels bad(2);
  bad << 1, 4;
  CHECK_THROWS_AS(build_design(bad, VectorXd::Ones(2), MatrixXd(2, 0), 3), DomainError);
  CHECK_THROWS_AS(build_design(ones, VectorXd::Constant(5, 0.5), MatrixXd(5, 0), 3), DomainError);
}

TEST_CASE("OLS recovers noiseless coefficients") {
  Rng rng(2);
  const Problem prob = subgroup_problem(80, 10, 0.0, rng);
  const EffectEstimate est = ols_fit(prob.y, prob.design);
  CHECK((est.gamma - prob.gamma).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(est.sigma2 <= 1e-16);
}

TEST_CASE("OLS normal equations, interval symmetry, covariance PSD") {
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const Problem prob = subgroup_problem(60 + rep, 8, 1.0, rng);
    const EffectEstimate est = ols_fit(prob.y, prob.design);
    const MatrixXd& m = prob.design.values;
    const double scale = (m.transpose() * prob.y).cwiseAbs().maxCoeff();
    CHECK((m.transpose() * (prob.y - m * est.gamma)).cwiseAbs().maxCoeff() <= 1e-8 * scale);
    for (int g = 0; g < 3; ++g)
      CHECK(std::abs((est.intervals[g].upper - est.mu(g)) - (est.mu(g) - est.intervals[g].lower)) < 1e-10);
    CHECK((est.covariance - est.covariance.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(est.covariance).eigenvalues().minCoeff() > -1e-8);
    // Covariance against the dense-inverse formula.
    const double n = static_cast<double>(m.rows());
    const MatrixXd full = est.sigma2 * n * (m.transpose() * m).inverse();
    CHECK((est.covariance - full.block(3, 3, 3, 3)).cwiseAbs().maxCoeff() < 1e-8 * full.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("OLS rank deficiency names the columns") {
  Rng rng(4);
  const Index n = 40;
  const DesignMatrix m = build_design(Labels::Ones(n), random_treatment(n, rng), oracle::random_normal(n, 2, rng), 2);
  try {
    ols_fit(VectorXd::Ones(n), m);
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    const std::string what = e.what();
    CHECK(what.find("subgroup_2") != std::string::npos);
    CHECK(what.find("treated_subgroup_2") != std::string::npos);
  }
  CHECK_THROWS_AS(ols_fit(VectorXd::Ones(5), build_design(Labels::Ones(5), VectorXd::Ones(5), MatrixXd::Zero(5, 4), 1)),
                  DomainError);
}

TEST_CASE("Lasso at lambda = 0 matches OLS") {
  Rng rng(5);
  const Problem prob = subgroup_problem(100, 6, 1.0, rng);
  const VectorXd ols = ols_fit(prob.y, prob.design).gamma;
  const LassoFit fit = lasso_fit(prob.y, prob.design, 0.0);
  CHECK((fit.coef - ols).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("Lasso at and above lambda_max is all zero") {
  Rng rng(6);
  for (bool standardize : {true, false}) {
    LassoOptions opt;
    opt.standardize = standardize;
    const Problem prob = subgroup_problem(70, 30, 1.0, rng);
    const double top = lambda_max(prob.y, prob.design.values, {}, opt);
    // Closed form on the chosen scale.
    const VectorXd s = standardize ? column_rms(prob.design.values) : VectorXd::Ones(prob.design.cols());
    const VectorXd corr = (prob.design.values.transpose() * prob.y).cwiseAbs() * (2.0 / 70.0);
    CHECK(top == doctest::Approx(corr.cwiseQuotient(s).maxCoeff()).epsilon(1e-12));
    CHECK(lasso_fit(prob.y, prob.design.values, top * (1 + 1e-9), {}, opt).coef.isZero());
    CHECK_FALSE(lasso_fit(prob.y, prob.design.values, top * 0.99, {}, opt).coef.isZero());
  }
}

TEST_CASE("orthonormal design equals soft thresholding") {
  Rng rng(7);
  const Index n = 50, p = 8;
  Eigen::HouseholderQR<MatrixXd> qr(oracle::random_normal(n, p, rng));
  const MatrixXd m = MatrixXd(qr.householderQ()).leftCols(p) * std::sqrt(static_cast<double>(n));
  const VectorXd y = oracle::random_normal(n, 1, rng).col(0) * 2.0;
  for (double lambda : {0.05, 0.3, 1.0}) {
    const LassoFit fit = lasso_fit(y, m, lambda);
    const VectorXd z = m.transpose() * y / static_cast<double>(n);
    for (Index j = 0; j < p; ++j) CHECK(fit.coef(j) == doctest::Approx(soft_threshold(z(j), lambda / 2)).epsilon(1e-8));
  }
}

TEST_CASE("KKT conditions on 100 random instances") {
  Rng rng(8);
  double worst = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const Index n = 30 + static_cast<Index>(rng.below(60));
    const Index p = 5 + static_cast<Index>(rng.below(120));
    const MatrixXd m = oracle::random_normal(n, p, rng) * (0.5 + rng.uniform());
    VectorXd beta = VectorXd::Zero(p);
    for (Index k = 0; k < std::min<Index>(p, 5); ++k) beta(k) = 2 * rng.normal();
    const VectorXd y = m * beta + oracle::random_normal(n, 1, rng).col(0);
    const bool standardize = rep % 2 == 0;
    LassoOptions opt;
    opt.standardize = standardize;
    const double lambda = lambda_max(y, m, {}, opt) * (0.02 + 0.8 * rng.uniform());
    const LassoFit fit = lasso_fit(y, m, lambda, {}, opt);
    const VectorXd pen = standardize ? column_rms(m) : VectorXd::Ones(p);
    worst = std::max(worst, oracle::kkt_violation(y, m, fit.coef, lambda, pen));
  }
  CHECK(worst <= 1e-6);
}

TEST_CASE("objective is non-increasing across sweeps") {
  Rng rng(9);
  LassoOptions opt;
  opt.track_objective = true;
  for (int rep = 0; rep < 20; ++rep) {
    const Problem prob = subgroup_problem(60, 80, 1.0, rng);
    const double lambda = lambda_max(prob.y, prob.design.values) * 0.05;
    const LassoFit fit = lasso_fit(prob.y, prob.design, lambda, opt);
    REQUIRE(fit.objective_trace.size() >= 2);
    for (std::size_t t = 1; t < fit.objective_trace.size(); ++t)
      CHECK(fit.objective_trace[t] <= fit.objective_trace[t - 1] + 1e-12 * std::abs(fit.objective_trace[0]));
  }
}

TEST_CASE("penalty weights: infinite pins, protected subgroups are free") {
  Rng rng(10);
  const Problem prob = subgroup_problem(90, 40, 1.0, rng);
  VectorXd w = VectorXd::Ones(prob.design.cols());
  w(6) = std::numeric_limits<double>::infinity();
  const double lambda = 0.1;
  CHECK(lasso_fit(prob.y, prob.design.values, lambda, w).coef(6) == 0.0);

  LassoOptions opt;
  opt.protect_subgroups = true;
  const LassoFit fit = lasso_fit(prob.y, prob.design, lambda, opt);
  const VectorXd grad = prob.design.values.transpose() * (prob.y - prob.design.values * fit.coef) * (2.0 / 90);
  CHECK(grad.head(6).cwiseAbs().maxCoeff() < 1e-6);
  VectorXd pen = column_rms(prob.design.values);
  pen.head(6).setZero();
  CHECK(oracle::kkt_violation(prob.y, prob.design.values, fit.coef, lambda, pen) < 1e-6);
  CHECK_THROWS_AS(lasso_fit(prob.y, prob.design, -1.0), DomainError);
}

TEST_CASE("lambda grid") {
  const auto grid = lambda_grid(2.0, 100);
  CHECK(grid.size() == 100);
  CHECK(grid.front() == 2.0);
  CHECK(grid.back() == doctest::Approx(2e-4));
  CHECK(std::is_sorted(grid.rbegin(), grid.rend()));
}

TEST_CASE("cross-validation basics") {
  Rng rng(11);
  const Problem prob = subgroup_problem(60, 20, 1.0, rng);
  const double top = lambda_max(prob.y, prob.design.values);
  const CvResult single = cv_lambda(prob.y, prob.design, {top}, 5, Rng(1));
  CHECK(single.lambda == top);
  const CvResult a = cv_lambda(prob.y, prob.design, lambda_grid(top, 30), 10, Rng(2));
  const CvResult b = cv_lambda(prob.y, prob.design, lambda_grid(top, 30), 10, Rng(2));
  CHECK(a.lambda == b.lambda);
  CHECK(a.cv_error == b.cv_error);
  CHECK(a.cv_error[a.index] == *std::min_element(a.cv_error.begin(), a.cv_error.end()));
  CHECK_THROWS_AS(cv_lambda(prob.y, prob.design, lambda_grid(top, 10), 61, Rng(3)), ConfigError);
  CHECK_THROWS_AS(cv_lambda(prob.y, prob.design, {}, 5, Rng(3)), ConfigError);
}

TEST_CASE("pure noise selects a large penalty") {
  int top_quartile = 0;
  const int runs = 20;
  for (int run = 0; run < runs; ++run) {
    Rng rng(12, run);
    const Index n = 100;
    const DesignMatrix m =
        build_design(random_labels(n, 2, rng), random_treatment(n, rng), oracle::random_normal(n, 20, rng), 2);
    const VectorXd y = oracle::random_normal(n, 1, rng).col(0);
    const CvResult cv = cv_lambda(y, m, lambda_grid(lambda_max(y, m.values), 100), 10, rng.derive(1));
    top_quartile += cv.index < 25;
  }
  CHECK(top_quartile >= 16);
}

TEST_CASE("strong sparse signal: selected support covers the truth") {
  int covered = 0;
  const int runs = 20;
  for (int run = 0; run < runs; ++run) {
    Rng rng(13, run);
    const Index n = 150, p = 200;
    const DesignMatrix m = build_design(Labels::Ones(n), random_treatment(n, rng), oracle::random_normal(n, p, rng), 1);
    VectorXd gamma = VectorXd::Zero(m.cols());
    gamma.segment(2, 5).setConstant(2.0);
    const VectorXd y = m.values * gamma + oracle::random_normal(n, 1, rng).col(0);
    const CvResult cv = cv_lambda(y, m, lambda_grid(lambda_max(y, m.values), 100), 10, rng.derive(1));
    const VectorXd coef = lasso_fit(y, m, cv.lambda).coef;
    covered += (coef.segment(2, 5).array() != 0.0).all();
  }
  CHECK(covered >= 18);
}

TEST_CASE("nodewise: orthogonal columns give a diagonal inverse") {
  Rng rng(14);
  const Index n = 40;
  Eigen::HouseholderQR<MatrixXd> qr(oracle::random_normal(n, 6, rng));
  MatrixXd m = MatrixXd(qr.householderQ()).leftCols(6);
  for (Index j = 0; j < 6; ++j) m.col(j) *= 2.0 + j;
  NodewiseOptions opt;
  opt.rule = NodewiseOptions::Rule::Fixed;
  opt.fixed_lambda = 0.0;
  const NodewiseResult nw = nodewise_lasso(raw_design(m, 1), Rng(1), opt);
  for (Index j = 0; j < 6; ++j) {
    CHECK(nw.omega(j, j) == doctest::Approx(n / m.col(j).squaredNorm()).epsilon(1e-6));
    for (Index k = 0; k < 6; ++k)
      if (k != j) CHECK(std::abs(nw.omega(j, k)) < 1e-6 * nw.omega(j, j));
  }
}

TEST_CASE("nodewise: zero penalty reproduces n (M'M)^-1") {
  Rng rng(15);
  const Problem prob = subgroup_problem(120, 6, 1.0, rng);
  NodewiseOptions opt;
  opt.rule = NodewiseOptions::Rule::Fixed;
  opt.fixed_lambda = 0.0;
  const NodewiseResult nw = nodewise_lasso(prob.design, Rng(1), opt);
  const MatrixXd& m = prob.design.values;
  const MatrixXd exact = 120.0 * (m.transpose() * m).inverse();
  CHECK((nw.omega - exact).cwiseAbs().maxCoeff() < 1e-6 * exact.cwiseAbs().maxCoeff());
}

TEST_CASE("nodewise: duplicate columns are rejected") {
  Rng rng(16);
  MatrixXd m = oracle::random_normal(30, 5, rng);
  m.col(4) = m.col(3);
  NodewiseOptions opt;
  opt.rule = NodewiseOptions::Rule::Fixed;
  opt.fixed_lambda = 0.0;
  opt.rows = {3};
  CHECK_THROWS_AS(nodewise_lasso(raw_design(m, 1), Rng(1), opt), NumericalError);
}

TEST_CASE("nodewise: cross-validated rows approximately invert the Gram on a high-dimensional instance") {
  Rng rng(17);
  const Problem prob = subgroup_problem(150, 200, 1.0, rng);
  NodewiseOptions opt;
  opt.rows = {3, 4, 5};
  const NodewiseResult nw = nodewise_lasso(prob.design, Rng(2), opt);
  const MatrixXd& m = prob.design.values;
  const MatrixXd product = nw.omega.middleRows(3, 3) * (m.transpose() * m / 150.0);
  MatrixXd target = MatrixXd::Zero(3, m.cols());
  target.middleCols(3, 3).setIdentity();
  const double gap = (product - target).cwiseAbs().maxCoeff();
  MESSAGE("max |Omega Sigma - I| over the mu rows: " << gap);
  WARN(gap < 0.5);
  for (Index j : opt.rows) CHECK(nw.tau2(j) > 0);
}

TEST_CASE("debiasing with the exact inverse is OLS") {
  Rng rng(18);
  for (int rep = 0; rep < 10; ++rep) {
    const Problem prob = subgroup_problem(100, 10, 1.0, rng);
    const MatrixXd& m = prob.design.values;
    const MatrixXd omega = 100.0 * (m.transpose() * m).inverse();
    const EffectEstimate ols = ols_fit(prob.y, prob.design);
    const EffectEstimate from_zero = debiased_lasso(prob.y, prob.design, VectorXd::Zero(m.cols()), omega);
    CHECK((from_zero.gamma - ols.gamma).cwiseAbs().maxCoeff() < 1e-9);
    const EffectEstimate from_ols = debiased_lasso(prob.y, prob.design, ols.gamma, omega);
    CHECK((from_ols.gamma - ols.gamma).cwiseAbs().maxCoeff() < 1e-10);
    CHECK((from_ols.covariance - ols.covariance).cwiseAbs().maxCoeff() < 1e-8 * ols.covariance.cwiseAbs().maxCoeff());
    for (int g = 0; g < 3; ++g) {
      CHECK(from_ols.intervals[g].lower == doctest::Approx(ols.intervals[g].lower).epsilon(1e-8));
      CHECK(std::abs((from_ols.intervals[g].upper - from_ols.mu(g)) - (from_ols.mu(g) - from_ols.intervals[g].lower)) <
            1e-10);
    }
  }
}

TEST_CASE("debiasing an OLS fit changes nothing") {
  Rng rng(19);
  const Problem prob = subgroup_problem(100, 10, 1.0, rng);
  const EffectEstimate ols = ols_fit(prob.y, prob.design);
  NodewiseOptions opt;
  opt.folds = 5;
  const NodewiseResult nw = nodewise_lasso(prob.design, Rng(1), opt);
  const EffectEstimate dl = debiased_lasso(prob.y, prob.design, ols.gamma, nw.omega);
  CHECK((dl.gamma - ols.gamma).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(dl.covariance).eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("permuting subgroup labels permutes the estimates") {
  Rng rng(20);
  const Index n = 150, p = 30;
  const Labels z = random_labels(n, 3, rng);
  const VectorXd d = random_treatment(n, rng);
  const MatrixXd x = oracle::random_normal(n, p, rng);
  const VectorXd mu = (VectorXd(3) << -1.0, 0.0, 1.5).finished();
  VectorXd y = x.col(0) + oracle::random_normal(n, 1, rng).col(0);
  for (Index i = 0; i < n; ++i) y(i) += d(i) * mu(z(i) - 1);
  const int sigma[3] = {2, 3, 1};  // label g becomes sigma[g-1]
  Labels zp(n);
  for (Index i = 0; i < n; ++i) zp(i) = sigma[z(i) - 1];
  const DesignMatrix a = build_design(z, d, x, 3);
  const DesignMatrix b = build_design(zp, d, x, 3);

  auto check_permuted = [&](const VectorXd& ma, const VectorXd& mb, double tol) {
    for (int g = 0; g < 3; ++g) CHECK(std::abs(ma(g) - mb(sigma[g] - 1)) < tol);
  };
  check_permuted(ols_fit(y, a).mu, ols_fit(y, b).mu, 1e-10);
  const HighDimFit fa = fit_high_dim(y, a, Rng(4));
  const HighDimFit fb = fit_high_dim(y, b, Rng(4));
  CHECK(fa.cv.lambda == fb.cv.lambda);
  check_permuted(fa.lasso.mu, fb.lasso.mu, 1e-6);
  check_permuted(fa.debiased->mu, fb.debiased->mu, 1e-6);
}

TEST_CASE("interval width shrinks like 1/sqrt(n)") {
  auto median_width = [](Index n, std::uint64_t seed) {
    std::vector<double> widths;
    for (int rep = 0; rep < 200; ++rep) {
      Rng rng(seed, rep);
      const Problem prob = subgroup_problem(n, 10, 1.0, rng);
      widths.push_back(ols_fit(prob.y, prob.design).intervals[0].width());
    }
    std::nth_element(widths.begin(), widths.begin() + 100, widths.end());
    return widths[100];
  };
  const double ratio = median_width(300, 21) / median_width(150, 22);
  CHECK(ratio >= 0.65);
  CHECK(ratio <= 0.76);
}

TEST_CASE("regime rule never picks OLS without spare degrees of freedom") {
  for (Index n = 1; n < 400; n += 7)
    for (int g = 1; g <= 6; ++g)
      for (Index p = 0; p < 300; p += 11)
        if (2 * g + p >= n) CHECK_FALSE(prefer_ols(n, g, p));
  CHECK(prefer_ols(150, 3, 10));
  CHECK_FALSE(prefer_ols(150, 3, 200));
}

}
