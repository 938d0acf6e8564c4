#include "lsa/csv.hpp"
#include "lsa/harness.hpp"
#include "lsa/metrics.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

using namespace lsa;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("lsa_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir))
    if (entry.is_regular_file()) out[fs::relative(entry.path(), dir).string()] = slurp(entry.path());
  return out;
}

ScenarioConfig small_lowdim() {
  ScenarioConfig c = preset("lowdim");
  c.sweep_axis = SweepAxis::None;
  c.sweep_values.clear();
  c.informative_items = 150;
  return c;
}

MatrixXd outcome_matrix(const SimulatedData& data) {
  MatrixXd out(data.outcome.size(), 2 + data.confounders.cols());
  out << data.outcome, data.treatment, data.confounders;
  return out;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("presets survive a text round trip") {
  const auto names = preset_names();
  CHECK(names.size() == 4);
  for (const auto& name : names) {
    const ScenarioConfig c = preset(name);
    CHECK_NOTHROW(c.validate());
    const std::string text = to_text(c);
    const ScenarioConfig back = parse_config(text);
    CHECK(to_text(back) == text);
    CHECK(config_hash(back) == config_hash(c));
  }
  CHECK_THROWS_AS(preset("nope"), ConfigError);
}

TEST_CASE("preset contents") {
  const ScenarioConfig low = preset("lowdim");
  CHECK(low.sweep_values.size() == 16);
  CHECK(low.sweep_values.front() == 5);
  CHECK(low.sweep_values.back() == 150);
  CHECK(low.padded_beta() == (VectorXd(10) << 1, 1.5, 1.5, 0, 0, 0, 0, 0, 0, 0).finished());
  CHECK(low.padded_beta_l().head(6).isOnes());
  CHECK(low.padded_beta_l().tail(4).isZero());
  CHECK(low.replicates == 200);
  CHECK(preset("highdim").p == 200);
  const ScenarioConfig toy = preset("toy-fig2");
  CHECK(toy.item_params().theta == (MatrixXd(2, 2) << 0.7, 0.3, 0.8, 0.2).finished());
  CHECK(oracle::bayes_error(toy.item_params().theta, toy.item_params().tau) == doctest::Approx(0.20));
  const ScenarioConfig noise = at_sweep_point(preset("noninform"), 100);
  CHECK(noise.item_params().theta.rows() == 150);
}

TEST_CASE("config parsing: comments, multi-line values, errors") {
  const ScenarioConfig c = parse_config(
      "preset = lowdim  # start from the low-dimensional scenario\n"
      "\n"
      "n = 300\n"
      "theta_base = [[0.9, 0.1],\n"
      "              [0.2, 0.8],]\n"
      "mu = [1, 2]\n"
      "alpha = [0, 0]\n"
      "estimators = [ols, oracle-dl]\n");
  CHECK(c.n == 300);
  CHECK(c.theta_base.rows() == 2);
  CHECK(c.estimators == std::vector<Estimator>{Estimator::Ols, Estimator::OracleDl});
  CHECK_NOTHROW(c.validate());

  CHECK_THROWS_AS(parse_config("colour = blue\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("n = 10\npreset = lowdim\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("n = many\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("estimators = [ols, magic]\n"), ConfigError);
  ScenarioConfig mismatch = preset("lowdim");
  mismatch.mu = VectorXd::Zero(2);
  CHECK_THROWS_AS(mismatch.validate(), ConfigError);
  ScenarioConfig long_beta = preset("lowdim");
  long_beta.beta = VectorXd::Ones(11);
  CHECK_THROWS_AS(long_beta.validate(), ConfigError);
  ScenarioConfig unsorted = preset("lowdim");
  unsorted.sweep_values = {10, 5};
  CHECK_THROWS_AS(unsorted.validate(), ConfigError);
}

TEST_CASE("command-line overrides") {
  ScenarioConfig c = preset("highdim");
  apply_setting(c, "replicates=7");
  apply_setting(c, "mu=[0.5, 0.5, 0.5]");
  CHECK(c.replicates == 7);
  CHECK(c.mu.isConstant(0.5));
  CHECK_THROWS_AS(apply_setting(c, "replicates"), ConfigError);
  CHECK_THROWS_AS(apply_setting(c, "preset=lowdim"), ConfigError);
}

TEST_CASE("logistic treatment with zero slopes has the intercept-only rate") {
  ScenarioConfig c = small_lowdim();
  c.informative_items = 5;
  c.n = 100000;
  c.beta_l = VectorXd::Zero(c.p);
  const SimulatedData data = generate_replicate(c, 0);
  CHECK(std::abs(data.treatment.mean() - oracle::logistic(1.0)) < 0.01);
}

TEST_CASE("confounders follow the AR(1) covariance") {
  ScenarioConfig c = small_lowdim();
  c.informative_items = 5;
  c.n = 50000;
  c.rho = 0.5;
  const SimulatedData data = generate_replicate(c, 1);
  const MatrixXd cov = data.confounders.transpose() * data.confounders / static_cast<double>(c.n);
  for (Index j = 0; j < 3; ++j)
    for (Index k = 0; k < 3; ++k) CHECK(std::abs(cov(j, k) - std::pow(0.5, std::abs(j - k))) < 0.03);
}

TEST_CASE("noiseless outcome: oracle OLS recovers the coefficients") {
  ScenarioConfig c = small_lowdim();
  c.noise_sd = 0.0;
  c.estimators = {Estimator::OracleOls};
  const auto results = run_replicate(c, 0);
  REQUIRE(results.size() == 1);
  REQUIRE(results[0].ok);
  CHECK((results[0].mu_hat - c.mu).cwiseAbs().maxCoeff() < 1e-8);
  const SimulatedData data = generate_replicate(c, 0);
  const EffectEstimate full = ols_fit(data.outcome, build_design(*data.items.labels, data.treatment, data.confounders, 3));
  CHECK((full.gamma - c.gamma()).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("oracle equivalence when clustering is perfect") {
  ScenarioConfig c = small_lowdim();
  c.estimators = {Estimator::Ols, Estimator::OracleOls, Estimator::Lasso, Estimator::OracleLasso,
                  Estimator::Dl, Estimator::OracleDl};
  int perfect = 0;
  for (Index index = 0; index < 10; ++index) {
    const auto r = run_replicate(c, index);
    REQUIRE(r.size() == 6);
    if (r[0].misclassification != 0.0) continue;
    ++perfect;
    CHECK(r[0].mu_hat == r[1].mu_hat);
    CHECK(r[2].lambda == r[3].lambda);
    CHECK((r[2].mu_hat - r[3].mu_hat).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK((r[4].mu_hat - r[5].mu_hat).cwiseAbs().maxCoeff() <= 1e-8);
  }
  CHECK(perfect >= 5);
}

TEST_CASE("one replicate: the summary is that replicate") {
  ScenarioConfig c = small_lowdim();
  c.replicates = 1;
  c.estimators = {Estimator::Ols};
  const ScenarioRun run = run_scenario(c);
  REQUIRE(run.results.size() == 1);
  REQUIRE(run.summaries.size() == 1);
  const MethodSummary& s = run.summaries[0];
  const ReplicateResult& r = run.results[0];
  CHECK(s.replicates == 1);
  CHECK(s.failed == 0);
  CHECK(s.misclassification == r.misclassification);
  CHECK(s.bias == r.mu_hat - c.mu);
  CHECK(s.rmse == doctest::Approx(std::sqrt((r.mu_hat - c.mu).squaredNorm() / 3)));
  for (Index g = 0; g < 3; ++g) {
    CHECK(s.coverage(g) == (r.intervals[static_cast<std::size_t>(g)].contains(c.mu(g)) ? 1.0 : 0.0));
    CHECK(s.mean_width(g) == doctest::Approx(r.intervals[static_cast<std::size_t>(g)].width()));
  }
}

TEST_CASE("failures are recorded per replicate") {
  ScenarioConfig c = small_lowdim();
  c.replicates = 2;
  c.n = 16;  // fewer rows than the 2G + p = 18 columns: OLS cannot run
  c.p = 12;
  c.beta = VectorXd::Ones(3);
  c.beta_l = VectorXd::Ones(3);
  c.estimators = {Estimator::OracleOls};
  ScenarioRun run;
  CHECK_NOTHROW(run = run_scenario(c));
  CHECK(run.summaries[0].replicates == 2);
  CHECK(run.summaries[0].failed == 2);
  REQUIRE(run.results.size() == 2);
  CHECK_FALSE(run.results[0].ok);
  CHECK_FALSE(run.results[0].error.empty());
}

TEST_CASE("identical output for repeated runs and any worker count") {
  ScenarioConfig c = preset("lowdim");
  c.replicates = 6;
  c.sweep_values = {5, 50};
  const fs::path a = scratch("det_a"), b = scratch("det_b"), w = scratch("det_w");
  simulate(c, a, {1});
  simulate(c, b, {1});
  simulate(c, w, {3});
  const auto ta = tree(a);
  CHECK(ta.size() == 3 + 2 * 4);
  CHECK(ta == tree(b));
  CHECK(ta == tree(w));
  for (const auto& [name, content] : ta)
    if (name.find("manifest") != std::string::npos) CHECK(content.find("config_hash") != std::string::npos);
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(w);
}

TEST_CASE("spectral OLS is close to the oracle at J = 150") {
  ScenarioConfig c = small_lowdim();
  const ScenarioRun run = run_scenario(c);
  REQUIRE(run.summaries.size() == 2);
  CHECK(run.summaries[0].estimator == Estimator::Ols);
  CHECK(run.summaries[0].rmse <= 1.1 * run.summaries[1].rmse);
}

TEST_CASE("dataset round trip reproduces the in-memory analysis") {
  const ScenarioConfig c = small_lowdim();
  const SimulatedData data = generate_replicate(c, 3);
  const fs::path dir = scratch("roundtrip");
  write_dataset(data, dir);
  AnalyzeOptions opt;
  opt.groups = 3;
  const AnalysisReport disk = analyze_dataset(dir / "responses.csv", dir / "outcome.csv", opt);
  const AnalysisReport memory = analyze(data.items.responses, outcome_matrix(data), opt);
  CHECK(disk.effect.mu == memory.effect.mu);
  CHECK(disk.labels == memory.labels);
  CHECK(disk.estimator == Estimator::Ols);

  // Within-cluster column means, exactly.
  for (int g = 1; g <= 3; ++g) {
    VectorXd sum = VectorXd::Zero(data.items.responses.cols());
    double count = 0;
    for (Index i = 0; i < disk.labels.size(); ++i)
      if (disk.labels(i) == g) {
        sum += data.items.responses.row(i).transpose();
        count += 1;
      }
    CHECK(disk.theta_hat.col(g - 1) == sum / count);
    CHECK(disk.tau_hat(g - 1) == count / static_cast<double>(c.n));
  }
  REQUIRE(disk.top_items.size() == 20);

  const fs::path report = dir / "report";
  write_analysis(disk, report);
  for (const char* name : {"effects.csv", "tau.csv", "theta.csv", "labels.csv", "heatmap.csv", "manifest.txt"})
    CHECK(fs::exists(report / name));
  CHECK(csv::read(report / "heatmap.csv").values.rows() == 20);
  fs::remove_all(dir);
}

TEST_CASE("ingestion errors") {
  const fs::path dir = scratch("ingest");
  {
    std::ofstream(dir / "r.csv") << "item_1,item_2\n1,0\n0,2\n";
    std::ofstream(dir / "o.csv") << "Y,D\n1.0,1\n0.5,0\n";
  }
  try {
    analyze_dataset(dir / "r.csv", dir / "o.csv");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    const std::string what = e.what();
    CHECK(what.find("row 2") != std::string::npos);
    CHECK(what.find("column 2") != std::string::npos);
  }
  {
    std::ofstream(dir / "r.csv") << "item_1,item_2\n1,0\n0,NA\n";
  }
  CHECK_THROWS_AS(analyze_dataset(dir / "r.csv", dir / "o.csv"), DataError);
  {
    std::ofstream(dir / "r.csv") << "item_1,item_2\n1,0\n0,1\n1,1\n";
  }
  CHECK_THROWS_AS(analyze_dataset(dir / "r.csv", dir / "o.csv"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("regime rule in the analysis pipeline") {
  ScenarioConfig c = small_lowdim();
  AnalyzeOptions opt;
  opt.groups = 3;
  const SimulatedData low = generate_replicate(c, 0);
  CHECK(analyze(low.items.responses, outcome_matrix(low), opt).estimator == Estimator::Ols);
  c.p = 200;
  opt.folds = 5;
  opt.grid_size = 20;
  const SimulatedData high = generate_replicate(c, 0);
  const AnalysisReport report = analyze(high.items.responses, outcome_matrix(high), opt);
  CHECK(report.estimator == Estimator::Dl);
  CHECK(report.effect.intervals.size() == 3);
}

TEST_CASE("parallel analysis picks the number of groups") {
  const SimulatedData data = generate_replicate(small_lowdim(), 2);
  const AnalysisReport report = analyze(data.items.responses, outcome_matrix(data));
  CHECK(report.groups_selected);
  CHECK(report.groups == 3);
}

TEST_CASE("high-dimensional analysis covers the true effects") {
  const ScenarioConfig c = preset("highdim");
  int covered = 0, total = 0;
  for (Index run = 0; run < 30; ++run) {
    const SimulatedData data = generate_replicate(c, run);
    AnalyzeOptions opt;
    opt.groups = 3;
    opt.seed = static_cast<std::uint64_t>(run) + 1;
    const AnalysisReport report = analyze(data.items.responses, outcome_matrix(data), opt);
    const auto align = misclassification_rate(*data.items.labels, report.labels, 3);
    for (int g = 0; g < 3; ++g) {
      const Interval& ci = report.effect.intervals[static_cast<std::size_t>(align.permutation[static_cast<std::size_t>(g)] - 1)];
      covered += ci.contains(c.mu(g));
      ++total;
    }
  }
  const double rate = static_cast<double>(covered) / total;
  MESSAGE("high-dimensional interval coverage: " << rate);
  CHECK(rate >= 0.90);
}

TEST_CASE("plot data") {
  ScenarioConfig c = preset("lowdim");
  c.replicates = 2;
  c.sweep_values = {5, 10, 20};
  const fs::path dir = scratch("plot");
  simulate(c, dir);
  const auto sources = load_summaries(dir);
  REQUIRE(sources.size() == 3);
  const std::string text = emit_plot_data(sources, SweepAxis::J);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  CHECK(line == "J,method,metric,value,se");
  std::vector<std::tuple<std::string, std::string, double>> keys;
  std::set<double> axis_values;
  while (std::getline(in, line)) {
    std::istringstream row(line);
    std::string axis, method, metric;
    std::getline(row, axis, ',');
    std::getline(row, method, ',');
    std::getline(row, metric, ',');
    keys.emplace_back(method, metric, std::stod(axis));
    axis_values.insert(std::stod(axis));
  }
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(axis_values == std::set<double>{5, 10, 20});
  CHECK(keys.size() % 3 == 0);

  // One summary: one row per metric.
  const std::string single = emit_plot_data({sources[0]}, SweepAxis::J);
  std::set<std::pair<std::string, std::string>> metrics;
  int rows = 0;
  std::istringstream one(single);
  std::getline(one, line);
  while (std::getline(one, line)) {
    std::istringstream row(line);
    std::string axis, method, metric;
    std::getline(row, axis, ',');
    std::getline(row, method, ',');
    std::getline(row, metric, ',');
    metrics.insert({method, metric});
    ++rows;
  }
  CHECK(rows == static_cast<int>(metrics.size()));

  PlotSource other = sources[1];
  other.config.n = 999;
  CHECK_THROWS_AS(emit_plot_data({sources[0], other}, SweepAxis::J), ConfigError);
  CHECK_THROWS_AS(emit_plot_data({sources[0], sources[0]}, SweepAxis::J), ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("full J sweep yields 16 axis values") {
  const ScenarioConfig c = preset("lowdim");
  std::vector<PlotSource> sources;
  for (double j : c.sweep_values) {
    PlotSource s;
    s.config = at_sweep_point(c, j);
    MethodSummary m;
    m.estimator = Estimator::Ols;
    m.replicates = 1;
    m.rmse_per_group = m.bias = m.coverage = m.coverage_se = m.mean_width = VectorXd::Zero(3);
    s.summaries = {m};
    sources.push_back(s);
  }
  const std::string text = emit_plot_data(sources, SweepAxis::J);
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  std::map<std::string, std::set<std::string>> per_metric;
  while (std::getline(in, line)) {
    const auto first = line.find(',');
    per_metric[line.substr(first + 1, line.find(',', line.find(',', first + 1) + 1) - first - 1)].insert(
        line.substr(0, first));
  }
  REQUIRE_FALSE(per_metric.empty());
  for (const auto& [key, values] : per_metric) CHECK(values.size() == 16);
}

TEST_CASE("regime rule never picks OLS without spare degrees of freedom") {
  Rng rng(3);
  for (int rep = 0; rep < 200; ++rep) {
    const Index n = 5 + static_cast<Index>(rng.below(300));
    const int g = 1 + static_cast<int>(rng.below(8));
    const Index p = static_cast<Index>(rng.below(400));
    if (prefer_ols(n, g, p)) CHECK(2 * g + p < n);
  }
}

}
