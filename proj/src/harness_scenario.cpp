#include "lsa/baselines.hpp"
#include "lsa/csv.hpp"
#include "lsa/harness.hpp"
#include "lsa/metrics.hpp"
#include "lsa/spectral.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <thread>
#include <tuple>

namespace lsa {

namespace {

bool wants(const ScenarioConfig& c, std::initializer_list<Estimator> any) {
  for (Estimator e : any)
    if (std::find(c.estimators.begin(), c.estimators.end(), e) != c.estimators.end()) return true;
  return false;
}

SimulatedData generate(const ScenarioConfig& c, const ItemParams& params, Index index) {
  const Rng base(c.master_seed, static_cast<std::uint64_t>(index));
  const Index n = c.n;
  const Index p = c.p;

  SimulatedData data;
  data.items = sample_lcm(params, n, base.derive(stream::kItems));
  const Labels& z = *data.items.labels;

  // X = N L' with L L' = Sigma, Sigma_jk = rho^|j-k|.
  data.confounders.resize(n, p);
  if (p > 0) {
    MatrixXd sigma(p, p);
    for (Index j = 0; j < p; ++j)
      for (Index k = 0; k < p; ++k) sigma(j, k) = std::pow(c.rho, static_cast<double>(std::abs(j - k)));
    const MatrixXd lower = sigma.llt().matrixL();
    MatrixXd normals(n, p);
    Rng rng = base.derive(stream::kConfounders);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < p; ++j) normals(i, j) = rng.normal();
    data.confounders.noalias() = normals * lower.transpose();
  }

  data.treatment.resize(n);
  {
    Rng rng = base.derive(stream::kTreatment);
    const VectorXd beta_l = c.padded_beta_l();
    for (Index i = 0; i < n; ++i) {
      double prob = 0.5;
      if (!c.random_treatment) {
        const double eta = c.treatment_intercept + (p > 0 ? data.confounders.row(i).dot(beta_l) : 0.0);
        prob = 1.0 / (1.0 + std::exp(-eta));
      }
      data.treatment(i) = rng.bernoulli(prob) ? 1.0 : 0.0;
    }
  }

  data.outcome.resize(n);
  {
    Rng rng = base.derive(stream::kNoise);
    const VectorXd beta = c.padded_beta();
    for (Index i = 0; i < n; ++i) {
      const int g = z(i) - 1;
      double y = c.alpha(g) + data.treatment(i) * c.mu(g) + rng.normal() * c.noise_sd;
      if (p > 0) y += data.confounders.row(i).dot(beta);
      data.outcome(i) = y;
    }
  }
  return data;
}

struct StageTwo {
  VectorXd mu;
  std::vector<Interval> intervals;
  std::optional<double> lambda;
};

StageTwo from_estimate(const EffectEstimate& est) { return {est.mu, est.intervals, est.lambda}; }

HighDimOptions high_dim_options(const ScenarioConfig& c, bool debias) {
  HighDimOptions o;
  o.folds = c.folds;
  o.grid_size = c.grid_size;
  o.level = c.level;
  o.debias = debias;
  return o;
}

// Posterior columns reordered so that column a holds the estimated class
// matched to true class a.
MatrixXd align_columns(const MatrixXd& posteriors, const AlignmentResult& alignment) {
  MatrixXd out(posteriors.rows(), posteriors.cols());
  for (Index a = 0; a < posteriors.cols(); ++a)
    out.col(a) = posteriors.col(alignment.permutation[static_cast<std::size_t>(a)] - 1);
  return out;
}

std::string sanitize(std::string message) {
  for (char& ch : message)
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  return message;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double standard_error(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

struct MetricRow {
  std::string metric;
  double value;
  double se;
};

std::vector<MetricRow> metric_rows(const MethodSummary& s) {
  std::vector<MetricRow> rows{{"replicates", static_cast<double>(s.replicates), 0.0},
                              {"failed", static_cast<double>(s.failed), 0.0}};
  if (s.replicates == s.failed) return rows;
  rows.push_back({"misclassification", s.misclassification, s.misclassification_se});
  rows.push_back({"rmse", s.rmse, s.rmse_se});
  for (Index g = 0; g < s.bias.size(); ++g) {
    const std::string k = "_mu" + std::to_string(g + 1);
    rows.push_back({"rmse" + k, s.rmse_per_group(g), 0.0});
    rows.push_back({"bias" + k, s.bias(g), 0.0});
    if (s.coverage.size()) {
      rows.push_back({"coverage" + k, s.coverage(g), s.coverage_se(g)});
      rows.push_back({"width" + k, s.mean_width(g), 0.0});
    }
  }
  return rows;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string hex(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex;
  out.width(16);
  out.fill('0');
  out << v;
  return out.str();
}

std::string manifest(const ScenarioConfig& config) {
  std::ostringstream out;
  out << "program = " << version_string() << "\n";
  out << "config_hash = " << hex(config_hash(config)) << "\n";
  out << "master_seed = " << config.master_seed << "\n";
  out << "replicates = " << config.replicates << "\n";
  out << "compiler = " << __VERSION__ << "\n";
  return out.str();
}

std::string point_dir_name(SweepAxis axis, double value) {
  return std::string(to_string(axis)) + "_" + csv::format(value);
}

}  // namespace

std::string version_string() {
  return std::string("lsa ") + LSA_VERSION + " (Eigen " + std::to_string(EIGEN_WORLD_VERSION) + "." +
         std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION) + ")";
}

SimulatedData generate_replicate(const ScenarioConfig& config, Index index) {
  config.validate();
  return generate(config, config.item_params(), index);
}

namespace {

std::vector<ReplicateResult> run_one(const ScenarioConfig& c, const ItemParams& params, Index index) {
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  const int groups = c.groups();
  const Rng base(c.master_seed, static_cast<std::uint64_t>(index));

  std::map<Estimator, ReplicateResult> done;
  auto record = [&](Estimator e, double misclass, const StageTwo& fit) {
    ReplicateResult r;
    r.index = index;
    r.estimator = e;
    r.ok = true;
    r.misclassification = misclass;
    r.mu_hat = fit.mu;
    r.intervals = fit.intervals;
    r.lambda = fit.lambda;
    done[e] = std::move(r);
  };
  auto fail = [&](std::initializer_list<Estimator> which, const std::string& message) {
    for (Estimator e : which) {
      if (!wants(c, {e}) || done.count(e)) continue;
      ReplicateResult r;
      r.index = index;
      r.estimator = e;
      r.error = sanitize(message);
      done[e] = std::move(r);
    }
  };
  // Runs `body`, marking `which` failed if it throws.
  auto attempt = [&](std::initializer_list<Estimator> which, const std::function<void()>& body) {
    if (!wants(c, which)) return;
    try {
      body();
    } catch (const std::exception& e) {
      fail(which, e.what());
    }
  };

  SimulatedData data;
  try {
    data = generate(c, params, index);
  } catch (const std::exception& e) {
    fail({Estimator::Ols, Estimator::Lasso, Estimator::Dl, Estimator::OracleOls, Estimator::OracleLasso,
          Estimator::OracleDl, Estimator::EmHard, Estimator::EmSoft},
         e.what());
  }
  const Labels truth = data.items.labels ? *data.items.labels : Labels();
  const Rng stage_two = base.derive(stream::kStageTwo);
  const bool low_dim = prefer_ols(c.n, groups, c.p);

  // Stage two on a hard labelling already expressed in true-label order.
  auto fit_hard = [&](const Labels& labels, double misclass, Estimator ols, Estimator lasso, Estimator dl) {
    const DesignMatrix design = build_design(labels, data.treatment, data.confounders, groups);
    if (wants(c, {ols})) {
      try {
        record(ols, misclass, from_estimate(ols_fit(data.outcome, design, c.level)));
      } catch (const std::exception& e) {
        fail({ols}, e.what());
      }
    }
    attempt({lasso, dl}, [&] {
      const HighDimFit fit = fit_high_dim(data.outcome, design, stage_two, high_dim_options(c, wants(c, {dl})));
      if (wants(c, {lasso})) record(lasso, misclass, {fit.lasso.mu, {}, fit.lasso.lambda});
      if (fit.debiased) record(dl, misclass, from_estimate(*fit.debiased));
    });
  };

  if (data.items.labels) {
    attempt({Estimator::Ols, Estimator::Lasso, Estimator::Dl}, [&] {
      KMeansOptions km;
      km.restarts = c.kmeans_restarts;
      const auto clusters = spectral_cluster(data.items.responses, groups, base.derive(stream::kKMeans), km);
      const auto alignment = misclassification_rate(truth, clusters.labels, groups);
      fit_hard(relabel_to_truth(clusters.labels, alignment), alignment.rate, Estimator::Ols, Estimator::Lasso,
               Estimator::Dl);
    });

    attempt({Estimator::OracleOls, Estimator::OracleLasso, Estimator::OracleDl},
            [&] { fit_hard(truth, 0.0, Estimator::OracleOls, Estimator::OracleLasso, Estimator::OracleDl); });

    attempt({Estimator::EmHard, Estimator::EmSoft}, [&] {
      EmOptions em;
      em.starts = c.em_starts;
      const EmFit fit = em_lcm(data.items.responses, groups, base.derive(stream::kEm), em);
      const auto alignment = misclassification_rate(truth, hard_assign(fit), groups);
      auto stage = [&](const DesignMatrix& design) -> StageTwo {
        if (low_dim) return from_estimate(ols_fit(data.outcome, design, c.level));
        return from_estimate(*fit_high_dim(data.outcome, design, stage_two, high_dim_options(c, true)).debiased);
      };
      attempt({Estimator::EmHard}, [&] {
        const Labels labels = relabel_to_truth(hard_assign(fit), alignment);
        record(Estimator::EmHard, alignment.rate,
               stage(build_design(labels, data.treatment, data.confounders, groups)));
      });
      attempt({Estimator::EmSoft}, [&] {
        record(Estimator::EmSoft, alignment.rate,
               stage(build_soft_design(align_columns(fit.posteriors, alignment), data.treatment, data.confounders)));
      });
    });
  }

  const double elapsed = std::chrono::duration<double>(Clock::now() - start).count();
  std::vector<ReplicateResult> out;
  for (Estimator e : c.estimators) {
    ReplicateResult r = done.count(e) ? done[e] : ReplicateResult{};
    r.index = index;
    r.estimator = e;
    if (!r.ok && r.error.empty()) r.error = "not run";
    r.wall_time = elapsed;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

std::vector<ReplicateResult> run_replicate(const ScenarioConfig& config, Index index) {
  config.validate();
  return run_one(config, config.item_params(), index);
}

std::vector<MethodSummary> summarize(const ScenarioConfig& config, const std::vector<ReplicateResult>& results) {
  std::vector<MethodSummary> out;
  for (Estimator e : config.estimators) {
    MethodSummary s;
    s.estimator = e;
    std::vector<double> misclass, sq_err;
    std::vector<VectorXd> estimates;
    std::vector<std::vector<Interval>> intervals;
    for (const auto& r : results) {
      if (r.estimator != e) continue;
      ++s.replicates;
      if (!r.ok) {
        ++s.failed;
        continue;
      }
      misclass.push_back(r.misclassification);
      estimates.push_back(r.mu_hat);
      sq_err.push_back((r.mu_hat - config.mu).squaredNorm() / static_cast<double>(config.mu.size()));
      if (!r.intervals.empty()) intervals.push_back(r.intervals);
    }
    if (!estimates.empty()) {
      s.misclassification = mean(misclass);
      s.misclassification_se = standard_error(misclass);
      const RmseResult err = rmse(estimates, config.mu);
      s.rmse = err.pooled;
      // Delta method on sqrt(mean squared error).
      s.rmse_se = s.rmse > 0.0 ? standard_error(sq_err) / (2.0 * s.rmse) : 0.0;
      s.rmse_per_group = err.per_coordinate;
      s.bias = VectorXd::Zero(config.mu.size());
      for (const auto& est : estimates) s.bias += est - config.mu;
      s.bias /= static_cast<double>(estimates.size());
      if (intervals.size() == estimates.size()) {
        const CoverageResult cov = coverage(intervals, config.mu);
        s.coverage = cov.coverage;
        s.coverage_se = cov.standard_error;
        s.mean_width = VectorXd::Zero(config.mu.size());
        for (const auto& rep : intervals)
          for (Index g = 0; g < config.mu.size(); ++g) s.mean_width(g) += rep[static_cast<std::size_t>(g)].width();
        s.mean_width /= static_cast<double>(intervals.size());
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

ScenarioRun run_scenario(const ScenarioConfig& config, const RunOptions& options) {
  config.validate();
  if (config.sweep_axis != SweepAxis::None)
    throw ConfigError("run_scenario runs one sweep point; use simulate() or at_sweep_point()");
  const ItemParams params = config.item_params();
  const auto reps = static_cast<std::size_t>(config.replicates);
  std::vector<std::vector<ReplicateResult>> slots(reps);

  int workers = options.workers > 0 ? options.workers : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, static_cast<int>(reps));
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < reps; i = next++) slots[i] = run_one(config, params, static_cast<Index>(i));
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  ScenarioRun run;
  run.config = config;
  for (auto& slot : slots)
    for (auto& r : slot) run.results.push_back(std::move(r));
  run.summaries = summarize(config, run.results);
  return run;
}

void write_scenario(const ScenarioRun& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const int groups = run.config.groups();
  {
    std::ofstream out(dir / "replicates.csv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "replicates.csv").string());
    std::vector<std::string> header{"replicate", "method", "status", "misclassification", "lambda"};
    for (int g = 1; g <= groups; ++g) header.push_back("mu_hat_" + std::to_string(g));
    for (int g = 1; g <= groups; ++g) header.push_back("lower_" + std::to_string(g));
    for (int g = 1; g <= groups; ++g) header.push_back("upper_" + std::to_string(g));
    header.push_back("error");
    csv::write_row(out, header);
    for (const auto& r : run.results) {
      std::vector<std::string> row{std::to_string(r.index), to_string(r.estimator), r.ok ? "ok" : "failed"};
      row.push_back(r.ok ? csv::format(r.misclassification) : "");
      row.push_back(r.lambda ? csv::format(*r.lambda) : "");
      for (int g = 0; g < groups; ++g) row.push_back(r.ok ? csv::format(r.mu_hat(g)) : "");
      for (int g = 0; g < groups; ++g)
        row.push_back(r.intervals.empty() ? "" : csv::format(r.intervals[static_cast<std::size_t>(g)].lower));
      for (int g = 0; g < groups; ++g)
        row.push_back(r.intervals.empty() ? "" : csv::format(r.intervals[static_cast<std::size_t>(g)].upper));
      row.push_back(r.error);
      csv::write_row(out, row);
    }
  }
  {
    std::ofstream out(dir / "summary.csv", std::ios::binary);
    if (!out) throw DataError("cannot write " + (dir / "summary.csv").string());
    csv::write_row(out, {"method", "metric", "value", "se"});
    for (const auto& s : run.summaries)
      for (const auto& m : metric_rows(s))
        csv::write_row(out, {to_string(s.estimator), m.metric, csv::format(m.value), csv::format(m.se)});
  }
  write_text(dir / "config.txt", to_text(run.config));
  write_text(dir / "manifest.txt", manifest(run.config));
}

void simulate(const ScenarioConfig& config, const std::filesystem::path& out_dir, const RunOptions& options) {
  config.validate();
  if (config.sweep_axis == SweepAxis::None) {
    write_scenario(run_scenario(config, options), out_dir);
    return;
  }
  std::filesystem::create_directories(out_dir);
  std::vector<PlotSource> sources;
  for (double value : config.sweep_values) {
    const ScenarioConfig point = at_sweep_point(config, value);
    const ScenarioRun run = run_scenario(point, options);
    write_scenario(run, out_dir / point_dir_name(config.sweep_axis, value));
    sources.push_back({point, run.summaries});
  }
  write_text(out_dir / "config.txt", to_text(config));
  write_text(out_dir / "manifest.txt", manifest(config));
  write_text(out_dir / "plot_data.csv", emit_plot_data(sources, config.sweep_axis));
}

void write_dataset(const SimulatedData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> items;
  for (Index j = 1; j <= data.items.responses.cols(); ++j) items.push_back("item_" + std::to_string(j));
  csv::write_matrix(dir / "responses.csv", items, data.items.responses);

  const Index p = data.confounders.cols();
  MatrixXd outcome(data.outcome.size(), 2 + p);
  outcome.col(0) = data.outcome;
  outcome.col(1) = data.treatment;
  outcome.rightCols(p) = data.confounders;
  std::vector<std::string> header{"Y", "D"};
  for (Index k = 1; k <= p; ++k) header.push_back("X_" + std::to_string(k));
  csv::write_matrix(dir / "outcome.csv", header, outcome);

  if (data.items.labels)
    csv::write_matrix(dir / "labels.csv", {"Z"}, data.items.labels->cast<double>());
}

std::vector<PlotSource> load_summaries(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(dir / "summary.csv")) {
    dirs.push_back(dir);
  } else {
    if (!std::filesystem::is_directory(dir)) throw DataError("no such directory: " + dir.string());
    for (const auto& entry : std::filesystem::directory_iterator(dir))
      if (entry.is_directory() && std::filesystem::exists(entry.path() / "summary.csv")) dirs.push_back(entry.path());
    std::sort(dirs.begin(), dirs.end());
  }
  if (dirs.empty()) throw DataError("no summary.csv under " + dir.string());

  std::vector<PlotSource> sources;
  for (const auto& d : dirs) {
    PlotSource source;
    source.config = load_config(d / "config.txt");
    std::ifstream in(d / "summary.csv");
    std::string line;
    std::getline(in, line);  // header
    std::map<std::string, std::map<std::string, std::pair<double, double>>> by_method;
    std::vector<std::string> order;
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
      if (f.size() != 4) throw DataError((d / "summary.csv").string() + ": malformed line '" + line + "'");
      if (!by_method.count(f[0])) order.push_back(f[0]);
      by_method[f[0]][f[1]] = {std::stod(f[2]), std::stod(f[3])};
    }
    const int groups = source.config.groups();
    for (const auto& method : order) {
      const auto& m = by_method[method];
      auto get = [&](const std::string& key, bool want_se = false) {
        const auto it = m.find(key);
        if (it == m.end()) return std::nan("");
        return want_se ? it->second.second : it->second.first;
      };
      MethodSummary s;
      s.estimator = parse_estimator(method);
      s.replicates = static_cast<int>(get("replicates"));
      s.failed = static_cast<int>(get("failed"));
      if (s.replicates != s.failed) {
        s.misclassification = get("misclassification");
        s.misclassification_se = get("misclassification", true);
        s.rmse = get("rmse");
        s.rmse_se = get("rmse", true);
        s.rmse_per_group.resize(groups);
        s.bias.resize(groups);
        const bool has_ci = m.count("coverage_mu1") > 0;
        if (has_ci) {
          s.coverage.resize(groups);
          s.coverage_se.resize(groups);
          s.mean_width.resize(groups);
        }
        for (int g = 0; g < groups; ++g) {
          const std::string k = "_mu" + std::to_string(g + 1);
          s.rmse_per_group(g) = get("rmse" + k);
          s.bias(g) = get("bias" + k);
          if (has_ci) {
            s.coverage(g) = get("coverage" + k);
            s.coverage_se(g) = get("coverage" + k, true);
            s.mean_width(g) = get("width" + k);
          }
        }
      }
      source.summaries.push_back(std::move(s));
    }
    sources.push_back(std::move(source));
  }
  return sources;
}

std::string emit_plot_data(const std::vector<PlotSource>& sources, SweepAxis axis) {
  if (axis == SweepAxis::None) throw ConfigError("plot data needs an axis (J, J_noninf or n)");
  if (sources.empty()) throw ConfigError("plot data needs at least one summary");

  // Members of one family agree on everything except the axis variable.
  auto family = [&](ScenarioConfig c) {
    c.sweep_axis = SweepAxis::None;
    c.sweep_values.clear();
    switch (axis) {
      case SweepAxis::J: c.informative_items = 0; break;
      case SweepAxis::JNoninf: c.noninformative = 0; break;
      case SweepAxis::N: c.n = 0; break;
      case SweepAxis::None: break;
    }
    return to_text(c);
  };
  const std::string reference = family(sources.front().config);
  std::vector<double> seen;
  using Row = std::tuple<std::string, std::string, double, double, double>;  // method, metric, axis, value, se
  std::vector<Row> rows;
  for (const auto& source : sources) {
    if (family(source.config) != reference)
      throw ConfigError("plot data: summaries come from different scenario families (" + source.config.name + " vs " +
                        sources.front().config.name + ")");
    const double x = axis_value(source.config, axis);
    if (std::find(seen.begin(), seen.end(), x) != seen.end())
      throw ConfigError("plot data: duplicate " + std::string(to_string(axis)) + " value " + csv::format(x));
    seen.push_back(x);
    for (const auto& s : source.summaries)
      for (const auto& m : metric_rows(s)) rows.emplace_back(to_string(s.estimator), m.metric, x, m.value, m.se);
  }
  std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(std::get<0>(a), std::get<1>(a), std::get<2>(a)) <
           std::tie(std::get<0>(b), std::get<1>(b), std::get<2>(b));
  });
  std::ostringstream out;
  csv::write_row(out, {to_string(axis), "method", "metric", "value", "se"});
  for (const auto& [method, metric, x, value, se] : rows)
    csv::write_row(out, {csv::format(x), method, metric, csv::format(value), csv::format(se)});
  return out.str();
}

}  // namespace lsa
