// lsa: command-line front end for simulation, analysis and design checks.

#include "lsa/csv.hpp"
#include "lsa/harness.hpp"
#include "lsa/lcm.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

enum Exit { kOk = 0, kConfig = 2, kData = 3, kNumerical = 4 };

struct ScenarioArgs {
  std::string config_file;
  std::string preset_name;
  std::vector<std::string> settings;
  std::optional<int> replicates;
  std::optional<std::uint64_t> seed;
};

void add_scenario_options(CLI::App* cmd, ScenarioArgs& args) {
  auto* cfg = cmd->add_option("--config", args.config_file, "scenario file (key = value)")->check(CLI::ExistingFile);
  cmd->add_option("--preset", args.preset_name, "lowdim | highdim | noninform | toy-fig2")->excludes(cfg);
  cmd->add_option("--set", args.settings, "override one key, e.g. --set n=300 (repeatable)");
  cmd->add_option("--replicates", args.replicates, "number of replicates")->check(CLI::PositiveNumber);
  cmd->add_option("--seed", args.seed, "master seed");
}

lsa::ScenarioConfig resolve(const ScenarioArgs& args) {
  if (args.config_file.empty() && args.preset_name.empty()) throw lsa::ConfigError("give --config or --preset");
  lsa::ScenarioConfig config =
      args.config_file.empty() ? lsa::preset(args.preset_name) : lsa::load_config(args.config_file);
  for (const auto& s : args.settings) lsa::apply_setting(config, s);
  if (args.replicates) config.replicates = *args.replicates;
  if (args.seed) config.master_seed = *args.seed;
  config.validate();
  return config;
}

void print_design(const lsa::SeparabilityReport& sep, const lsa::DesignDiagnostics& diag) {
  std::cout << "delta = " << lsa::csv::format(sep.delta) << "\n";
  std::cout << "J_I = " << sep.j_informative << "\n";
  for (const auto& pair : sep.informative_items)
    std::cout << "pair " << pair.first << "-" << pair.second << ": " << pair.items.size() << " separated items\n";
  std::cout << "regime = " << lsa::to_string(diag.regime) << "\n";
  std::cout << "exp(J_I delta^2) = " << lsa::csv::format(diag.signal_exp) << "\n";
  for (const auto& c : diag.checks)
    std::cout << c.name << ": signal " << lsa::csv::format(c.signal) << " vs " << lsa::csv::format(c.threshold)
              << (c.pass ? "  pass" : "  FAIL") << "\n";
  std::cout << "n / G^2 = " << lsa::csv::format(diag.sample_ratio) << "\n";
  std::cout << "J_I delta^2 / G^2 = " << lsa::csv::format(diag.item_ratio) << "\n";
  if (diag.singular_ratio) std::cout << "theta condition = " << lsa::csv::format(*diag.singular_ratio) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage spectral latent subgroup analysis"};
  app.set_version_flag("--version", lsa::version_string());
  app.require_subcommand(1);

  ScenarioArgs sim_args;
  std::string sim_out;
  int workers = 1;
  std::optional<double> point;
  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo scenario (or sweep)");
  add_scenario_options(sim, sim_args);
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--workers", workers, "worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);
  sim->add_option("--point", point, "run only this value of the sweep axis");

  ScenarioArgs gen_args;
  std::string gen_out;
  long long gen_index = 0;
  auto* gen = app.add_subcommand("generate", "write one simulated dataset as CSV");
  add_scenario_options(gen, gen_args);
  gen->add_option("--replicate", gen_index, "replicate index")->check(CLI::NonNegativeNumber);
  gen->add_option("--out", gen_out, "output directory")->required();

  std::string responses, outcome, an_out, an_estimator;
  std::optional<int> an_groups;
  bool auto_g = false;
  lsa::AnalyzeOptions an_opts;
  auto* an = app.add_subcommand("analyze", "spectral two-stage analysis of a dataset");
  an->add_option("--responses", responses, "n x J binary response CSV")->required()->check(CLI::ExistingFile);
  an->add_option("--outcome", outcome, "CSV with columns Y, D, X_1..X_p")->required()->check(CLI::ExistingFile);
  auto* g_opt = an->add_option("--g", an_groups, "number of subgroups")->check(CLI::PositiveNumber);
  an->add_flag("--auto-g", auto_g, "choose G by parallel analysis (default)")->excludes(g_opt);
  an->add_option("--max-g", an_opts.max_groups, "largest G considered by parallel analysis");
  an->add_option("--estimator", an_estimator, "ols | lasso | dl (default: by regime)")
      ->check(CLI::IsMember({"ols", "lasso", "dl"}));
  an->add_option("--level", an_opts.level, "confidence level");
  an->add_option("--seed", an_opts.seed, "seed for clustering and cross-validation");
  an->add_option("--top-k", an_opts.top_items, "items in the heatmap table");
  an->add_option("--out", an_out, "output directory")->required();

  std::string theta_csv, tau_csv;
  double delta = 0.0;
  long long cd_n = 0, cd_p = 0;
  auto* cd = app.add_subcommand("check-design", "separability and design-condition diagnostics");
  cd->add_option("--theta", theta_csv, "J x G item-parameter CSV")->required()->check(CLI::ExistingFile);
  cd->add_option("--delta", delta, "separation threshold in (0,1)")->required();
  cd->add_option("--n", cd_n, "sample size")->required()->check(CLI::PositiveNumber);
  cd->add_option("--p", cd_p, "number of confounders")->required()->check(CLI::NonNegativeNumber);

  std::string plot_in, plot_out, plot_axis;
  auto* pd = app.add_subcommand("plot-data", "tidy CSV of summaries along one axis");
  pd->add_option("--in", plot_in, "simulate output directory")->required();
  pd->add_option("--axis", plot_axis, "J | J_noninf | n")->required();
  pd->add_option("--out", plot_out, "output CSV (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*sim) {
      lsa::ScenarioConfig config = resolve(sim_args);
      if (point) config = lsa::at_sweep_point(config, *point);
      lsa::simulate(config, sim_out, {workers});
      std::cout << "wrote " << sim_out << "\n";
    } else if (*gen) {
      lsa::ScenarioConfig config = resolve(gen_args);
      if (config.sweep_axis != lsa::SweepAxis::None) {
        config.sweep_axis = lsa::SweepAxis::None;
        config.sweep_values.clear();
      }
      lsa::write_dataset(lsa::generate_replicate(config, gen_index), gen_out);
      std::cout << "wrote " << gen_out << "\n";
    } else if (*an) {
      an_opts.groups = an_groups;
      if (!an_estimator.empty()) an_opts.estimator = lsa::parse_estimator(an_estimator);
      const auto report = lsa::analyze_dataset(responses, outcome, an_opts);
      lsa::write_analysis(report, an_out);
      for (int g = 0; g < report.groups; ++g) {
        std::cout << "mu_" << g + 1 << " = " << lsa::csv::format(report.effect.mu(g));
        if (!report.effect.intervals.empty())
          std::cout << "  [" << lsa::csv::format(report.effect.intervals[g].lower) << ", "
                    << lsa::csv::format(report.effect.intervals[g].upper) << "]";
        std::cout << "\n";
      }
      for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    } else if (*cd) {
      const lsa::MatrixXd theta = lsa::read_theta_csv(theta_csv);
      const auto sep = lsa::separability(theta, delta);
      print_design(sep, lsa::check_design_conditions(sep, cd_n, cd_p, theta.cols(), nullptr, &theta));
    } else if (*pd) {
      const std::string text = lsa::emit_plot_data(lsa::load_summaries(plot_in), lsa::parse_axis(plot_axis));
      if (plot_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(plot_out, std::ios::binary);
        if (!out) throw lsa::DataError("cannot write " + plot_out);
        out << text;
      }
    }
  } catch (const lsa::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kConfig;
  } catch (const lsa::DomainError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kConfig;
  } catch (const lsa::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const lsa::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  }
  return kOk;
}
