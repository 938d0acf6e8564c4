#include "lsa/csv.hpp"
#include "lsa/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lsa {

namespace {

struct EstimatorName {
  Estimator estimator;
  const char* name;
};

constexpr EstimatorName kEstimatorNames[] = {
    {Estimator::Ols, "ols"},
    {Estimator::Lasso, "lasso"},
    {Estimator::Dl, "dl"},
    {Estimator::OracleOls, "oracle-ols"},
    {Estimator::OracleLasso, "oracle-lasso"},
    {Estimator::OracleDl, "oracle-dl"},
    {Estimator::EmHard, "em-hard"},
    {Estimator::EmSoft, "em-soft"},
};

// A parsed right-hand side: a bare or quoted atom, or a bracketed list.
struct Value {
  std::string atom;
  bool quoted = false;
  bool is_list = false;
  std::vector<Value> items;
};

class ValueParser {
 public:
  ValueParser(std::string_view text, std::string_view key) : text_(text), key_(key) {}

  Value parse() {
    Value v = value();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing text");
    return v;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError("config key '" + std::string(key_) + "': " + what);
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  Value value() {
    skip_space();
    if (pos_ >= text_.size()) fail("missing value");
    Value v;
    if (text_[pos_] == '[') {
      ++pos_;
      v.is_list = true;
      skip_space();
      if (pos_ < text_.size() && text_[pos_] == ']') {
        ++pos_;
        return v;
      }
      for (;;) {
        v.items.push_back(value());
        skip_space();
        if (pos_ >= text_.size()) fail("unterminated '['");
        if (text_[pos_] == ',') {
          ++pos_;
          skip_space();
          if (pos_ < text_.size() && text_[pos_] == ']') {  // trailing comma
            ++pos_;
            return v;
          }
          continue;
        }
        if (text_[pos_] == ']') {
          ++pos_;
          return v;
        }
        fail("expected ',' or ']'");
      }
    }
    if (text_[pos_] == '"') {
      const auto close = text_.find('"', pos_ + 1);
      if (close == std::string_view::npos) fail("unterminated string");
      v.atom = std::string(text_.substr(pos_ + 1, close - pos_ - 1));
      v.quoted = true;
      pos_ = close + 1;
      return v;
    }
    const auto start = pos_;
    while (pos_ < text_.size() && text_[pos_] != ',' && text_[pos_] != ']' && text_[pos_] != '[') ++pos_;
    std::string_view atom = text_.substr(start, pos_ - start);
    while (!atom.empty() && std::isspace(static_cast<unsigned char>(atom.back()))) atom.remove_suffix(1);
    if (atom.empty()) fail("empty value");
    v.atom = std::string(atom);
    return v;
  }

  std::string_view text_;
  std::string_view key_;
  std::size_t pos_ = 0;
};

double to_double(const Value& v, std::string_view key) {
  if (v.is_list) throw ConfigError("config key '" + std::string(key) + "': expected a number, found a list");
  double out = 0.0;
  const char* begin = v.atom.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, v.atom.data() + v.atom.size(), out);
  if (ec != std::errc() || ptr != v.atom.data() + v.atom.size() || !std::isfinite(out))
    throw ConfigError("config key '" + std::string(key) + "': '" + v.atom + "' is not a number");
  return out;
}

std::int64_t to_integer(const Value& v, std::string_view key) {
  const double d = to_double(v, key);
  if (d != std::floor(d) || std::abs(d) > 9.0e15)
    throw ConfigError("config key '" + std::string(key) + "': '" + v.atom + "' is not an integer");
  return static_cast<std::int64_t>(d);
}

std::uint64_t to_seed(const Value& v, std::string_view key) {
  if (v.is_list) throw ConfigError("config key '" + std::string(key) + "': expected an integer");
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.atom.data(), v.atom.data() + v.atom.size(), out);
  if (ec != std::errc() || ptr != v.atom.data() + v.atom.size())
    throw ConfigError("config key '" + std::string(key) + "': '" + v.atom + "' is not an unsigned integer");
  return out;
}

const std::vector<Value>& to_list(const Value& v, std::string_view key) {
  if (!v.is_list) throw ConfigError("config key '" + std::string(key) + "': expected a [list]");
  return v.items;
}

VectorXd to_vector(const Value& v, std::string_view key) {
  const auto& items = to_list(v, key);
  VectorXd out(static_cast<Index>(items.size()));
  for (std::size_t i = 0; i < items.size(); ++i) out(static_cast<Index>(i)) = to_double(items[i], key);
  return out;
}

MatrixXd to_matrix(const Value& v, std::string_view key) {
  const auto& rows = to_list(v, key);
  if (rows.empty()) return {};
  const auto width = to_list(rows[0], key).size();
  MatrixXd out(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const VectorXd row = to_vector(rows[r], key);
    if (static_cast<std::size_t>(row.size()) != width)
      throw ConfigError("config key '" + std::string(key) + "': ragged matrix at row " + std::to_string(r + 1));
    out.row(static_cast<Index>(r)) = row.transpose();
  }
  return out;
}

std::string to_name(const Value& v, std::string_view key) {
  if (v.is_list) throw ConfigError("config key '" + std::string(key) + "': expected a string");
  return v.atom;
}

void assign(ScenarioConfig& c, const std::string& key, const Value& v) {
  if (key == "name") {
    c.name = to_name(v, key);
  } else if (key == "theta_base") {
    if (!v.is_list && v.atom == "base") {
      c.theta_base = base_theta_block();
    } else {
      c.theta_base = to_matrix(v, key);
    }
  } else if (key == "J") {
    c.informative_items = to_integer(v, key);
  } else if (key == "theta_file") {
    c.theta_file = to_name(v, key);
  } else if (key == "noninformative") {
    c.noninformative = to_integer(v, key);
  } else if (key == "noninformative_value") {
    c.noninformative_value = to_double(v, key);
  } else if (key == "tau") {
    c.tau = to_vector(v, key);
  } else if (key == "n") {
    c.n = to_integer(v, key);
  } else if (key == "p") {
    c.p = to_integer(v, key);
  } else if (key == "rho") {
    c.rho = to_double(v, key);
  } else if (key == "beta") {
    c.beta = to_vector(v, key);
  } else if (key == "beta_l") {
    c.beta_l = to_vector(v, key);
  } else if (key == "treatment_intercept") {
    c.treatment_intercept = to_double(v, key);
  } else if (key == "treatment") {
    const auto t = to_name(v, key);
    if (t == "logistic") {
      c.random_treatment = false;
    } else if (t == "random") {
      c.random_treatment = true;
    } else {
      throw ConfigError("config key 'treatment': expected logistic or random, found '" + t + "'");
    }
  } else if (key == "alpha") {
    c.alpha = to_vector(v, key);
  } else if (key == "mu") {
    c.mu = to_vector(v, key);
  } else if (key == "noise_sd") {
    c.noise_sd = to_double(v, key);
  } else if (key == "estimators" || key == "estimator") {
    c.estimators.clear();
    if (v.is_list) {
      for (const auto& item : v.items) c.estimators.push_back(parse_estimator(to_name(item, key)));
    } else {
      c.estimators.push_back(parse_estimator(v.atom));
    }
  } else if (key == "replicates") {
    c.replicates = static_cast<int>(to_integer(v, key));
  } else if (key == "master_seed") {
    c.master_seed = to_seed(v, key);
  } else if (key == "level") {
    c.level = to_double(v, key);
  } else if (key == "folds") {
    c.folds = static_cast<int>(to_integer(v, key));
  } else if (key == "grid_size") {
    c.grid_size = static_cast<int>(to_integer(v, key));
  } else if (key == "kmeans_restarts") {
    c.kmeans_restarts = static_cast<int>(to_integer(v, key));
  } else if (key == "em_starts") {
    c.em_starts = static_cast<int>(to_integer(v, key));
  } else if (key == "sweep_axis") {
    c.sweep_axis = parse_axis(to_name(v, key));
  } else if (key == "sweep_values") {
    const VectorXd values = to_vector(v, key);
    c.sweep_values.assign(values.data(), values.data() + values.size());
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

int bracket_balance(const std::string& s) {
  int depth = 0;
  for (char ch : s) depth += ch == '[' ? 1 : ch == ']' ? -1 : 0;
  return depth;
}

std::string fmt(const VectorXd& v) {
  std::string s = "[";
  for (Index i = 0; i < v.size(); ++i) s += (i ? ", " : "") + csv::format(v(i));
  return s + "]";
}

std::string fmt(const MatrixXd& m) {
  std::string s = "[";
  for (Index r = 0; r < m.rows(); ++r) s += (r ? ", " : "") + fmt(VectorXd(m.row(r).transpose()));
  return s + "]";
}

VectorXd padded(const VectorXd& v, Index p) {
  VectorXd out = VectorXd::Zero(p);
  out.head(std::min(p, v.size())) = v.head(std::min(p, v.size()));
  return out;
}

VectorXd repeat(double value, Index count) { return VectorXd::Constant(count, value); }

Index checked_count(double value, const char* what) {
  if (value < 0.0 || value != std::floor(value))
    throw ConfigError(std::string("sweep value for ") + what + " must be a non-negative integer");
  return static_cast<Index>(value);
}

}  // namespace

const char* to_string(Estimator estimator) {
  for (const auto& e : kEstimatorNames)
    if (e.estimator == estimator) return e.name;
  return "?";
}

Estimator parse_estimator(std::string_view name) {
  for (const auto& e : kEstimatorNames)
    if (name == e.name) return e.estimator;
  throw ConfigError("unknown estimator '" + std::string(name) +
                    "' (expected ols, lasso, dl, oracle-ols, oracle-lasso, oracle-dl, em-hard or em-soft)");
}

const char* to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::None: return "none";
    case SweepAxis::J: return "J";
    case SweepAxis::JNoninf: return "J_noninf";
    case SweepAxis::N: return "n";
  }
  return "?";
}

SweepAxis parse_axis(std::string_view name) {
  if (name == "none") return SweepAxis::None;
  if (name == "J") return SweepAxis::J;
  if (name == "J_noninf") return SweepAxis::JNoninf;
  if (name == "n") return SweepAxis::N;
  throw ConfigError("unknown sweep axis '" + std::string(name) + "' (expected J, J_noninf, n or none)");
}

void ScenarioConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid scenario: " + what); };
  const Index g = mu.size();
  if (g < 1) fail("mu must name at least one subgroup");
  if (alpha.size() != g) fail("len(alpha) = " + std::to_string(alpha.size()) + " but len(mu) = " + std::to_string(g));
  if (tau.size() != 0 && tau.size() != g) fail("len(tau) must equal the number of subgroups");
  if (theta_file.empty()) {
    if (theta_base.size() == 0) fail("either theta_base or theta_file is required");
    if (theta_base.cols() != g)
      fail("theta_base has " + std::to_string(theta_base.cols()) + " columns for " + std::to_string(g) + " subgroups");
    if (informative_items < 1) fail("J must be positive");
  }
  if (noninformative < 0) fail("noninformative must be >= 0");
  if (!(noninformative_value >= 0.0 && noninformative_value <= 1.0)) fail("noninformative_value must lie in [0,1]");
  if (n < g) fail("n must be at least the number of subgroups");
  if (p < 0) fail("p must be >= 0");
  if (!(std::abs(rho) < 1.0)) fail("rho must lie in (-1, 1)");
  if (beta.size() > p) fail("len(beta) exceeds p");
  if (beta_l.size() > p) fail("len(beta_l) exceeds p");
  if (!(noise_sd >= 0.0)) fail("noise_sd must be >= 0");
  if (estimators.empty()) fail("no estimators");
  if (replicates < 1) fail("replicates must be >= 1");
  if (!(level > 0.0 && level < 1.0)) fail("level must lie in (0,1)");
  if (folds < 2) fail("folds must be >= 2");
  if (grid_size < 1) fail("grid_size must be >= 1");
  if (kmeans_restarts < 1) fail("kmeans_restarts must be >= 1");
  if (em_starts < 1) fail("em_starts must be >= 1");
  if ((sweep_axis == SweepAxis::None) != sweep_values.empty()) fail("sweep_axis and sweep_values go together");
  if (std::adjacent_find(sweep_values.begin(), sweep_values.end(),
                         [](double a, double b) { return !(a < b); }) != sweep_values.end())
    fail("sweep_values must be strictly increasing");
}

ItemParams ScenarioConfig::item_params() const {
  MatrixXd theta;
  if (!theta_file.empty()) {
    theta = read_theta_csv(theta_file);
    if (theta.cols() != groups())
      throw ConfigError("theta_file has " + std::to_string(theta.cols()) + " columns for " +
                        std::to_string(groups()) + " subgroups");
  } else {
    const Index rows = theta_base.rows();
    theta = make_stacked_theta(theta_base, (informative_items + rows - 1) / rows).topRows(informative_items);
  }
  theta = append_noninformative(theta, noninformative, noninformative_value);
  ItemParams params = tau.size() ? ItemParams{theta, tau} : ItemParams::balanced(theta);
  params.validate();
  return params;
}

VectorXd ScenarioConfig::padded_beta() const { return padded(beta, p); }
VectorXd ScenarioConfig::padded_beta_l() const { return padded(beta_l, p); }

VectorXd ScenarioConfig::gamma() const {
  VectorXd out(2 * mu.size() + p);
  out << alpha, mu, padded_beta();
  return out;
}

std::vector<std::string> preset_names() { return {"lowdim", "highdim", "noninform", "toy-fig2"}; }

ScenarioConfig preset(std::string_view name) {
  ScenarioConfig c;
  c.name = std::string(name);
  if (name == "lowdim" || name == "highdim" || name == "noninform") {
    c.theta_base = base_theta_block();
    c.informative_items = 150;
    c.n = 150;
    c.p = name == "highdim" ? 200 : 10;
    c.rho = 0.1;
    c.beta = (VectorXd(3) << 1.0, 1.5, 1.5).finished();
    c.beta_l = repeat(1.0, 6);
    c.alpha = (VectorXd(3) << 0.0, -0.05, -0.2).finished();
    c.mu = (VectorXd(3) << -1.0, 0.0, 1.5).finished();
    c.noise_sd = 1.0;
    c.replicates = 200;
    c.sweep_axis = SweepAxis::J;
    c.sweep_values = {5, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120, 130, 140, 150};
    if (name == "lowdim") {
      c.estimators = {Estimator::Ols, Estimator::OracleOls};
      c.master_seed = 1001;
    } else if (name == "highdim") {
      c.estimators = {Estimator::Lasso, Estimator::Dl, Estimator::OracleLasso, Estimator::OracleDl};
      c.master_seed = 2002;
    } else {
      c.informative_items = 50;
      c.estimators = {Estimator::Ols, Estimator::EmHard};
      c.master_seed = 3003;
      c.sweep_axis = SweepAxis::JNoninf;
      c.sweep_values = {0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100};
    }
    return c;
  }
  if (name == "toy-fig2") {
    c.theta_base = (MatrixXd(2, 2) << 0.7, 0.3, 0.8, 0.2).finished();
    c.informative_items = 2;
    c.tau = (VectorXd(2) << 0.6, 0.4).finished();
    c.n = 2000;
    c.p = 5;
    c.rho = 0.0;
    c.beta = repeat(1.0, 5);
    c.random_treatment = true;
    c.alpha = VectorXd::Zero(2);
    c.mu = (VectorXd(2) << 1.0, 2.0).finished();
    c.noise_sd = 0.5;
    c.estimators = {Estimator::EmHard, Estimator::EmSoft, Estimator::OracleOls};
    c.replicates = 200;
    c.master_seed = 4004;
    c.sweep_axis = SweepAxis::N;
    c.sweep_values = {500, 1000, 2000, 4000, 8000, 16000, 32000};
    return c;
  }
  throw ConfigError("unknown preset '" + std::string(name) + "' (expected lowdim, highdim, noninform or toy-fig2)");
}

ScenarioConfig parse_config(std::string_view text) {
  ScenarioConfig config;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    std::string statement = trim(strip_comment(line));
    if (statement.empty()) continue;
    // Continue across lines until brackets balance.
    while (bracket_balance(statement) > 0 && std::getline(in, line)) {
      ++line_no;
      statement += " " + trim(strip_comment(line));
    }
    const auto eq = statement.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(std::string_view(statement).substr(0, eq));
    const Value value = ValueParser(std::string_view(statement).substr(eq + 1), key).parse();
    if (key == "preset") {
      if (!first) throw ConfigError("config line " + std::to_string(line_no) + ": preset must be the first key");
      config = preset(to_name(value, key));
    } else {
      assign(config, key, value);
    }
    first = false;
  }
  return config;
}

ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

void apply_setting(ScenarioConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("--set expects key=value, got '" + std::string(assignment) + "'");
  const std::string key = trim(assignment.substr(0, eq));
  if (key == "preset") throw ConfigError("--set cannot change the preset");
  assign(config, key, ValueParser(assignment.substr(eq + 1), key).parse());
}

std::string to_text(const ScenarioConfig& c) {
  std::ostringstream out;
  out << "name = \"" << c.name << "\"\n";
  if (c.theta_file.empty()) {
    out << "theta_base = " << fmt(c.theta_base) << "\n";
    out << "J = " << c.informative_items << "\n";
  } else {
    out << "theta_file = \"" << c.theta_file << "\"\n";
  }
  out << "noninformative = " << c.noninformative << "\n";
  out << "noninformative_value = " << csv::format(c.noninformative_value) << "\n";
  out << "tau = " << fmt(c.tau) << "\n";
  out << "n = " << c.n << "\n";
  out << "p = " << c.p << "\n";
  out << "rho = " << csv::format(c.rho) << "\n";
  out << "beta = " << fmt(c.beta) << "\n";
  out << "beta_l = " << fmt(c.beta_l) << "\n";
  out << "treatment = " << (c.random_treatment ? "random" : "logistic") << "\n";
  out << "treatment_intercept = " << csv::format(c.treatment_intercept) << "\n";
  out << "alpha = " << fmt(c.alpha) << "\n";
  out << "mu = " << fmt(c.mu) << "\n";
  out << "noise_sd = " << csv::format(c.noise_sd) << "\n";
  out << "estimators = [";
  for (std::size_t i = 0; i < c.estimators.size(); ++i) out << (i ? ", " : "") << to_string(c.estimators[i]);
  out << "]\n";
  out << "replicates = " << c.replicates << "\n";
  out << "master_seed = " << c.master_seed << "\n";
  out << "level = " << csv::format(c.level) << "\n";
  out << "folds = " << c.folds << "\n";
  out << "grid_size = " << c.grid_size << "\n";
  out << "kmeans_restarts = " << c.kmeans_restarts << "\n";
  out << "em_starts = " << c.em_starts << "\n";
  out << "sweep_axis = " << to_string(c.sweep_axis) << "\n";
  out << "sweep_values = " << fmt(VectorXd(Eigen::Map<const VectorXd>(c.sweep_values.data(),
                                                                static_cast<Index>(c.sweep_values.size()))))
      << "\n";
  return out.str();
}

std::uint64_t config_hash(const ScenarioConfig& config) {
  // FNV-1a over the canonical text.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : to_text(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ScenarioConfig at_sweep_point(const ScenarioConfig& config, double value) {
  ScenarioConfig point = config;
  point.sweep_axis = SweepAxis::None;
  point.sweep_values.clear();
  switch (config.sweep_axis) {
    case SweepAxis::None: throw ConfigError("scenario has no sweep axis");
    case SweepAxis::J: point.informative_items = checked_count(value, "J"); break;
    case SweepAxis::JNoninf: point.noninformative = checked_count(value, "J_noninf"); break;
    case SweepAxis::N: point.n = checked_count(value, "n"); break;
  }
  return point;
}

double axis_value(const ScenarioConfig& config, SweepAxis axis) {
  switch (axis) {
    case SweepAxis::J: return static_cast<double>(config.informative_items);
    case SweepAxis::JNoninf: return static_cast<double>(config.noninformative);
    case SweepAxis::N: return static_cast<double>(config.n);
    case SweepAxis::None: break;
  }
  throw ConfigError("no axis variable");
}

}  // namespace lsa
