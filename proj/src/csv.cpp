#include "lsa/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace lsa::csv {

namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const auto [ptr, ec] = std::from_chars(begin, s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(out);
}

bool is_missing(const std::string& s) {
  return s.empty() || s == "NA" || s == "na" || s == "NaN" || s == "nan" || s == ".";
}

}  // namespace

Table read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());

  Table table;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split(line);
    if (rows.empty() && table.header.empty()) {
      bool numeric = true;
      for (const auto& f : fields) {
        double v;
        if (!parse_number(f, v)) numeric = false;
      }
      if (!numeric) {
        table.header = fields;
        width = fields.size();
        continue;
      }
    }
    if (width == 0) width = fields.size();
    if (fields.size() != width) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                      " fields, found " + std::to_string(fields.size()));
    }
    std::vector<double> row(width);
    for (std::size_t c = 0; c < width; ++c) {
      if (is_missing(fields[c])) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": missing value in column " +
                        std::to_string(c + 1));
      }
      if (!parse_number(fields[c], row[c])) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-numeric value '" + fields[c] +
                        "' in column " + std::to_string(c + 1));
      }
    }
    rows.push_back(std::move(row));
  }

  table.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) table.values(static_cast<Index>(r), static_cast<Index>(c)) = rows[r][c];
  return table;
}

std::string format(double value) {
  if (std::isnan(value)) return "NA";
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, ptr);
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << fields[i];
  }
  out << '\n';
}

void write_matrix(const std::filesystem::path& path, const std::vector<std::string>& header, const MatrixXd& values) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  if (!header.empty()) write_row(out, header);
  std::vector<std::string> fields(static_cast<std::size_t>(values.cols()));
  for (Index r = 0; r < values.rows(); ++r) {
    for (Index c = 0; c < values.cols(); ++c) fields[static_cast<std::size_t>(c)] = format(values(r, c));
    write_row(out, fields);
  }
}

}  // namespace lsa::csv
