#pragma once

#include "lsa/types.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace lsa::csv {

struct Table {
  std::vector<std::string> header;  // empty when the file had no header line
  MatrixXd values;
};

/// Reads a rectangular numeric CSV. The first line is treated as a header when
/// any of its fields fails to parse as a number. Empty fields and "NA"/"nan"
/// are rejected as missing values; errors carry 1-based line and column.
Table read(const std::filesystem::path& path);

/// Shortest round-trip representation of a double.
std::string format(double value);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

void write_matrix(const std::filesystem::path& path, const std::vector<std::string>& header, const MatrixXd& values);

}  // namespace lsa::csv
