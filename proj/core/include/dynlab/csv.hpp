#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dynlab {

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Comma-separated table with a header row. Fields are plain (no quoting);
// empty string encodes a missing value. Decimal separator is ".".
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;  // each row padded to header size

  int column(const std::string& name) const;              // -1 when absent
  int require_column(const std::string& name) const;      // throws CsvError
};

CsvTable read_csv(std::istream& in);
CsvTable read_csv_file(const std::string& path);

void write_csv(std::ostream& out, const CsvTable& table);
void write_csv_file(const std::string& path, const CsvTable& table);

// Canonical numeric formatting used for all emitted files: shortest string
// that round-trips the double exactly. Deterministic across runs.
std::string format_double(double value);

std::optional<double> parse_double(const std::string& field);  // empty -> nullopt
std::optional<long long> parse_int(const std::string& field);

}  // namespace dynlab
