#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sdde::csv {

// 17 significant digits; NaN is written as an empty field.
std::string num(double x);

void write_row(std::ostream& os, const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
  std::vector<double> numeric(int col) const;
};

// Throws std::runtime_error("file not found: ...") for a missing file.
Table read_file(const std::string& path);
Table parse(std::istream& is);

}  // namespace sdde::csv
