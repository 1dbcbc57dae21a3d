// CSV helpers and round-trip number formatting.
#pragma once

#include "subhaz/common.hpp"

#include <string>
#include <vector>

namespace subhaz {

/// Shortest form that reads back to the same double ("%.17g").
std::string fmt(double x);

std::vector<std::string> split_csv_line(const std::string& line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};

CsvTable read_csv(const std::string& path);
double parse_double(const std::string& s);
long parse_long(const std::string& s);

/// Writes `content` to `path`, throwing an io error on failure.
void write_text(const std::string& path, const std::string& content);
std::string read_text(const std::string& path);

}  // namespace subhaz
