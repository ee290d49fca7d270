#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace surge::csv {

// In-memory RFC-4180 table with a mandatory header row.
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // throws if absent
  bool has_column(const std::string& name) const;
  double num(std::size_t row, const std::string& name) const;
  const std::string& str(std::size_t row, const std::string& name) const;
};

Table read(const std::filesystem::path& path);
Table parse(const std::string& text);

// Rows are written with CRLF terminators; fields quoted only when needed.
void write(const std::filesystem::path& path, const Table& table);
std::string serialize(const Table& table);

}  // namespace surge::csv
