#pragma once

// Command reports: named tables plus provenance and notes, rendered either
// as CSV (numbers at full round-trip precision) or as aligned text tables
// (numbers rounded for reading). Both renderings come from the same data.

#include <deque>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace scrkit::report {

/// Empty cell, text, integer or real.
using Cell = std::variant<std::monostate, std::string, long long, double>;

Cell cell(const std::optional<double>& v);
Cell cell(double v);
Cell cell(long long v);
Cell cell(std::size_t v);
Cell cell(int v);
Cell cell(std::string v);
Cell cell(const char* v);

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;

  Table(std::string name, std::vector<std::string> columns) : name(std::move(name)), columns(std::move(columns)) {}
  /// Appends a row; throws std::logic_error when the width is wrong.
  void add(std::vector<Cell> row);
};

struct Report {
  std::string command;
  std::vector<std::pair<std::string, std::string>> provenance;  // rendered in insertion order
  std::deque<Table> tables;  // deque keeps references from table() valid
  std::vector<std::string> notes;

  Table& table(std::string name, std::vector<std::string> columns);
  const Table* find(const std::string& name) const;
};

enum class Format { Csv, Table };
Format parse_format(const std::string& s);

/// Shortest decimal that reads back to the same double; "inf", "-inf", "nan" otherwise.
std::string full_precision(double v);

std::string render_csv(const Report& r);
std::string render_table(const Report& r);
std::string render(const Report& r, Format f);

/// CSV field quoting: fields containing a comma, quote or newline are quoted.
std::string csv_field(const std::string& s);

}  // namespace scrkit::report
