#include "scrkit/report.hpp"

#include "scrkit/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace scrkit::report {

Cell cell(const std::optional<double>& v) { return v ? Cell(*v) : Cell(); }
Cell cell(double v) { return v; }
Cell cell(long long v) { return v; }
Cell cell(std::size_t v) { return static_cast<long long>(v); }
Cell cell(int v) { return static_cast<long long>(v); }
Cell cell(std::string v) { return v; }
Cell cell(const char* v) { return std::string(v); }

void Table::add(std::vector<Cell> row) {
  if (row.size() != columns.size()) {
    throw std::logic_error("table '" + name + "' expects " + std::to_string(columns.size()) + " cells, got " +
                           std::to_string(row.size()));
  }
  rows.push_back(std::move(row));
}

Table& Report::table(std::string name, std::vector<std::string> columns) {
  tables.emplace_back(std::move(name), std::move(columns));
  return tables.back();
}

const Table* Report::find(const std::string& name) const {
  for (const auto& t : tables)
    if (t.name == name) return &t;
  return nullptr;
}

Format parse_format(const std::string& s) {
  if (s == "csv") return Format::Csv;
  if (s == "table") return Format::Table;
  throw PreconditionError("unknown format '" + s + "' (expected csv or table)");
}

std::string full_precision(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) return "0";  // folds -0 into 0
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

namespace {

std::string csv_cell(const Cell& c) {
  struct {
    std::string operator()(std::monostate) const { return {}; }
    std::string operator()(const std::string& s) const { return csv_field(s); }
    std::string operator()(long long v) const { return std::to_string(v); }
    std::string operator()(double v) const { return full_precision(v); }
  } visit;
  return std::visit(visit, c);
}

std::string display_cell(const Cell& c) {
  struct {
    std::string operator()(std::monostate) const { return "-"; }
    std::string operator()(const std::string& s) const { return s; }
    std::string operator()(long long v) const { return std::to_string(v); }
    std::string operator()(double v) const {
      if (!std::isfinite(v)) return full_precision(v);
      char buf[64];
      const double a = std::abs(v);
      if (a != 0.0 && (a < 1e-3 || a >= 1e6)) {
        std::snprintf(buf, sizeof buf, "%.3e", v);
      } else {
        std::snprintf(buf, sizeof buf, "%.4f", v);
      }
      return buf;
    }
  } visit;
  return std::visit(visit, c);
}

bool numeric(const Cell& c) { return std::holds_alternative<double>(c) || std::holds_alternative<long long>(c); }

}  // namespace

std::string render_csv(const Report& r) {
  std::ostringstream os;
  os << "# scrkit " << r.command << " report\n";
  for (const auto& [k, v] : r.provenance) os << "# " << k << ": " << v << '\n';
  for (const auto& n : r.notes) os << "# note: " << n << '\n';
  for (const auto& t : r.tables) {
    os << "\n# table: " << t.name << '\n';
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << csv_field(t.columns[i]);
    os << '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << csv_cell(row[i]);
      os << '\n';
    }
  }
  return os.str();
}

std::string render_table(const Report& r) {
  std::ostringstream os;
  os << "scrkit " << r.command << '\n';
  for (const auto& [k, v] : r.provenance) os << "  " << k << ": " << v << '\n';
  for (const auto& t : r.tables) {
    os << '\n' << t.name << '\n';
    std::vector<std::size_t> width(t.columns.size());
    for (std::size_t i = 0; i < t.columns.size(); ++i) width[i] = t.columns[i].size();
    std::vector<std::vector<std::string>> shown;
    for (const auto& row : t.rows) {
      std::vector<std::string> cells;
      for (std::size_t i = 0; i < row.size(); ++i) {
        cells.push_back(display_cell(row[i]));
        width[i] = std::max(width[i], cells.back().size());
      }
      shown.push_back(std::move(cells));
    }
    auto line = [&](const std::vector<std::string>& cells, const std::vector<Cell>* src) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto pad = std::string(width[i] - cells[i].size(), ' ');
        const bool right = src && numeric((*src)[i]);
        os << "  " << (right ? pad + cells[i] : cells[i] + (i + 1 < cells.size() ? pad : ""));
      }
      os << '\n';
    };
    line(t.columns, nullptr);
    std::vector<std::string> rule;
    for (auto w : width) rule.emplace_back(w, '-');
    line(rule, nullptr);
    for (std::size_t k = 0; k < shown.size(); ++k) line(shown[k], &t.rows[k]);
  }
  if (!r.notes.empty()) {
    os << '\n';
    for (const auto& n : r.notes) os << "note: " << n << '\n';
  }
  return os.str();
}

std::string render(const Report& r, Format f) { return f == Format::Csv ? render_csv(r) : render_table(r); }

}  // namespace scrkit::report
