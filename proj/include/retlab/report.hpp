#pragma once

// CSV tables and report emission. Numbers are rendered without locale:
// shortest round-trip decimals for doubles, "num/den" for rationals.

#include <cstddef>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "retlab/numeric.hpp"

namespace retlab {

inline std::string cell(const std::string& s) { return s; }
inline std::string cell(const char* s) { return s; }
inline std::string cell(double v) { return format_double(v); }
inline std::string cell(const Rational& r) { return to_string(r); }
inline std::string cell(bool b) { return b ? "true" : "false"; }
inline std::string cell(std::size_t n) { return std::to_string(n); }
inline std::string cell(int n) { return std::to_string(n); }
inline std::string cell(unsigned n) { return std::to_string(n); }
template <class T>
std::string cell(const std::optional<T>& v) {
  return v ? cell(*v) : std::string{};
}

/// Fields containing separators or quotes are quoted.
inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  template <class... Cells>
  void row(const Cells&... cells) {
    rows_.push_back({cell(cells)...});
  }
  void add_row(std::vector<std::string> cells) { rows_.push_back(std::move(cells)); }

  /// Lines written before the header, prefixed with "# ".
  void comment(std::string line) { comments_.push_back(std::move(line)); }
  /// Lines written after the last row, prefixed with "# ".
  void footer(std::string line) { footers_.push_back(std::move(line)); }

  [[nodiscard]] std::size_t size() const noexcept { return rows_.size(); }

  void write(std::ostream& out) const {
    for (const auto& c : comments_) out << "# " << c << '\n';
    write_line(out, header_);
    for (const auto& r : rows_) write_line(out, r);
    for (const auto& f : footers_) out << "# " << f << '\n';
  }

 private:
  static void write_line(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << csv_escape(cells[i]);
    }
    out << '\n';
  }

  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
  std::vector<std::string> comments_;
  std::vector<std::string> footers_;
};

inline void write_json(std::ostream& out, const nlohmann::json& j) { out << j.dump(2) << '\n'; }

}  // namespace retlab
