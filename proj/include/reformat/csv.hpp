#pragma once

#include <istream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "reformat/common.hpp"

namespace reformat::csv {

// Plain comma-separated fields; no quoting (none of our columns need it).
inline std::vector<std::string> split(std::string_view line, char sep = ',') {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.emplace_back(line.substr(start));
      break;
    }
    out.emplace_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r' || s[b] == '\n')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r' || s[e - 1] == '\n')) --e;
  return std::string(s.substr(b, e - b));
}

/// Header-indexed table reader. Blank lines are skipped; line numbers are
/// 1-based and count the header.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      if (trim(line).empty()) continue;
      header_ = split(trim(line));
      for (auto& h : header_) h = trim(h);
      for (std::size_t i = 0; i < header_.size(); ++i) column_[header_[i]] = i;
      return;
    }
    throw DataError("empty input: no header row");
  }

  const std::vector<std::string>& header() const { return header_; }
  bool has(const std::string& name) const { return column_.count(name) > 0; }

  std::size_t index(const std::string& name) const {
    auto it = column_.find(name);
    if (it == column_.end()) throw DataError("missing required column '" + name + "'");
    return it->second;
  }

  void require(const std::vector<std::string>& names) const {
    for (const auto& n : names) index(n);
  }

  /// Next data row, or false at end of input.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_no_;
      auto t = trim(line);
      if (t.empty()) continue;
      fields = split(t);
      for (auto& f : fields) f = trim(f);
      return true;
    }
    return false;
  }

  std::size_t line_number() const { return line_no_; }

 private:
  std::istream& in_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> column_;
  std::size_t line_no_ = 0;
};

}  // namespace reformat::csv
