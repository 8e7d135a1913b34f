#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "reformat/common.hpp"
#include "reformat/csv.hpp"

namespace reformat {

inline constexpr int kBioColumns = 4;
inline const std::array<std::string, kBioColumns> kBioNames = {"psh", "pnc", "ppc", "sfvcsp"};

/// PSH, PNC, PPC, SFvCSP; any may be missing.
struct BiophysRow {
  std::array<std::optional<double>, kBioColumns> values;

  bool operator==(const BiophysRow&) const = default;
};

using BiophysMeans = std::array<double, kBioColumns>;

/// Per-column means over present values.
inline BiophysMeans fit_imputer(const std::vector<BiophysRow>& train_rows) {
  BiophysMeans means{};
  for (int c = 0; c < kBioColumns; ++c) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : train_rows)
      if (const auto& v = r.values[static_cast<std::size_t>(c)]) {
        sum += *v;
        ++n;
      }
    if (n == 0) throw DataError("biophysical column '" + kBioNames[static_cast<std::size_t>(c)] + "' has no values in training rows");
    means[static_cast<std::size_t>(c)] = sum / static_cast<double>(n);
  }
  return means;
}

inline Matrix impute(const std::vector<BiophysRow>& rows, const BiophysMeans& means) {
  Matrix out(static_cast<Index>(rows.size()), kBioColumns);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < kBioColumns; ++c)
      out(static_cast<Index>(i), static_cast<Index>(c)) = rows[i].values[c].value_or(means[c]);
  return out;
}

/// NaN for missing cells; the inverse of `rows_from_matrix`.
inline Matrix rows_to_matrix(const std::vector<BiophysRow>& rows) {
  return impute(rows, BiophysMeans{NAN, NAN, NAN, NAN});
}

inline std::vector<BiophysRow> rows_from_matrix(const Matrix& m) {
  std::vector<BiophysRow> rows(static_cast<std::size_t>(m.rows()));
  for (Index i = 0; i < m.rows(); ++i)
    for (Index c = 0; c < kBioColumns; ++c)
      if (!std::isnan(m(i, c))) rows[static_cast<std::size_t>(i)].values[static_cast<std::size_t>(c)] = m(i, c);
  return rows;
}

/// Comma-delimited with header `sig_key,psh,pnc,ppc,sfvcsp`; empty = missing.
inline std::map<std::string, BiophysRow> read_biophys(std::istream& in) {
  csv::Reader reader(in);
  reader.require({"sig_key", "psh", "pnc", "ppc", "sfvcsp"});
  const std::size_t key_col = reader.index("sig_key");
  std::array<std::size_t, kBioColumns> cols{};
  for (std::size_t c = 0; c < kBioColumns; ++c) cols[c] = reader.index(kBioNames[c]);
  std::map<std::string, BiophysRow> out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    if (f.size() < reader.header().size())
      throw DataError("biophys line " + std::to_string(reader.line_number()) + ": too few fields");
    BiophysRow row;
    for (std::size_t c = 0; c < kBioColumns; ++c) {
      const auto& cell = f[cols[c]];
      if (cell.empty()) continue;
      double v = 0;
      try {
        v = std::stod(cell);
      } catch (const std::exception&) {
        throw DataError("biophys line " + std::to_string(reader.line_number()) + ": non-numeric '" + cell + "'");
      }
      if (!std::isfinite(v)) throw DataError("biophys line " + std::to_string(reader.line_number()) + ": non-finite value");
      row.values[c] = v;
    }
    if (!out.emplace(f[key_col], row).second) throw DataError("duplicate sig_key in biophys file");
  }
  return out;
}

inline void write_biophys(std::ostream& os, const std::vector<std::pair<std::string, BiophysRow>>& rows) {
  os << "sig_key,psh,pnc,ppc,sfvcsp\n";
  char buf[40];
  for (const auto& [key, row] : rows) {
    os << key;
    for (const auto& v : row.values) {
      os << ',';
      if (v) {
        std::snprintf(buf, sizeof buf, "%.10g", *v);
        os << buf;
      }
    }
    os << '\n';
  }
}

}  // namespace reformat
