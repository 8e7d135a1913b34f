#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <compare>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"
#include "reformat/csv.hpp"

namespace reformat {

inline constexpr std::string_view kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

/// Purity (% main-peak area) at or above which a construct counts as SEC-pure.
inline constexpr double kSecPurityThreshold = 90.0;

/// Aggregated QC mean at or above which a signature is labelled pass.
inline constexpr double kQcPassThreshold = 0.5;

enum class Orientation { VH_VL, VL_VH };

inline std::string_view to_string(Orientation o) {
  return o == Orientation::VH_VL ? "VH_VL" : "VL_VH";
}

inline Orientation parse_orientation(std::string_view s) {
  if (s == "VH_VL") return Orientation::VH_VL;
  if (s == "VL_VH") return Orientation::VL_VH;
  throw DataError("unknown orientation '" + std::string(s) + "'");
}

inline bool is_amino_acid(char c) { return kAminoAcids.find(c) != std::string_view::npos; }

/// First character outside the 20-letter alphabet, if any.
inline std::optional<char> first_invalid_residue(std::string_view seq) {
  for (char c : seq)
    if (!is_amino_acid(c)) return c;
  return std::nullopt;
}

struct ReformatRecord {
  std::string record_id;
  std::string vh_seq;
  std::string vl_seq;
  std::string linker_id;
  Orientation orientation = Orientation::VH_VL;
  std::string parental_family;
  std::string campaign;
  std::optional<int> qc_pass;
  std::optional<double> yield_ng_per_ul;
  std::optional<double> sec_main_peak_pct;
};

/// Dedup key for an scFv construct.
struct SigKey {
  std::string vh;
  std::string vl;
  std::string linker;
  Orientation orientation = Orientation::VH_VL;

  auto operator<=>(const SigKey&) const = default;
  bool operator==(const SigKey&) const = default;

  /// Canonical text form `VH|VL|linker|orientation`.
  std::string str() const {
    return vh + "|" + vl + "|" + linker + "|" + std::string(to_string(orientation));
  }

  /// Short stable identifier, used for per-signature file names.
  std::string id() const { return hex64(fnv1a(str())); }

  static SigKey parse(std::string_view s) {
    auto parts = csv::split(s, '|');
    if (parts.size() != 4) throw DataError("malformed sig_key '" + std::string(s) + "'");
    return SigKey{parts[0], parts[1], parts[2], parse_orientation(parts[3])};
  }
};

struct ScfvSignature {
  SigKey key;
  std::string parental_family;
  std::string campaign;
  std::optional<double> qc_mean;
  std::optional<int> qc_label;
  std::optional<double> yield_mean;
  std::optional<double> sec_mean;
  std::optional<int> sec_label;
  int replicate_count = 0;

  bool operator==(const ScfvSignature&) const = default;
};

struct SignatureSet {
  std::vector<ScfvSignature> signatures;
  std::map<std::string, std::vector<std::size_t>> family_index;

  std::size_t size() const { return signatures.size(); }
  bool empty() const { return signatures.empty(); }
  const ScfvSignature& operator[](std::size_t i) const { return signatures[i]; }

  std::vector<std::string> families() const {
    std::vector<std::string> out;
    out.reserve(family_index.size());
    for (const auto& [f, _] : family_index) out.push_back(f);
    return out;
  }

  void rebuild_index() {
    family_index.clear();
    for (std::size_t i = 0; i < signatures.size(); ++i)
      family_index[signatures[i].parental_family].push_back(i);
  }
};

/// 1 iff purity ≥ 90%.
inline int sec_label(double purity_pct) {
  if (!(purity_pct >= 0.0 && purity_pct <= 100.0))
    throw DataError("SEC purity out of range [0,100]: " + std::to_string(purity_pct));
  return purity_pct >= kSecPurityThreshold ? 1 : 0;
}

struct RowDiagnostic {
  std::size_t row = 0;  // 1-based line number in the input
  std::string message;
};

struct ParseResult {
  std::vector<ReformatRecord> records;
  std::vector<RowDiagnostic> rejected;
  std::vector<std::string> warnings;
};

inline const std::vector<std::string>& record_columns() {
  static const std::vector<std::string> cols = {
      "record_id", "vh_seq",   "vl_seq",  "linker_id",       "orientation",
      "parental_family", "campaign", "qc_pass", "yield_ng_per_ul", "sec_main_peak_pct"};
  return cols;
}

namespace detail {

inline std::optional<double> parse_optional_real(const std::string& cell, const char* what) {
  if (cell.empty()) return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &used);
  } catch (const std::exception&) {
    throw DataError(std::string("non-numeric ") + what + " '" + cell + "'");
  }
  if (used != cell.size()) throw DataError(std::string("non-numeric ") + what + " '" + cell + "'");
  if (!std::isfinite(v)) throw DataError(std::string("non-finite ") + what);
  return v;
}

}  // namespace detail

/// Parse reformatting records from comma-delimited text with the standard
/// header. Bad rows land in `rejected`; a missing column throws DataError.
inline ParseResult parse_records(std::istream& in) {
  csv::Reader reader(in);
  reader.require(record_columns());
  std::array<std::size_t, 10> col{};
  for (std::size_t i = 0; i < col.size(); ++i) col[i] = reader.index(record_columns()[i]);

  ParseResult out;
  std::vector<std::string> f;
  while (reader.next(f)) {
    const std::size_t row = reader.line_number();
    auto reject = [&](std::string msg) { out.rejected.push_back({row, std::move(msg)}); };
    if (f.size() < reader.header().size()) {
      reject("row " + std::to_string(row) + ": expected " + std::to_string(reader.header().size()) +
             " fields, got " + std::to_string(f.size()));
      continue;
    }
    try {
      ReformatRecord r;
      r.record_id = f[col[0]];
      r.vh_seq = f[col[1]];
      r.vl_seq = f[col[2]];
      r.linker_id = f[col[3]];
      r.orientation = parse_orientation(f[col[4]]);
      r.parental_family = f[col[5]];
      r.campaign = f[col[6]];
      for (auto [seq, chain] : {std::pair{&r.vh_seq, "vh_seq"}, std::pair{&r.vl_seq, "vl_seq"}}) {
        if (seq->empty()) throw DataError(std::string(chain) + " is empty");
        if (auto bad = first_invalid_residue(*seq))
          throw DataError(std::string(chain) + " contains invalid residue '" + *bad + "'");
      }
      if (r.linker_id.empty()) throw DataError("linker_id is empty");
      if (r.parental_family.empty()) throw DataError("parental_family is empty");
      if (const auto& q = f[col[7]]; !q.empty()) {
        if (q != "0" && q != "1") throw DataError("qc_pass must be 0 or 1, got '" + q + "'");
        r.qc_pass = q == "1" ? 1 : 0;
      }
      r.yield_ng_per_ul = detail::parse_optional_real(f[col[8]], "yield_ng_per_ul");
      if (r.yield_ng_per_ul && *r.yield_ng_per_ul < 0.0) throw DataError("negative yield");
      r.sec_main_peak_pct = detail::parse_optional_real(f[col[9]], "sec_main_peak_pct");
      if (r.sec_main_peak_pct && (*r.sec_main_peak_pct < 0.0 || *r.sec_main_peak_pct > 100.0))
        throw DataError("sec_main_peak_pct outside [0,100]");
      if (!r.qc_pass && !r.yield_ng_per_ul && !r.sec_main_peak_pct)
        throw DataError("no target present");
      out.records.push_back(std::move(r));
    } catch (const DataError& e) {
      reject("row " + std::to_string(row) + ": " + e.what());
    }
  }
  if (out.records.empty() && out.rejected.empty()) out.warnings.push_back("input has no data rows");
  return out;
}

inline void write_records(std::ostream& os, const std::vector<ReformatRecord>& records) {
  const auto& cols = record_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
  os << '\n';
  auto real = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", *v);
    return std::string(buf);
  };
  for (const auto& r : records) {
    os << r.record_id << ',' << r.vh_seq << ',' << r.vl_seq << ',' << r.linker_id << ','
       << to_string(r.orientation) << ',' << r.parental_family << ',' << r.campaign << ','
       << (r.qc_pass ? std::to_string(*r.qc_pass) : std::string()) << ','
       << real(r.yield_ng_per_ul) << ',' << real(r.sec_main_peak_pct) << '\n';
  }
}

/// Merge records sharing a signature; targets are averaged over non-missing
/// values. Output is sorted by key.
inline SignatureSet aggregate_by_signature(const std::vector<ReformatRecord>& records) {
  struct Acc {
    std::string family, campaign;
    double qc_sum = 0, yield_sum = 0, sec_sum = 0;
    int qc_n = 0, yield_n = 0, sec_n = 0, count = 0;
  };
  std::map<SigKey, Acc> groups;
  for (const auto& r : records) {
    SigKey key{r.vh_seq, r.vl_seq, r.linker_id, r.orientation};
    auto [it, inserted] = groups.try_emplace(std::move(key));
    Acc& a = it->second;
    if (inserted) {
      a.family = r.parental_family;
      a.campaign = r.campaign;
    } else if (a.family != r.parental_family) {
      throw DataError("signature " + it->first.id() + " appears under families '" + a.family +
                      "' and '" + r.parental_family + "' (record " + r.record_id + ")");
    }
    ++a.count;
    if (r.qc_pass) { a.qc_sum += *r.qc_pass; ++a.qc_n; }
    if (r.yield_ng_per_ul) { a.yield_sum += *r.yield_ng_per_ul; ++a.yield_n; }
    if (r.sec_main_peak_pct) { a.sec_sum += *r.sec_main_peak_pct; ++a.sec_n; }
  }

  SignatureSet set;
  set.signatures.reserve(groups.size());
  for (auto& [key, a] : groups) {
    ScfvSignature s;
    s.key = key;
    s.parental_family = a.family;
    s.campaign = a.campaign;
    s.replicate_count = a.count;
    if (a.qc_n > 0) {
      s.qc_mean = a.qc_sum / a.qc_n;
      s.qc_label = *s.qc_mean >= kQcPassThreshold ? 1 : 0;
    }
    if (a.yield_n > 0) s.yield_mean = a.yield_sum / a.yield_n;
    if (a.sec_n > 0) {
      s.sec_mean = a.sec_sum / a.sec_n;
      s.sec_label = sec_label(*s.sec_mean);
    }
    set.signatures.push_back(std::move(s));
  }
  set.rebuild_index();
  return set;
}

// ---- line-delimited serialization ----------------------------------------

inline nlohmann::json to_json(const ScfvSignature& s) {
  nlohmann::json j;
  j["sig_key"] = s.key.str();
  j["sig_id"] = s.key.id();
  j["parental_family"] = s.parental_family;
  j["campaign"] = s.campaign;
  j["replicate_count"] = s.replicate_count;
  auto put = [&](const char* name, const auto& opt) {
    if (opt) j[name] = *opt; else j[name] = nullptr;
  };
  put("qc_mean", s.qc_mean);
  put("qc_label", s.qc_label);
  put("yield_mean", s.yield_mean);
  put("sec_mean", s.sec_mean);
  put("sec_label", s.sec_label);
  return j;
}

inline ScfvSignature signature_from_json(const nlohmann::json& j) {
  ScfvSignature s;
  s.key = SigKey::parse(j.at("sig_key").get<std::string>());
  s.parental_family = j.at("parental_family").get<std::string>();
  s.campaign = j.value("campaign", std::string());
  s.replicate_count = j.at("replicate_count").get<int>();
  auto get = [&](const char* name, auto& opt) {
    using T = typename std::remove_reference_t<decltype(opt)>::value_type;
    if (j.contains(name) && !j[name].is_null()) opt = j[name].get<T>();
  };
  get("qc_mean", s.qc_mean);
  get("qc_label", s.qc_label);
  get("yield_mean", s.yield_mean);
  get("sec_mean", s.sec_mean);
  get("sec_label", s.sec_label);
  return s;
}

inline void write_signatures(std::ostream& os, const SignatureSet& set) {
  for (const auto& s : set.signatures) os << to_json(s).dump() << '\n';
}

inline SignatureSet read_signatures(std::istream& in) {
  SignatureSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    set.signatures.push_back(signature_from_json(nlohmann::json::parse(line)));
  }
  if (!std::is_sorted(set.signatures.begin(), set.signatures.end(),
                      [](const auto& a, const auto& b) { return a.key < b.key; }))
    throw DataError("signature file is not sorted by sig_key");
  set.rebuild_index();
  return set;
}

}  // namespace reformat
