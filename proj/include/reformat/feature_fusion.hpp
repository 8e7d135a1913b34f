#pragma once

#include <array>
#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "reformat/common.hpp"
#include "reformat/csv.hpp"

namespace reformat {

/// Concatenation order is the enum order.
enum class Modality { SEQ = 0, STRUCT = 1, RMSD = 2, BIO = 3 };

inline constexpr std::array<Modality, 4> kAllModalities = {Modality::SEQ, Modality::STRUCT, Modality::RMSD,
                                                            Modality::BIO};

inline std::string_view to_string(Modality m) {
  switch (m) {
    case Modality::SEQ: return "seq";
    case Modality::STRUCT: return "struct";
    case Modality::RMSD: return "rmsd";
    case Modality::BIO: return "bio";
  }
  return "?";
}

inline Modality parse_modality(std::string_view s) {
  for (auto m : kAllModalities)
    if (to_string(m) == s) return m;
  throw ConfigError("unknown modality '" + std::string(s) + "' (seq|struct|rmsd|bio)");
}

/// Non-empty subset of modalities.
class ModalityMask {
 public:
  ModalityMask() = default;
  ModalityMask(std::initializer_list<Modality> ms) {
    for (auto m : ms) bits_ |= bit(m);
    validate();
  }

  static ModalityMask parse(std::string_view text) {
    ModalityMask mask;
    for (const auto& part : csv::split(text, ',')) {
      const auto t = csv::trim(part);
      if (t.empty()) continue;
      mask.bits_ |= bit(parse_modality(t));
    }
    if (mask.bits_ == 0) throw ConfigError("modality mask must enable at least one modality");
    return mask;
  }

  bool has(Modality m) const { return (bits_ & bit(m)) != 0; }
  unsigned bits() const { return bits_; }
  bool operator==(const ModalityMask&) const = default;

  std::string str() const {
    std::string out;
    for (auto m : kAllModalities)
      if (has(m)) out += (out.empty() ? "" : ",") + std::string(to_string(m));
    return out;
  }

 private:
  static unsigned bit(Modality m) { return 1u << static_cast<unsigned>(m); }
  void validate() const {
    if (bits_ == 0) throw ConfigError("modality mask must enable at least one modality");
  }
  unsigned bits_ = 0;
};

/// {seq}, {struct}, {rmsd}, the three pairs, and the triple.
inline std::vector<ModalityMask> ablation_masks() {
  using M = Modality;
  return {{M::SEQ},           {M::STRUCT},         {M::RMSD},
          {M::SEQ, M::STRUCT}, {M::SEQ, M::RMSD},  {M::STRUCT, M::RMSD},
          {M::SEQ, M::STRUCT, M::RMSD}};
}

/// Column-labelled matrix for one modality, rows aligned to a SignatureSet.
struct FeatureBlock {
  Modality modality = Modality::SEQ;
  Matrix values;
  std::vector<std::string> labels;
};

struct ColumnTag {
  Modality modality = Modality::SEQ;
  std::size_t index = 0;  // within its block
  bool operator==(const ColumnTag&) const = default;
};

struct DesignMatrix {
  Matrix X;
  std::vector<ColumnTag> columns;
  std::vector<std::string> labels;

  /// Columns of the STRUCT, RMSD and BIO blocks.
  std::vector<std::size_t> continuous_columns() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < columns.size(); ++c)
      if (columns[c].modality != Modality::SEQ) out.push_back(c);
    return out;
  }
};

using BlockSet = std::map<Modality, FeatureBlock>;

/// Horizontal concatenation of the enabled blocks in SEQ, STRUCT, RMSD, BIO
/// order.
inline DesignMatrix assemble(const BlockSet& blocks, const ModalityMask& mask) {
  if (mask.bits() == 0) throw ConfigError("empty modality mask");
  Index rows = -1, cols = 0;
  for (auto m : kAllModalities) {
    if (!mask.has(m)) continue;
    auto it = blocks.find(m);
    if (it == blocks.end()) throw MissingArtifact("feature block '" + std::string(to_string(m)) + "' not available");
    if (rows < 0) rows = it->second.values.rows();
    else if (rows != it->second.values.rows())
      throw DataError("feature block '" + std::string(to_string(m)) + "' has " +
                      std::to_string(it->second.values.rows()) + " rows, expected " + std::to_string(rows));
    cols += it->second.values.cols();
  }
  DesignMatrix dm;
  dm.X.resize(rows, cols);
  Index c0 = 0;
  for (auto m : kAllModalities) {
    if (!mask.has(m)) continue;
    const auto& b = blocks.at(m);
    dm.X.middleCols(c0, b.values.cols()) = b.values;
    for (Index c = 0; c < b.values.cols(); ++c) {
      dm.columns.push_back({m, static_cast<std::size_t>(c)});
      dm.labels.push_back(static_cast<std::size_t>(c) < b.labels.size()
                              ? b.labels[static_cast<std::size_t>(c)]
                              : std::string(to_string(m)) + ":" + std::to_string(c));
    }
    c0 += b.values.cols();
  }
  if (!dm.X.allFinite()) throw DataError("design matrix contains non-finite entries");
  return dm;
}

/// Train-fitted z-scoring of selected columns (population std). Columns with
/// zero train std map to 0.
struct Scaler {
  std::vector<std::size_t> columns;
  Vector mean;
  Vector std;

  static Scaler fit(const Matrix& train, std::vector<std::size_t> cols) {
    Scaler s;
    s.columns = std::move(cols);
    s.mean.resize(static_cast<Index>(s.columns.size()));
    s.std.resize(static_cast<Index>(s.columns.size()));
    const double n = static_cast<double>(train.rows());
    for (std::size_t k = 0; k < s.columns.size(); ++k) {
      const auto col = train.col(static_cast<Index>(s.columns[k]));
      const double mu = n > 0 ? col.sum() / n : 0.0;
      const double var = n > 0 ? (col.array() - mu).square().sum() / n : 0.0;
      s.mean[static_cast<Index>(k)] = mu;
      s.std[static_cast<Index>(k)] = std::sqrt(var);
    }
    return s;
  }

  void apply_in_place(Matrix& X) const {
    for (std::size_t k = 0; k < columns.size(); ++k) {
      auto col = X.col(static_cast<Index>(columns[k]));
      const double sd = std[static_cast<Index>(k)];
      if (sd > 0.0) col = (col.array() - mean[static_cast<Index>(k)]) / sd;
      else col.setZero();
    }
  }

  Matrix apply(Matrix X) const {
    apply_in_place(X);
    return X;
  }
};

struct ScaledPair {
  Matrix train;
  Matrix other;
  Scaler scaler;
};

inline ScaledPair fit_apply_scaler(const Matrix& X_train, const Matrix& X_other,
                                   const std::vector<std::size_t>& continuous_cols) {
  for (auto c : continuous_cols)
    if (static_cast<Index>(c) >= X_train.cols()) throw ConfigError("scaler column out of range");
  ScaledPair out;
  out.scaler = Scaler::fit(X_train, continuous_cols);
  out.train = out.scaler.apply(X_train);
  out.other = out.scaler.apply(X_other);
  return out;
}

}  // namespace reformat
