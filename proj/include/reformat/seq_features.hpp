#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "reformat/common.hpp"
#include "reformat/csv.hpp"
#include "reformat/dataset.hpp"

namespace reformat {

/// AHo-aligned length used for both variable domains.
inline constexpr int kAlignedLength = 152;
/// 20 amino acids plus an explicit gap symbol.
inline constexpr int kAlphabetSize = 21;
inline constexpr std::uint8_t kGap = 20;
/// One-hot width of the two aligned chains.
inline constexpr int kChainOneHotDim = 2 * kAlignedLength * kAlphabetSize;  // 6384

enum class Chain { VH, VL };

inline std::string_view to_string(Chain c) { return c == Chain::VH ? "VH" : "VL"; }

inline Chain parse_chain(std::string_view s) {
  if (s == "VH") return Chain::VH;
  if (s == "VL") return Chain::VL;
  throw DataError("unknown chain id '" + std::string(s) + "'");
}

inline std::uint8_t residue_code(char aa) {
  auto pos = kAminoAcids.find(aa);
  if (pos == std::string_view::npos) throw DataError(std::string("invalid residue '") + aa + "'");
  return static_cast<std::uint8_t>(pos);
}

struct AlignedChain {
  std::array<std::uint8_t, kAlignedLength> positions{};
  int source_len = 0;

  bool operator==(const AlignedChain&) const = default;

  int non_gap_count() const {
    return static_cast<int>(std::count_if(positions.begin(), positions.end(), [](auto c) { return c != kGap; }));
  }
};

/// (residue_index, aho_position) pairs, both 1-based.
struct PositionMap {
  std::vector<std::pair<int, int>> assignments;
};

/// Place residues at their AHo positions, or left-justify when no map is
/// given. Unoccupied slots are GAP.
inline AlignedChain align_chain(std::string_view seq, const std::optional<PositionMap>& map = std::nullopt) {
  if (seq.size() > static_cast<std::size_t>(kAlignedLength))
    throw DataError("sequence length " + std::to_string(seq.size()) + " exceeds aligned length 152");
  AlignedChain out;
  out.positions.fill(kGap);
  out.source_len = static_cast<int>(seq.size());
  if (!map) {
    for (std::size_t i = 0; i < seq.size(); ++i) out.positions[i] = residue_code(seq[i]);
    return out;
  }
  const auto& a = map->assignments;
  if (a.size() != seq.size())
    throw DataError("position map covers " + std::to_string(a.size()) + " residues, sequence has " +
                    std::to_string(seq.size()));
  std::array<bool, kAlignedLength> used{};
  for (std::size_t k = 0; k < a.size(); ++k) {
    const auto [res, aho] = a[k];
    if (res < 1 || res > static_cast<int>(seq.size())) throw DataError("position map residue index out of range");
    if (aho < 1 || aho > kAlignedLength) throw DataError("position map AHo position out of range [1,152]");
    if (used[aho - 1]) throw DataError("position map collision at AHo position " + std::to_string(aho));
    if (k > 0 && (res <= a[k - 1].first || aho <= a[k - 1].second))
      throw DataError("position map must be strictly increasing in both coordinates");
    used[aho - 1] = true;
    out.positions[aho - 1] = residue_code(seq[res - 1]);
  }
  return out;
}

/// Sorted, fixed linker vocabulary.
class LinkerVocab {
 public:
  LinkerVocab() = default;
  explicit LinkerVocab(std::vector<std::string> ids) : ids_(std::move(ids)) {
    std::sort(ids_.begin(), ids_.end());
    ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
  }

  static LinkerVocab from(const SignatureSet& sigs) {
    std::vector<std::string> ids;
    for (const auto& s : sigs.signatures) ids.push_back(s.key.linker);
    return LinkerVocab(std::move(ids));
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }

  std::size_t index(const std::string& id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw DataError("linker '" + id + "' not in vocabulary");
    return static_cast<std::size_t>(it - ids_.begin());
  }

 private:
  std::vector<std::string> ids_;
};

inline std::size_t one_hot_dim(const LinkerVocab& vocab) { return kChainOneHotDim + 2 + vocab.size(); }

/// Layout: [VH 152x21][VL 152x21][orientation x2][linker x|vocab|].
inline Vector one_hot_features(const AlignedChain& vh, const AlignedChain& vl, Orientation orientation,
                               const std::string& linker_id, const LinkerVocab& vocab) {
  const std::size_t linker = vocab.index(linker_id);
  Vector x = Vector::Zero(static_cast<Index>(one_hot_dim(vocab)));
  for (int p = 0; p < kAlignedLength; ++p) {
    x[p * kAlphabetSize + vh.positions[static_cast<std::size_t>(p)]] = 1.0;
    x[(kAlignedLength + p) * kAlphabetSize + vl.positions[static_cast<std::size_t>(p)]] = 1.0;
  }
  x[kChainOneHotDim + (orientation == Orientation::VH_VL ? 0 : 1)] = 1.0;
  x[kChainOneHotDim + 2 + static_cast<Index>(linker)] = 1.0;
  return x;
}

inline std::vector<std::string> one_hot_labels(const LinkerVocab& vocab) {
  std::vector<std::string> labels;
  labels.reserve(one_hot_dim(vocab));
  for (auto chain : {"VH", "VL"})
    for (int p = 1; p <= kAlignedLength; ++p)
      for (int a = 0; a < kAlphabetSize; ++a)
        labels.push_back(std::string(chain) + ":" + std::to_string(p) + ":" +
                         (a == kGap ? std::string("-") : std::string(1, kAminoAcids[static_cast<std::size_t>(a)])));
  labels.push_back("orientation:VH_VL");
  labels.push_back("orientation:VL_VH");
  for (const auto& id : vocab.ids()) labels.push_back("linker:" + id);
  return labels;
}

// ---- embeddings ------------------------------------------------------------

struct EmbeddingMatrix {
  Chain chain = Chain::VH;
  Matrix values;  // residues x dim
};

/// Column-wise mean over residues.
inline Vector pool_embedding(const EmbeddingMatrix& m) {
  if (m.values.rows() < 1 || m.values.cols() < 1) throw DataError("empty embedding matrix");
  if (!m.values.allFinite()) throw DataError("embedding contains non-finite values");
  return m.values.colwise().sum().transpose() / static_cast<double>(m.values.rows());
}

namespace detail {
inline constexpr char kEmbeddingMagic[6] = {'R', 'E', 'M', 'B', '1', '\0'};
}

/// Text form: a `chain_id,rows,cols` line (optionally preceded by that literal
/// header) followed by row-major values separated by commas or whitespace.
inline void write_embedding_text(std::ostream& os, const EmbeddingMatrix& m) {
  os << "chain_id,rows,cols\n" << to_string(m.chain) << ',' << m.values.rows() << ',' << m.values.cols() << '\n';
  char buf[40];
  for (Index r = 0; r < m.values.rows(); ++r) {
    for (Index c = 0; c < m.values.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", m.values(r, c));
      os << (c ? "," : "") << buf;
    }
    os << '\n';
  }
}

inline void write_embedding_binary(std::ostream& os, const EmbeddingMatrix& m) {
  os.write(detail::kEmbeddingMagic, sizeof detail::kEmbeddingMagic);
  const std::uint8_t chain = m.chain == Chain::VH ? 0 : 1;
  const auto rows = static_cast<std::uint32_t>(m.values.rows());
  const auto cols = static_cast<std::uint32_t>(m.values.cols());
  os.write(reinterpret_cast<const char*>(&chain), 1);
  os.write(reinterpret_cast<const char*>(&rows), 4);
  os.write(reinterpret_cast<const char*>(&cols), 4);
  for (std::uint32_t r = 0; r < rows; ++r)
    for (std::uint32_t c = 0; c < cols; ++c) {
      const double v = m.values(r, c);
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
}

/// Reads either the binary or the text form (detected by magic bytes).
inline EmbeddingMatrix read_embedding(std::istream& in) {
  char magic[sizeof detail::kEmbeddingMagic] = {};
  in.read(magic, sizeof magic);
  EmbeddingMatrix m;
  if (in.gcount() == sizeof magic && std::memcmp(magic, detail::kEmbeddingMagic, sizeof magic) == 0) {
    std::uint8_t chain = 0;
    std::uint32_t rows = 0, cols = 0;
    in.read(reinterpret_cast<char*>(&chain), 1);
    in.read(reinterpret_cast<char*>(&rows), 4);
    in.read(reinterpret_cast<char*>(&cols), 4);
    if (!in) throw DataError("truncated embedding header");
    m.chain = chain == 0 ? Chain::VH : Chain::VL;
    m.values.resize(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        double v = 0;
        in.read(reinterpret_cast<char*>(&v), sizeof v);
        m.values(r, c) = v;
      }
    if (!in) throw DataError("truncated embedding values");
    return m;
  }
  in.clear();
  in.seekg(0);
  std::string line;
  std::vector<std::string> head;
  while (std::getline(in, line)) {
    auto t = csv::trim(line);
    if (t.empty() || t == "chain_id,rows,cols") continue;
    head = csv::split(t);
    break;
  }
  if (head.size() != 3) throw DataError("embedding header must be chain_id,rows,cols");
  m.chain = parse_chain(csv::trim(head[0]));
  const long rows = std::stol(head[1]), cols = std::stol(head[2]);
  if (rows < 0 || cols < 0) throw DataError("negative embedding shape");
  m.values.resize(rows, cols);
  std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (auto& ch : rest)
    if (ch == ',') ch = ' ';
  std::istringstream vals(rest);
  for (long r = 0; r < rows; ++r)
    for (long c = 0; c < cols; ++c)
      if (!(vals >> m.values(r, c))) throw DataError("embedding has fewer values than rows*cols");
  double extra;
  if (vals >> extra) throw DataError("embedding has more values than rows*cols");
  return m;
}

inline EmbeddingMatrix read_embedding_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open embedding file " + path);
  return read_embedding(in);
}

/// Two integer columns per line: residue_index, aho_position. A non-numeric
/// first line is treated as a header.
inline PositionMap read_position_map(std::istream& in) {
  PositionMap map;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    auto t = csv::trim(line);
    if (t.empty()) continue;
    auto f = csv::split(t);
    if (f.size() != 2) throw DataError("position map lines need two columns");
    try {
      map.assignments.emplace_back(std::stoi(f[0]), std::stoi(f[1]));
    } catch (const std::exception&) {
      if (!first) throw DataError("non-integer entry in position map: '" + t + "'");
    }
    first = false;
  }
  return map;
}

}  // namespace reformat
