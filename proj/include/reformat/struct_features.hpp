#pragma once

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "reformat/common.hpp"
#include "reformat/csv.hpp"
#include "reformat/seq_features.hpp"

namespace reformat {

/// Channels per aligned position: parental xyz, scFv xyz, parental gap, scFv gap.
inline constexpr int kStructChannels = 8;
inline constexpr int kStructPositions = 2 * kAlignedLength;                  // 304
inline constexpr int kStructFeatureDim = kStructPositions * kStructChannels;  // 2432

enum class StructSource { PARENTAL_IGG, SCFV };

inline std::string_view to_string(StructSource s) { return s == StructSource::PARENTAL_IGG ? "PARENTAL_IGG" : "SCFV"; }

inline StructSource parse_struct_source(std::string_view s) {
  if (s == "PARENTAL_IGG" || s == "parental") return StructSource::PARENTAL_IGG;
  if (s == "SCFV" || s == "scfv") return StructSource::SCFV;
  throw DataError("unknown structure source '" + std::string(s) + "'");
}

using Point3 = Eigen::Vector3d;
using Points3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;

struct Residue {
  int aho = 0;
  Point3 xyz = Point3::Zero();
};

/// Cα trace of one variable domain.
struct DomainStructure {
  Chain chain = Chain::VH;
  StructSource source = StructSource::PARENTAL_IGG;
  std::vector<Residue> coords;

  void validate() const {
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const auto& r = coords[i];
      if (r.aho < 1 || r.aho > kAlignedLength) throw DataError("AHo position out of range [1,152]");
      if (i > 0 && r.aho <= coords[i - 1].aho) throw DataError("AHo positions must be strictly increasing");
      if (!r.xyz.allFinite()) throw DataError("non-finite coordinate");
    }
  }
};

/// R·P + t ≈ Q in the least-squares sense.
struct Superposition {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Point3 translation = Point3::Zero();
  double rmsd = 0.0;

  Point3 apply(const Point3& p) const { return rotation * p + translation; }
};

/// Kabsch superposition: SVD of the 3x3 cross-covariance with reflection
/// correction, so the returned rotation is proper.
inline Superposition kabsch_superpose(const Points3& P, const Points3& Q) {
  if (P.rows() != Q.rows()) throw ConfigError("kabsch: point sets differ in size");
  if (P.rows() < 3) throw DataError("kabsch: need at least 3 points");
  if (!P.allFinite() || !Q.allFinite()) throw DataError("kabsch: non-finite coordinates");
  const Eigen::RowVector3d p_mean = P.colwise().mean();
  const Eigen::RowVector3d q_mean = Q.colwise().mean();
  const Points3 Pc = P.rowwise() - p_mean;
  const Points3 Qc = Q.rowwise() - q_mean;
  const Eigen::Matrix3d H = Pc.transpose() * Qc;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Point3 s = svd.singularValues();
  if (!(s[0] > 0.0) || s[1] <= 1e-12 * s[0]) throw NumericalError("kabsch: degenerate cross-covariance (rank < 2)");
  const Eigen::Matrix3d& U = svd.matrixU();
  const Eigen::Matrix3d& V = svd.matrixV();
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  D(2, 2) = (V * U.transpose()).determinant() < 0.0 ? -1.0 : 1.0;

  Superposition out;
  out.rotation = V * D * U.transpose();
  out.translation = q_mean.transpose() - out.rotation * p_mean.transpose();
  double ss = 0.0;
  for (Index i = 0; i < P.rows(); ++i) ss += (out.apply(P.row(i).transpose()) - Q.row(i).transpose()).squaredNorm();
  out.rmsd = std::sqrt(ss / static_cast<double>(P.rows()));
  return out;
}

namespace detail {

/// Coordinates at AHo positions occupied in both domains, in position order.
inline std::pair<Points3, Points3> shared_points(const DomainStructure& a, const DomainStructure& b) {
  std::vector<std::pair<const Residue*, const Residue*>> pairs;
  std::size_t i = 0, j = 0;
  while (i < a.coords.size() && j < b.coords.size()) {
    if (a.coords[i].aho == b.coords[j].aho) pairs.emplace_back(&a.coords[i++], &b.coords[j++]);
    else if (a.coords[i].aho < b.coords[j].aho) ++i;
    else ++j;
  }
  Points3 pa(static_cast<Index>(pairs.size()), 3), pb(static_cast<Index>(pairs.size()), 3);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    pa.row(static_cast<Index>(k)) = pairs[k].first->xyz.transpose();
    pb.row(static_cast<Index>(k)) = pairs[k].second->xyz.transpose();
  }
  return {pa, pb};
}

/// Superposition taking `mobile` onto `reference` over shared positions.
inline Superposition superpose_domains(const DomainStructure& reference, const DomainStructure& mobile) {
  reference.validate();
  mobile.validate();
  auto [ref, mob] = shared_points(reference, mobile);
  if (ref.rows() < 3)
    throw DataError("domain superposition needs >= 3 shared AHo positions, got " + std::to_string(ref.rows()));
  return kabsch_superpose(mob, ref);
}

}  // namespace detail

/// RMSD over AHo positions occupied in both domains after optimal
/// superposition.
inline double domain_rmsd(const DomainStructure& parental, const DomainStructure& scfv) {
  return detail::superpose_domains(parental, scfv).rmsd;
}

struct StructPairFeatures {
  double rmsd_vh = 0.0;
  double rmsd_vl = 0.0;
  /// 304 x 8: rows are VH positions 1..152 then VL positions 1..152.
  Matrix per_residue = Matrix::Zero(kStructPositions, kStructChannels);

  /// Row-major flattening, [chain][position][channel]; length 2432.
  Vector flattened() const {
    Vector out(kStructFeatureDim);
    for (Index r = 0; r < kStructPositions; ++r)
      for (Index c = 0; c < kStructChannels; ++c) out[r * kStructChannels + c] = per_residue(r, c);
    return out;
  }
};

namespace detail {

inline void fill_chain(Matrix& out, Index row0, const DomainStructure& parental, const DomainStructure& scfv,
                       const Superposition& sup) {
  Point3 centroid = Point3::Zero();
  for (const auto& r : parental.coords) centroid += r.xyz;
  if (!parental.coords.empty()) centroid /= static_cast<double>(parental.coords.size());
  for (Index p = 0; p < kAlignedLength; ++p) {
    out(row0 + p, 6) = 1.0;
    out(row0 + p, 7) = 1.0;
  }
  for (const auto& r : parental.coords) {
    const Index row = row0 + r.aho - 1;
    out.block(row, 0, 1, 3) = (r.xyz - centroid).transpose();
    out(row, 6) = 0.0;
  }
  for (const auto& r : scfv.coords) {
    const Index row = row0 + r.aho - 1;
    out.block(row, 3, 1, 3) = (sup.apply(r.xyz) - centroid).transpose();
    out(row, 7) = 0.0;
  }
}

}  // namespace detail

/// Per-chain superposition of the scFv onto the parental frame, centred on
/// the parental centroid, with gap flags for unoccupied positions.
inline StructPairFeatures per_residue_features(const DomainStructure& parental_vh, const DomainStructure& parental_vl,
                                               const DomainStructure& scfv_vh, const DomainStructure& scfv_vl) {
  StructPairFeatures f;
  const auto sup_vh = detail::superpose_domains(parental_vh, scfv_vh);
  const auto sup_vl = detail::superpose_domains(parental_vl, scfv_vl);
  f.rmsd_vh = sup_vh.rmsd;
  f.rmsd_vl = sup_vl.rmsd;
  detail::fill_chain(f.per_residue, 0, parental_vh, scfv_vh, sup_vh);
  detail::fill_chain(f.per_residue, kAlignedLength, parental_vl, scfv_vl, sup_vl);
  return f;
}

// ---- structure files -------------------------------------------------------

/// Both domains of one predicted structure.
struct StructureFile {
  StructSource source = StructSource::PARENTAL_IGG;
  DomainStructure vh;
  DomainStructure vl;
};

/// Lines `chain_id,source,aho_position,x,y,z`; an optional header line is
/// skipped. All lines must share one source.
inline StructureFile read_structure(std::istream& in) {
  StructureFile out;
  out.vh.chain = Chain::VH;
  out.vl.chain = Chain::VL;
  bool have_source = false;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto t = csv::trim(line);
    if (t.empty() || t.rfind("chain_id", 0) == 0) continue;
    auto f = csv::split(t);
    if (f.size() != 6) throw DataError("structure line " + std::to_string(line_no) + ": expected 6 fields");
    const Chain chain = parse_chain(f[0]);
    const StructSource src = parse_struct_source(f[1]);
    if (have_source && src != out.source) throw DataError("structure file mixes sources");
    out.source = src;
    have_source = true;
    Residue r;
    try {
      r.aho = std::stoi(f[2]);
      r.xyz = Point3(std::stod(f[3]), std::stod(f[4]), std::stod(f[5]));
    } catch (const std::exception&) {
      throw DataError("structure line " + std::to_string(line_no) + ": non-numeric field");
    }
    (chain == Chain::VH ? out.vh : out.vl).coords.push_back(r);
  }
  if (!have_source) throw DataError("structure file has no residues");
  out.vh.source = out.vl.source = out.source;
  out.vh.validate();
  out.vl.validate();
  return out;
}

inline StructureFile read_structure_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifact("cannot open structure file " + path);
  return read_structure(in);
}

inline void write_structure(std::ostream& os, const StructureFile& s) {
  os << "chain_id,source,aho_position,x,y,z\n";
  char buf[160];
  for (const auto* d : {&s.vh, &s.vl})
    for (const auto& r : d->coords) {
      std::snprintf(buf, sizeof buf, "%s,%s,%d,%.10f,%.10f,%.10f", std::string(to_string(d->chain)).c_str(),
                    std::string(to_string(s.source)).c_str(), r.aho, r.xyz.x(), r.xyz.y(), r.xyz.z());
      os << buf << '\n';
    }
}

inline StructPairFeatures pair_features(const StructureFile& parental, const StructureFile& scfv) {
  if (parental.source != StructSource::PARENTAL_IGG) throw DataError("first structure must be PARENTAL_IGG");
  if (scfv.source != StructSource::SCFV) throw DataError("second structure must be SCFV");
  return per_residue_features(parental.vh, parental.vl, scfv.vh, scfv.vl);
}

}  // namespace reformat
