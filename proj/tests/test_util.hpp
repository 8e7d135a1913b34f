#pragma once

#include <filesystem>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "reformat/common.hpp"
#include "reformat/dataset.hpp"

namespace testutil {

using reformat::Index;
using reformat::Matrix;
using reformat::Rng;
using reformat::Vector;

inline constexpr const char* kAminoAcids = "ACDEFGHIKLMNPQRSTVWY";

inline std::string random_seq(Rng& rng, std::size_t len) {
  std::string s(len, 'A');
  for (auto& c : s) c = kAminoAcids[reformat::uniform_index(rng, 20)];
  return s;
}

inline Matrix random_matrix(Rng& rng, Index r, Index c) {
  Matrix m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = reformat::normal01(rng);
  return m;
}

inline Vector random_vector(Rng& rng, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = reformat::normal01(rng);
  return v;
}

/// Uniformly random proper rotation from a normalized Gaussian quaternion.
inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(reformat::normal01(rng), reformat::normal01(rng), reformat::normal01(rng),
                       reformat::normal01(rng));
  return q.normalized().toRotationMatrix();
}

/// Signatures with the given family sizes; keys are distinct random sequences.
inline reformat::SignatureSet make_signatures(Rng& rng, const std::vector<int>& family_sizes) {
  std::vector<reformat::ReformatRecord> recs;
  int id = 0;
  for (std::size_t f = 0; f < family_sizes.size(); ++f) {
    const std::string vl = random_seq(rng, 20);
    for (int m = 0; m < family_sizes[f]; ++m) {
      reformat::ReformatRecord r;
      r.record_id = "R" + std::to_string(id++);
      r.vh_seq = random_seq(rng, 24);
      r.vl_seq = vl;
      r.linker_id = "L1";
      r.parental_family = "F" + std::to_string(1000 + f);
      r.campaign = "C";
      r.qc_pass = static_cast<int>(reformat::uniform_index(rng, 2));
      recs.push_back(r);
    }
  }
  return reformat::aggregate_by_signature(recs);
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("reformat_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
