#include <gtest/gtest.h>

#include <sstream>

#include "oracles.hpp"
#include "reformat/struct_features.hpp"
#include "test_util.hpp"

using namespace reformat;

namespace {

Points3 random_points(Rng& rng, Index n, double scale = 15.0) {
  Points3 P(n, 3);
  for (Index i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) P(i, c) = scale * normal01(rng);
  return P;
}

Points3 transform(const Points3& P, const Eigen::Matrix3d& R, const Point3& t) {
  Points3 Q(P.rows(), 3);
  for (Index i = 0; i < P.rows(); ++i) Q.row(i) = (R * P.row(i).transpose() + t).transpose();
  return Q;
}

DomainStructure domain(Chain chain, const Points3& P, int first_aho = 1) {
  DomainStructure d;
  d.chain = chain;
  for (Index i = 0; i < P.rows(); ++i) d.coords.push_back({first_aho + static_cast<int>(i), P.row(i).transpose()});
  return d;
}

}  // namespace

TEST(Kabsch, RecoversRigidTransform) {
  Rng rng(1);
  for (int t = 0; t < 200; ++t) {
    const Index n = 3 + static_cast<Index>(uniform_index(rng, 158));
    const Points3 P = random_points(rng, n);
    const Eigen::Matrix3d R = testutil::random_rotation(rng);
    const Point3 shift(50 * normal01(rng), 50 * normal01(rng), 50 * normal01(rng));
    const auto s = kabsch_superpose(P, transform(P, R, shift));
    EXPECT_LE(s.rmsd, 1e-8);
    EXPECT_NEAR(s.rotation.determinant(), 1.0, 1e-12);
    EXPECT_LE((s.rotation - R).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Kabsch, ReflectionIsNotUsed) {
  Rng rng(2);
  const Points3 P = random_points(rng, 10);
  Points3 Q = P;
  Q.col(0) *= -1.0;  // mirror image
  const auto s = kabsch_superpose(P, Q);
  EXPECT_NEAR(s.rotation.determinant(), 1.0, 1e-12);
  EXPECT_GT(s.rmsd, 1e-3);
}

TEST(Kabsch, Symmetry) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const Index n = 3 + static_cast<Index>(uniform_index(rng, 40));
    const Points3 P = random_points(rng, n), Q = random_points(rng, n);
    EXPECT_LE(std::abs(kabsch_superpose(P, Q).rmsd - kabsch_superpose(Q, P).rmsd), 1e-9);
  }
}

TEST(Kabsch, MatchesRotationGridOracle) {
  Rng rng(4);
  for (int t = 0; t < 3; ++t) {
    const Points3 P = random_points(rng, 4, 5.0);
    Points3 Q = transform(P, testutil::random_rotation(rng), Point3(1, 2, 3));
    Q += 0.5 * random_points(rng, 4, 1.0);
    const double k = kabsch_superpose(P, Q).rmsd;
    const auto g = oracle::rotation_grid_rmsd(P, Q);
    const double radius = (P.rowwise() - P.colwise().mean()).rowwise().norm().maxCoeff();
    EXPECT_LE(k, g.rmsd + 1e-12);
    EXPECT_LE(g.rmsd - k, 1.5 * g.step * radius);
  }
}

TEST(Kabsch, Errors) {
  Rng rng(5);
  EXPECT_THROW(kabsch_superpose(random_points(rng, 2), random_points(rng, 2)), DataError);
  EXPECT_THROW(kabsch_superpose(random_points(rng, 4), random_points(rng, 5)), ConfigError);
  Points3 line(5, 3);
  for (Index i = 0; i < 5; ++i) line.row(i) << static_cast<double>(i), 0, 0;
  EXPECT_THROW(kabsch_superpose(line, line), NumericalError);
}

TEST(DomainRmsd, UsesSharedPositionsOnly) {
  Rng rng(6);
  const Points3 P = random_points(rng, 20);
  auto parental = domain(Chain::VH, P);
  auto scfv = domain(Chain::VH, transform(P, testutil::random_rotation(rng), Point3(3, 4, 5)));
  scfv.coords.erase(scfv.coords.begin() + 3);  // gap in the scFv
  parental.coords.push_back({100, Point3(999, 999, 999)});
  EXPECT_LE(domain_rmsd(parental, scfv), 1e-8);
  auto tiny = domain(Chain::VH, P.topRows(2), 140);
  EXPECT_THROW(domain_rmsd(parental, tiny), DataError);
}

TEST(PerResidue, CoordinatesFlagsAndFrame) {
  Rng rng(7);
  const Points3 vh = random_points(rng, 30), vl = random_points(rng, 25);
  const auto R = testutil::random_rotation(rng);
  const auto f = per_residue_features(domain(Chain::VH, vh, 3), domain(Chain::VL, vl),
                                      domain(Chain::VH, transform(vh, R, Point3(1, 1, 1)), 3),
                                      domain(Chain::VL, transform(vl, R.transpose(), Point3(0, 2, 0))));
  EXPECT_LE(f.rmsd_vh, 1e-8);
  EXPECT_LE(f.rmsd_vl, 1e-8);
  const Eigen::RowVector3d c = vh.colwise().mean();
  for (Index i = 0; i < 30; ++i) {
    const Index row = 2 + i;  // AHo 3 -> row 2
    EXPECT_LE((f.per_residue.block(row, 0, 1, 3) - (vh.row(i) - c)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE((f.per_residue.block(row, 3, 1, 3) - f.per_residue.block(row, 0, 1, 3)).cwiseAbs().maxCoeff(), 1e-8);
    EXPECT_EQ(f.per_residue(row, 6), 0.0);
  }
  EXPECT_EQ(f.per_residue(0, 6), 1.0);
  EXPECT_EQ(f.per_residue(0, 7), 1.0);
  EXPECT_EQ(f.per_residue.row(0).head(6).norm(), 0.0);
  EXPECT_EQ(f.per_residue(kAlignedLength + 24, 7), 0.0);
  EXPECT_EQ(f.per_residue(kAlignedLength + 25, 7), 1.0);
  const Vector flat = f.flattened();
  ASSERT_EQ(flat.size(), kStructFeatureDim);
  EXPECT_EQ(flat[2 * kStructChannels + 1], f.per_residue(2, 1));
}

TEST(StructureFile, RoundTripAndPairFeatures) {
  Rng rng(8);
  StructureFile parental, scfv;
  parental.vh = domain(Chain::VH, random_points(rng, 12));
  parental.vl = domain(Chain::VL, random_points(rng, 10));
  scfv = parental;
  scfv.source = StructSource::SCFV;
  std::stringstream a, b;
  write_structure(a, parental);
  write_structure(b, scfv);
  const auto pa = read_structure(a), pb = read_structure(b);
  EXPECT_EQ(pa.source, StructSource::PARENTAL_IGG);
  ASSERT_EQ(pa.vh.coords.size(), 12u);
  EXPECT_NEAR(pa.vl.coords[3].xyz.y(), parental.vl.coords[3].xyz.y(), 1e-9);
  const auto f = pair_features(pa, pb);
  EXPECT_LE(f.rmsd_vh, 1e-8);
  EXPECT_THROW(pair_features(pb, pa), DataError);
}

TEST(StructureFile, MalformedInput) {
  std::istringstream mixed("VH,PARENTAL_IGG,1,0,0,0\nVH,SCFV,2,0,0,0\n");
  EXPECT_THROW(read_structure(mixed), DataError);
  std::istringstream order("VH,SCFV,2,0,0,0\nVH,SCFV,1,0,0,0\n");
  EXPECT_THROW(read_structure(order), DataError);
  std::istringstream empty("chain_id,source,aho_position,x,y,z\n");
  EXPECT_THROW(read_structure(empty), DataError);
  EXPECT_THROW(read_structure_file("/nonexistent/structure.csv"), MissingArtifact);
}
