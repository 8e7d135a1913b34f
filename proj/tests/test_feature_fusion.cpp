#include <gtest/gtest.h>

#include "reformat/feature_fusion.hpp"
#include "test_util.hpp"

using namespace reformat;

namespace {

BlockSet random_blocks(Rng& rng, Index n, Index seq = 6, Index st = 4) {
  BlockSet b;
  b[Modality::SEQ] = {Modality::SEQ, testutil::random_matrix(rng, n, seq), {}};
  b[Modality::STRUCT] = {Modality::STRUCT, testutil::random_matrix(rng, n, st), {}};
  b[Modality::RMSD] = {Modality::RMSD, testutil::random_matrix(rng, n, 2), {"rmsd_vh", "rmsd_vl"}};
  b[Modality::BIO] = {Modality::BIO, testutil::random_matrix(rng, n, 4), {}};
  return b;
}

}  // namespace

TEST(ModalityMask, ParseAndContract) {
  const auto m = ModalityMask::parse("struct, seq");
  EXPECT_TRUE(m.has(Modality::SEQ));
  EXPECT_TRUE(m.has(Modality::STRUCT));
  EXPECT_FALSE(m.has(Modality::BIO));
  EXPECT_EQ(m.str(), "seq,struct");
  EXPECT_THROW(ModalityMask::parse(""), ConfigError);
  EXPECT_THROW(ModalityMask::parse("seq,foo"), ConfigError);
  EXPECT_THROW(ModalityMask({}), ConfigError);
  EXPECT_EQ(ablation_masks().size(), 7u);
}

TEST(Assemble, Examples) {
  Rng rng(1);
  auto b = random_blocks(rng, 5);
  EXPECT_EQ(assemble(b, {Modality::SEQ}).X, b[Modality::SEQ].values);
  const auto r = assemble(b, {Modality::RMSD});
  EXPECT_EQ(r.X.cols(), 2);
  EXPECT_EQ(r.labels[1], "rmsd_vl");
  b[Modality::SEQ].values = Matrix::Zero(3, 6394);
  b[Modality::STRUCT].values = Matrix::Zero(3, 2432);
  EXPECT_EQ(assemble(b, {Modality::SEQ, Modality::STRUCT}).X.cols(), 8826);
  b[Modality::STRUCT].values = Matrix::Zero(4, 2432);
  EXPECT_THROW(assemble(b, {Modality::SEQ, Modality::STRUCT}), DataError);
  b.erase(Modality::BIO);
  EXPECT_THROW(assemble(b, {Modality::BIO}), MissingArtifact);
}

TEST(Assemble, OrderAndNonFinite) {
  Rng rng(2);
  auto b = random_blocks(rng, 3);
  const auto dm = assemble(b, {Modality::BIO, Modality::SEQ});
  EXPECT_EQ(dm.columns.front().modality, Modality::SEQ);
  EXPECT_EQ(dm.columns.back().modality, Modality::BIO);
  EXPECT_EQ(dm.continuous_columns().size(), 4u);
  b[Modality::BIO].values(0, 0) = NAN;
  EXPECT_THROW(assemble(b, {Modality::BIO}), DataError);
}

TEST(AssembleProperty, SubsetColumnsKeepOrder) {
  Rng rng(3);
  const auto b = random_blocks(rng, 4);
  auto mask_of = [](unsigned bits) {
    std::string s;
    for (auto m : kAllModalities)
      if (bits & (1u << static_cast<unsigned>(m))) s += std::string(to_string(m)) + ",";
    return ModalityMask::parse(s);
  };
  for (unsigned a = 1; a < 16; ++a)
    for (unsigned c = 1; c < 16; ++c) {
      const auto A = assemble(b, mask_of(a)), U = assemble(b, mask_of(a | c));
      std::size_t k = 0;
      for (const auto& col : A.columns) {
        while (k < U.columns.size() && !(U.columns[k] == col)) ++k;
        ASSERT_LT(k, U.columns.size());
        EXPECT_EQ(U.X.col(static_cast<Index>(k)), A.X.col(static_cast<Index>(&col - &A.columns[0])));
      }
    }
}

TEST(Scaler, Examples) {
  Matrix train(2, 3), other(1, 3);
  train << 1, 5, 1, 3, 5, 0;
  other << 2, 9, 1;
  const auto s = fit_apply_scaler(train, other, {0, 1});
  EXPECT_EQ(s.train(0, 0), -1.0);
  EXPECT_EQ(s.train(1, 0), 1.0);
  EXPECT_EQ(s.train.col(1).norm(), 0.0);
  EXPECT_EQ(s.other(0, 1), 0.0);
  EXPECT_EQ(s.other(0, 0), 0.0);
  EXPECT_EQ(s.train.col(2), train.col(2));  // unscaled column
  EXPECT_THROW(fit_apply_scaler(train, other, {3}), ConfigError);
}

TEST(ScalerProperty, TrainMomentsAfterScaling) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const Index n = 2 + static_cast<Index>(uniform_index(rng, 30));
    Matrix X = 50.0 * testutil::random_matrix(rng, n, 5);
    X.col(2).setConstant(3.0);
    const auto s = fit_apply_scaler(X, X, {0, 1, 2, 3, 4});
    for (Index c = 0; c < 5; ++c) {
      const double mean = s.train.col(c).mean();
      const double sd = std::sqrt((s.train.col(c).array() - mean).square().mean());
      EXPECT_LE(std::abs(mean), 1e-9);
      EXPECT_TRUE(sd == 0.0 || std::abs(sd - 1.0) <= 1e-9);
    }
  }
}
