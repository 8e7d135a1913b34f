#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "reformat/seq_features.hpp"
#include "test_util.hpp"

using namespace reformat;

TEST(AlignChain, FullLengthHasNoGaps) {
  Rng rng(1);
  const auto a = align_chain(testutil::random_seq(rng, 152));
  EXPECT_EQ(a.non_gap_count(), 152);
  EXPECT_EQ(a.source_len, 152);
}

TEST(AlignChain, MapPlacesResidues) {
  const auto a = align_chain("ACD", PositionMap{{{1, 1}, {2, 5}, {3, 6}}});
  EXPECT_EQ(a.positions[0], residue_code('A'));
  EXPECT_EQ(a.positions[4], residue_code('C'));
  EXPECT_EQ(a.positions[5], residue_code('D'));
  for (int p : {1, 2, 3}) EXPECT_EQ(a.positions[p], kGap);
  for (int p = 6; p < 152; ++p) EXPECT_EQ(a.positions[p], kGap);
  EXPECT_EQ(a.non_gap_count(), a.source_len);
}

TEST(AlignChain, WithoutMapLeftJustifies) {
  const auto a = align_chain("EVQ");
  EXPECT_EQ(a.positions[2], residue_code('Q'));
  for (int p = 3; p < 152; ++p) EXPECT_EQ(a.positions[p], kGap);
}

TEST(AlignChain, Errors) {
  EXPECT_THROW(align_chain("AC", PositionMap{{{1, 4}, {2, 4}}}), DataError);
  EXPECT_THROW(align_chain(std::string(153, 'A')), DataError);
  EXPECT_THROW(align_chain("AC", PositionMap{{{1, 0}, {2, 4}}}), DataError);
  EXPECT_THROW(align_chain("AC", PositionMap{{{2, 3}, {1, 4}}}), DataError);
}

TEST(OneHot, DimensionWithEightLinkers) {
  std::vector<std::string> ids;
  for (int i = 0; i < 8; ++i) ids.push_back("L" + std::to_string(i));
  const LinkerVocab vocab(ids);
  EXPECT_EQ(one_hot_dim(vocab), 2u * 152u * 21u + 2u + 8u);
  EXPECT_EQ(one_hot_dim(vocab), 6394u);
  const auto x = one_hot_features(align_chain("EVQ"), align_chain("DIQ"), Orientation::VH_VL, "L3", vocab);
  EXPECT_EQ(x.size(), 6394);
  EXPECT_EQ(one_hot_labels(vocab).size(), 6394u);
}

TEST(OneHot, AllGapChainsAndOrientationBlocks) {
  const LinkerVocab vocab({"A", "B"});
  const auto x = one_hot_features(align_chain(""), align_chain(""), Orientation::VL_VH, "B", vocab);
  for (int b = 0; b < 2 * 152; ++b) EXPECT_EQ(x[b * 21 + kGap], 1.0);
  EXPECT_EQ(x[kChainOneHotDim], 0.0);
  EXPECT_EQ(x[kChainOneHotDim + 1], 1.0);
  EXPECT_EQ(x[kChainOneHotDim + 2], 0.0);
  EXPECT_EQ(x[kChainOneHotDim + 3], 1.0);
  const auto y = one_hot_features(align_chain(""), align_chain(""), Orientation::VH_VL, "A", vocab);
  EXPECT_EQ(y[kChainOneHotDim], 1.0);
  EXPECT_EQ(y[kChainOneHotDim + 1], 0.0);
}

TEST(OneHot, UnknownLinkerIsError) {
  const LinkerVocab vocab({"A"});
  EXPECT_THROW(one_hot_features(align_chain("E"), align_chain("D"), Orientation::VH_VL, "Z", vocab), DataError);
}

TEST(OneHotProperty, BlocksAreOneHotAndEncodingInjective) {
  Rng rng(2);
  const LinkerVocab vocab({"L1", "L2", "L3"});
  std::set<std::vector<double>> seen;
  std::set<std::string> inputs;
  for (int t = 0; t < 300; ++t) {
    const auto vh = testutil::random_seq(rng, 1 + uniform_index(rng, 4));
    const auto vl = testutil::random_seq(rng, 1 + uniform_index(rng, 4));
    const auto o = uniform_index(rng, 2) ? Orientation::VH_VL : Orientation::VL_VH;
    const auto l = vocab.ids()[uniform_index(rng, 3)];
    const auto x = one_hot_features(align_chain(vh), align_chain(vl), o, l, vocab);
    for (int b = 0; b < 2 * 152; ++b) EXPECT_EQ(x.segment(b * 21, 21).sum(), 1.0);
    EXPECT_EQ(x.segment(kChainOneHotDim, 2).sum(), 1.0);
    EXPECT_EQ(x.tail(3).sum(), 1.0);
    inputs.insert(vh + "|" + vl + "|" + std::string(to_string(o)) + "|" + l);
    seen.insert(std::vector<double>(x.data(), x.data() + x.size()));
  }
  EXPECT_EQ(seen.size(), inputs.size());
}

TEST(PoolEmbedding, Examples) {
  EmbeddingMatrix m;
  m.values.resize(2, 2);
  m.values << 1, 3, 3, 5;
  const Vector p = pool_embedding(m);
  EXPECT_EQ(p[0], 2.0);
  EXPECT_EQ(p[1], 4.0);
  m.values.resize(1, 3);
  m.values << 1.5, -2, 7;
  EXPECT_EQ(pool_embedding(m), Vector(m.values.row(0).transpose()));
  m.values.resize(0, 3);
  EXPECT_THROW(pool_embedding(m), DataError);
  m.values = Matrix::Constant(2, 2, std::numeric_limits<double>::quiet_NaN());
  EXPECT_THROW(pool_embedding(m), DataError);
}

TEST(PoolEmbedding, MatchesSummationOracleAndIsPermutationInvariant) {
  Rng rng(3);
  EmbeddingMatrix m;
  m.values = testutil::random_matrix(rng, 100, 480);
  const Vector p = pool_embedding(m);
  for (Index c = 0; c < 480; ++c) {
    long double s = 0;
    for (Index r = 0; r < 100; ++r) s += m.values(r, c);
    EXPECT_NEAR(p[c], static_cast<double>(s / 100.0L), 1e-12);
  }
  std::vector<Index> perm(100);
  for (Index i = 0; i < 100; ++i) perm[static_cast<std::size_t>(i)] = i;
  shuffle_in_place(perm, rng);
  EmbeddingMatrix q;
  q.values = m.values(perm, Eigen::all);
  EXPECT_LE((pool_embedding(q) - p).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EmbeddingFiles, TextAndBinaryRoundTrip) {
  Rng rng(4);
  EmbeddingMatrix m;
  m.chain = Chain::VL;
  m.values = testutil::random_matrix(rng, 7, 5);
  std::stringstream t, b;
  write_embedding_text(t, m);
  write_embedding_binary(b, m);
  const auto mt = read_embedding(t);
  const auto mb = read_embedding(b);
  EXPECT_EQ(mt.chain, Chain::VL);
  EXPECT_EQ(mt.values, m.values);
  EXPECT_EQ(mb.values, m.values);
  std::istringstream short_file("VH,2,2\n1 2 3\n");
  EXPECT_THROW(read_embedding(short_file), DataError);
}

TEST(PositionMapFile, ParsesWithHeader) {
  std::istringstream in("residue_index,aho_position\n1,1\n2,5\n3,6\n");
  const auto m = read_position_map(in);
  ASSERT_EQ(m.assignments.size(), 3u);
  EXPECT_EQ(m.assignments[1], (std::pair<int, int>{2, 5}));
}
