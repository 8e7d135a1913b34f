#include <gtest/gtest.h>

#include <set>

#include "reformat/splits.hpp"
#include "test_util.hpp"

using namespace reformat;

namespace {

std::set<std::string> families_of(const SignatureSet& s, const std::vector<std::size_t>& idx) {
  std::set<std::string> out;
  for (auto i : idx) out.insert(s[i].parental_family);
  return out;
}

std::size_t size_of_family(const SignatureSet& s, const std::set<std::string>& fams) {
  std::size_t n = 0;
  for (const auto& f : fams) n += s.family_index.at(f).size();
  return n;
}

std::vector<int> random_family_sizes(Rng& rng) {
  std::vector<int> sizes(3 + uniform_index(rng, 10));
  for (auto& s : sizes) s = 1 + static_cast<int>(uniform_index(rng, 30));
  sizes[0] = std::max(sizes[0], 12);
  return sizes;
}

}  // namespace

TEST(SignatureSplit, ExactRatiosOnTenSignatures) {
  Rng rng(1);
  const auto sigs = testutil::make_signatures(rng, {10});
  const auto p = signature_split(sigs, {}, 5);
  EXPECT_EQ(p.train.size(), 6u);
  EXPECT_EQ(p.val.size(), 1u);
  EXPECT_EQ(p.test.size(), 3u);
  EXPECT_EQ(p, signature_split(sigs, {}, 5));
}

TEST(SignatureSplit, SmallFamilyGoesToTrain) {
  Rng rng(2);
  const auto sigs = testutil::make_signatures(rng, {2, 12});
  const auto p = signature_split(sigs, {}, 9);
  for (auto i : sigs.family_index.at("F1000")) EXPECT_TRUE(std::count(p.train.begin(), p.train.end(), i));
}

TEST(SignatureSplit, RatiosMustSumToOne) {
  Rng rng(3);
  const auto sigs = testutil::make_signatures(rng, {12});
  EXPECT_THROW(signature_split(sigs, {0.6, 0.1, 0.2}, 0), ConfigError);
}

TEST(FamilySplit, ThreeEqualFamilies) {
  Rng rng(4);
  const auto sigs = testutil::make_signatures(rng, {10, 10, 10});
  const auto p = parental_family_split(sigs, {}, 17);
  EXPECT_EQ(p.train.size(), 10u);
  EXPECT_EQ(p.val.size(), 10u);
  EXPECT_EQ(p.test.size(), 10u);
  EXPECT_EQ(families_of(sigs, p.train).size(), 1u);
}

TEST(FamilySplit, GreedyLargestFirstHandRun) {
  // Hand-run of the deficit rule on sizes {40,30,20,5,5} with targets
  // (60,10,30): 40→train, 30→test, 20→train, 5→val, 5→val.
  Rng rng(5);
  const auto sigs = testutil::make_signatures(rng, {40, 30, 20, 5, 5});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = parental_family_split(sigs, {}, seed);
    EXPECT_EQ(families_of(sigs, p.train), (std::set<std::string>{"F1000", "F1002"}));
    EXPECT_EQ(families_of(sigs, p.test), (std::set<std::string>{"F1001"}));
    EXPECT_EQ(families_of(sigs, p.val), (std::set<std::string>{"F1003", "F1004"}));
    EXPECT_EQ(p.train.size(), 60u);
    EXPECT_EQ(p.val.size(), 10u);
    EXPECT_EQ(p.test.size(), 30u);
  }
}

TEST(FamilySplit, ShuffledOrderVariesWithSeed) {
  Rng rng(6);
  std::vector<int> sizes;
  for (int f = 0; f < 20; ++f) sizes.push_back(5 + f);
  const auto sigs = testutil::make_signatures(rng, sizes);
  std::set<std::vector<std::size_t>> tests_largest, tests_shuffled;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    tests_largest.insert(parental_family_split(sigs, {}, seed, true).test);
    const auto p = parental_family_split(sigs, {}, seed, false);
    EXPECT_EQ(check_plan(p, sigs), "");
    tests_shuffled.insert(p.test);
  }
  EXPECT_EQ(tests_largest.size(), 1u);  // distinct sizes: the order is fixed
  EXPECT_GT(tests_shuffled.size(), 5u);
}

TEST(FamilySplit, NeedsThreeFamilies) {
  Rng rng(7);
  const auto sigs = testutil::make_signatures(rng, {10, 10});
  EXPECT_THROW(parental_family_split(sigs, {}, 0), ConfigError);
}

TEST(TargetFamilySplit, FortyWithBatchEight) {
  Rng rng(8);
  const auto sigs = testutil::make_signatures(rng, {40, 13, 7});
  const auto p = target_family_split(sigs, "F1000", 8, 0.25, 3);
  EXPECT_EQ(p.val.size(), 8u);
  EXPECT_EQ(p.test.size(), 24u);
  EXPECT_EQ(p.train.size(), 8u + 13u + 7u);
  for (const auto& f : {"F1001", "F1002"})
    for (auto i : sigs.family_index.at(f)) EXPECT_TRUE(std::count(p.train.begin(), p.train.end(), i));
}

TEST(TargetFamilySplit, BatchEqualToFamilyIsError) {
  Rng rng(9);
  const auto sigs = testutil::make_signatures(rng, {10, 5});
  EXPECT_THROW(target_family_split(sigs, "F1000", 10, 0.25, 0), ConfigError);
}

TEST(MakeFolds, SeedsAndDeterminism) {
  Rng rng(10);
  const auto sigs = testutil::make_signatures(rng, {12, 15, 9, 20});
  const auto a = make_folds(Scheme::SIGNATURE, sigs, 10, 100);
  ASSERT_EQ(a.size(), 10u);
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_EQ(a[k].fold_seed, 100 + k);
  EXPECT_EQ(a, make_folds(Scheme::SIGNATURE, sigs, 10, 100));
  EXPECT_EQ(make_folds(Scheme::PARENTAL_FAMILY, sigs, 1, 0).size(), 1u);
  EXPECT_THROW(make_folds(Scheme::SIGNATURE, sigs, 0, 0), ConfigError);
}

TEST(SplitJson, RoundTrip) {
  Rng rng(11);
  const auto sigs = testutil::make_signatures(rng, {20, 6});
  SplitOptions opt;
  opt.target_family = "F1000";
  opt.batch_size = 4;
  const auto p = make_split(Scheme::TARGET_FAMILY, sigs, opt, 2);
  EXPECT_EQ(split_from_json(to_json(p)), p);
}

TEST(SplitProperty, InvariantsOverRandomSeeds) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sigs = testutil::make_signatures(rng, random_family_sizes(rng));
    const std::uint64_t seed = rng();
    for (auto scheme : {Scheme::SIGNATURE, Scheme::PARENTAL_FAMILY, Scheme::TARGET_FAMILY}) {
      SplitOptions opt;
      opt.target_family = largest_family(sigs);
      opt.batch_size = 1 + uniform_index(rng, sigs.family_index.at(opt.target_family).size() - 1);
      const auto p = make_split(scheme, sigs, opt, seed);
      EXPECT_EQ(check_plan(p, sigs), "");
      std::set<std::size_t> all;
      for (const auto* part : {&p.train, &p.val, &p.test}) all.insert(part->begin(), part->end());
      EXPECT_EQ(all.size(), p.train.size() + p.val.size() + p.test.size());
      if (scheme == Scheme::PARENTAL_FAMILY) {
        const auto tr = families_of(sigs, p.train), va = families_of(sigs, p.val), te = families_of(sigs, p.test);
        for (const auto& f : tr) EXPECT_FALSE(va.count(f) || te.count(f));
        for (const auto& f : va) EXPECT_FALSE(te.count(f));
        EXPECT_EQ(size_of_family(sigs, tr) + size_of_family(sigs, va) + size_of_family(sigs, te), sigs.size());
      }
      if (scheme == Scheme::TARGET_FAMILY) {
        std::size_t in_train = 0;
        for (auto i : p.train) in_train += sigs[i].parental_family == opt.target_family;
        EXPECT_EQ(in_train, opt.batch_size);
        for (auto i : p.val) EXPECT_EQ(sigs[i].parental_family, opt.target_family);
        for (auto i : p.test) EXPECT_EQ(sigs[i].parental_family, opt.target_family);
      }
      if (scheme == Scheme::SIGNATURE) {
        // Families of >= 3 members: global sizes within one of target.
        double n = 0;
        std::size_t small = 0;
        for (const auto& [_, m] : sigs.family_index)
          if (m.size() >= 3) n += static_cast<double>(m.size());
          else small += m.size();
        EXPECT_LE(std::abs(static_cast<double>(p.train.size() - small) - 0.6 * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(p.val.size()) - 0.1 * n), 1.0);
        EXPECT_LE(std::abs(static_cast<double>(p.test.size()) - 0.3 * n), 1.0);
      }
    }
  }
}
