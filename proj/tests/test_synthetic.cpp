#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "reformat/evaluation.hpp"
#include "reformat/synthetic.hpp"
#include "test_util.hpp"

using namespace reformat;
namespace fs = std::filesystem;

namespace {

GenConfig small(std::uint64_t seed) {
  GenConfig c;
  c.n_families = 8;
  c.per_family_min = 5;
  c.per_family_max = 12;
  c.embedding_dim = 4;
  c.seed = seed;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  return out;
}

}  // namespace

TEST(Generate, SameSeedGivesIdenticalFiles) {
  const auto root = testutil::temp_dir("synth_det");
  write_dataset(generate(small(5)), root / "a");
  write_dataset(generate(small(5)), root / "b");
  write_dataset(generate(small(6)), root / "c");
  const auto a = tree(root / "a");
  EXPECT_GT(a.size(), 3u);
  EXPECT_EQ(a, tree(root / "b"));
  EXPECT_NE(a.at("records.csv"), tree(root / "c").at("records.csv"));
  fs::remove_all(root);
}

TEST(Generate, ZeroMutationRateSharesFamilySequences) {
  auto cfg = small(7);
  cfg.mutation_rate = 0.0;
  const auto ds = generate(cfg);
  std::map<std::string, std::pair<std::string, std::string>> first;
  std::set<SigKey> keys;
  for (const auto& s : ds.signatures) {
    const auto [it, fresh] = first.emplace(s.family, std::make_pair(s.key.vh, s.key.vl));
    if (!fresh) {
      EXPECT_EQ(s.key.vh, it->second.first);
      EXPECT_EQ(s.key.vl, it->second.second);
    }
    EXPECT_TRUE(keys.insert(s.key).second);
  }
  // Members that differ only by linker or orientation remain distinct signatures.
  EXPECT_GT(ds.signatures.size(), first.size());
}

TEST(Generate, FailRateMatchesTarget) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    GenConfig c;
    c.n_families = 60;
    c.seed = seed;
    const auto ds = generate(c);
    ASSERT_GE(ds.signatures.size(), 1000u);
    double fail = 0;
    for (const auto& s : ds.signatures) fail += s.qc_pass == 0;
    EXPECT_NEAR(fail / static_cast<double>(ds.signatures.size()), 0.409, 0.03) << "seed " << seed;
  }
}

TEST(Generate, ManifestRecomputesEveryLabel) {
  auto cfg = small(11);
  cfg.n_families = 15;
  const auto ds = generate(cfg);
  const auto& man = ds.manifest;
  const auto mc = gen_config_from_json(man.at("config"));
  std::map<std::string, std::pair<double, int>> fam;
  for (const auto& f : man.at("families")) fam[f.at("family")] = {f.at("base"), f.at("sign")};
  const double dm = man.at("deform_mean"), dsd = man.at("deform_sd"), psd = man.at("psh_sd");
  const double orient = man.at("orientation_effect"), thr = man.at("latent_threshold");
  const double zm = man.at("latent_mean"), zsd = man.at("latent_sd");
  const auto& sigs = man.at("signatures");
  ASSERT_EQ(sigs.size(), ds.signatures.size());
  for (std::size_t i = 0; i < sigs.size(); ++i) {
    const auto& s = sigs[i];
    const auto [base, sign] = fam.at(s.at("family"));
    const double orient_term = s.at("orientation") == "VH_VL" ? orient : -orient;
    const double z = base + mc.fine_signal_weight * s.at("a").get<double>() +
                     mc.sequence_signal_weight * s.at("seq_term").get<double>() +
                     man.at("linker_effects").at(s.at("linker").get<std::string>()).get<double>() + orient_term +
                     sign * mc.structure_signal_weight * (s.at("d").get<double>() - dm) / dsd +
                     mc.bio_signal_weight * s.at("psh").get<double>() / psd + mc.noise_std * s.at("noise").get<double>();
    EXPECT_NEAR(z, s.at("latent").get<double>(), 1e-12);
    EXPECT_EQ(z > thr ? 1 : 0, ds.signatures[i].qc_pass);
    EXPECT_EQ(s.at("qc_pass"), ds.signatures[i].qc_pass);
    const double y = std::clamp(std::exp(man.at("yield_log_mean").get<double>() +
                                         man.at("yield_log_std").get<double>() * (z - zm) / zsd),
                                3.5, 513.58);
    EXPECT_NEAR(y, ds.signatures[i].yield, 1e-9 * y);
    EXPECT_EQ(s.at("sig_key"), ds.signatures[i].key.str());
  }
}

TEST(Generate, SignFlipsAttenuatePooledCorrelation) {
  GenConfig c;
  c.n_families = 40;
  c.per_family_min = 20;
  c.per_family_max = 30;
  c.structure_signal_weight = 1.5;
  c.family_sign_flip_prob = 0.5;
  c.embedding_dim = 0;
  c.seed = 13;
  const auto ds = generate(c);
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by_fam;
  std::vector<double> d_all, y_all;
  for (const auto& s : ds.manifest.at("signatures")) {
    auto& [d, y] = by_fam[s.at("family")];
    d.push_back(s.at("d"));
    y.push_back(s.at("yield"));
    d_all.push_back(d.back());
    y_all.push_back(y.back());
  }
  double mean_abs = 0;
  for (const auto& [name, dy] : by_fam) mean_abs += std::abs(pearson(to_eigen(dy.first), to_eigen(dy.second)));
  mean_abs /= static_cast<double>(by_fam.size());
  const double pooled = std::abs(pearson(to_eigen(d_all), to_eigen(y_all)));
  EXPECT_LT(pooled, mean_abs);
}

TEST(GenConfig, ValidationAndJson) {
  GenConfig c;
  c.per_family_min = 2;
  EXPECT_THROW(generate(c), ConfigError);
  c = GenConfig{};
  c.mutation_rate = 1.2;
  EXPECT_THROW(c.validate(), ConfigError);
  c = GenConfig{};
  c.target_fail_rate = -0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = GenConfig{};
  c.per_family_max = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small(99);
  c.noise_std = 0.7;
  EXPECT_EQ(to_json(gen_config_from_json(to_json(c))), to_json(c));
  EXPECT_THROW(gen_config_from_json({{"per_family", {3}}}), ConfigError);
}

TEST(StatsReport, CountsAndClassBalance) {
  const auto ds = generate(small(21));
  const auto sigs = synthetic_signatures(ds);
  const auto st = stats_report(sigs);
  EXPECT_EQ(st.n, ds.signatures.size());
  EXPECT_EQ(st.n, ds.manifest.at("signatures").size());
  EXPECT_EQ(st.n_records, ds.records.size());
  EXPECT_EQ(st.n_families, 8u);
  std::size_t pass = 0;
  for (const auto& s : ds.signatures) pass += static_cast<std::size_t>(s.qc_pass);
  ASSERT_TRUE(st.qc_pass_fraction.has_value());
  EXPECT_EQ(*st.qc_pass_fraction, static_cast<double>(pass) / static_cast<double>(ds.signatures.size()));
  const auto& y = st.targets.at("yield");
  EXPECT_GE(y.min, 3.5);
  EXPECT_LE(y.max, 513.58);
  EXPECT_LE(y.min, y.mean);
  const auto text = format_stats(st);
  EXPECT_NE(text.find("signatures: " + std::to_string(st.n)), std::string::npos);
  EXPECT_NE(text.find("% fail"), std::string::npos);
  EXPECT_EQ(to_json(st).at("n"), st.n);
}

TEST(StatsReport, EmptyDatasetFails) { EXPECT_THROW(stats_report(SignatureSet{}), DataError); }
