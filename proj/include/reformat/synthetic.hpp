#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "reformat/bio_features.hpp"
#include "reformat/common.hpp"
#include "reformat/dataset.hpp"
#include "reformat/seq_features.hpp"
#include "reformat/struct_features.hpp"

namespace reformat {

/// Generator settings. The latent yield score of signature i in family f is
///   z = base_f + w_fine·a_i + w_seq·s_i + linker + orientation
///       + sign_f·w_struct·d_i + w_bio·psh_i + noise,
/// where a_i drives displacements at fixed hotspot residues, d_i is the
/// magnitude of a smooth global deformation (and so of the RMSD), and s_i and
/// a_i are family-specific functions of which variant sites are mutated.
struct GenConfig {
  int n_families = 50;
  int per_family_min = 10;
  int per_family_max = 50;
  double mutation_rate = 0.3;  // probability that each variant site is mutated
  int variant_sites = 12;
  double target_fail_rate = 0.409;
  double structure_signal_weight = 0.6;
  double fine_signal_weight = 1.0;
  double sequence_signal_weight = 0.5;
  double bio_signal_weight = 0.6;
  double family_offset_std = 1.0;
  double family_sign_flip_prob = 0.4;
  double noise_std = 0.4;
  double replicate_fraction = 0.05;
  double bio_missing_rate = 0.03;
  int n_linkers = 8;
  int embedding_dim = 8;  // 0 disables embeddings
  std::uint64_t seed = 0;

  void validate() const {
    auto rate = [](double r, const char* name) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(std::string(name) + " must lie in [0,1]");
    };
    rate(mutation_rate, "mutation_rate");
    rate(target_fail_rate, "target_fail_rate");
    rate(family_sign_flip_prob, "family_sign_flip_prob");
    rate(replicate_fraction, "replicate_fraction");
    rate(bio_missing_rate, "bio_missing_rate");
    if (n_families < 1) throw ConfigError("n_families must be >= 1");
    if (per_family_min < 3) throw ConfigError("per_family min must be >= 3");
    if (per_family_max < per_family_min) throw ConfigError("per_family max must be >= min");
    if (variant_sites < 0 || variant_sites > 60) throw ConfigError("variant_sites must be in [0,60]");
    if (n_linkers < 1) throw ConfigError("n_linkers must be >= 1");
    if (embedding_dim < 0) throw ConfigError("embedding_dim must be >= 0");
    if (!(noise_std >= 0.0) || !(family_offset_std >= 0.0)) throw ConfigError("standard deviations must be >= 0");
  }
};

inline nlohmann::json to_json(const GenConfig& c) {
  return {{"n_families", c.n_families},
          {"per_family", {c.per_family_min, c.per_family_max}},
          {"mutation_rate", c.mutation_rate},
          {"variant_sites", c.variant_sites},
          {"target_fail_rate", c.target_fail_rate},
          {"structure_signal_weight", c.structure_signal_weight},
          {"fine_signal_weight", c.fine_signal_weight},
          {"sequence_signal_weight", c.sequence_signal_weight},
          {"bio_signal_weight", c.bio_signal_weight},
          {"family_offset_std", c.family_offset_std},
          {"family_sign_flip_prob", c.family_sign_flip_prob},
          {"noise_std", c.noise_std},
          {"replicate_fraction", c.replicate_fraction},
          {"bio_missing_rate", c.bio_missing_rate},
          {"n_linkers", c.n_linkers},
          {"embedding_dim", c.embedding_dim},
          {"seed", c.seed}};
}

inline GenConfig gen_config_from_json(const nlohmann::json& j) {
  GenConfig c;
  c.n_families = j.value("n_families", c.n_families);
  if (j.contains("per_family")) {
    const auto pf = j.at("per_family").get<std::vector<int>>();
    if (pf.size() != 2) throw ConfigError("per_family needs [min, max]");
    c.per_family_min = pf[0];
    c.per_family_max = pf[1];
  }
  c.mutation_rate = j.value("mutation_rate", c.mutation_rate);
  c.variant_sites = j.value("variant_sites", c.variant_sites);
  c.target_fail_rate = j.value("target_fail_rate", c.target_fail_rate);
  c.structure_signal_weight = j.value("structure_signal_weight", c.structure_signal_weight);
  c.fine_signal_weight = j.value("fine_signal_weight", c.fine_signal_weight);
  c.sequence_signal_weight = j.value("sequence_signal_weight", c.sequence_signal_weight);
  c.bio_signal_weight = j.value("bio_signal_weight", c.bio_signal_weight);
  c.family_offset_std = j.value("family_offset_std", c.family_offset_std);
  c.family_sign_flip_prob = j.value("family_sign_flip_prob", c.family_sign_flip_prob);
  c.noise_std = j.value("noise_std", c.noise_std);
  c.replicate_fraction = j.value("replicate_fraction", c.replicate_fraction);
  c.bio_missing_rate = j.value("bio_missing_rate", c.bio_missing_rate);
  c.n_linkers = j.value("n_linkers", c.n_linkers);
  c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// Everything generated for one signature.
struct SyntheticSignature {
  SigKey key;
  std::string family;
  StructureFile parental;
  StructureFile scfv;
  BiophysRow biophys;
  std::optional<EmbeddingMatrix> vh_embedding, vl_embedding;
  double latent = 0.0;
  double yield = 0.0;
  double sec = 0.0;
  int qc_pass = 0;
};

struct SyntheticDataset {
  std::vector<ReformatRecord> records;
  std::vector<SyntheticSignature> signatures;  // in generation order
  nlohmann::json manifest;
};

namespace detail {

inline constexpr double kYieldLogMean = 2.79;
inline constexpr double kYieldLogStd = 1.14;
inline constexpr double kYieldMin = 3.5;
inline constexpr double kYieldMax = 513.58;
inline constexpr double kHotspotAmplitude = 0.8;  // Å per unit of a_i
inline constexpr double kCoordNoise = 0.15;
inline constexpr double kDeformMin = 0.3, kDeformMax = 2.0;
inline constexpr std::array<int, 6> kVhHotspots = {10, 25, 40, 55, 70, 85};
inline constexpr std::array<int, 4> kVlHotspots = {15, 35, 55, 75};

inline std::string random_sequence(std::size_t len, Rng& rng) {
  std::string s(len, 'A');
  for (auto& c : s) c = kAminoAcids[uniform_index(rng, kAminoAcids.size())];
  return s;
}

inline Point3 random_unit(Rng& rng) {
  Point3 v(normal01(rng), normal01(rng), normal01(rng));
  const double n = v.norm();
  return n > 0 ? Point3(v / n) : Point3(1, 0, 0);
}

inline Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(normal01(rng), normal01(rng), normal01(rng), normal01(rng));
  q.normalize();
  return q.toRotationMatrix();
}

/// Helix-like Cα curve with 3.8 Å steps, offset per chain.
inline Point3 template_point(Chain chain, int aho) {
  const double t = static_cast<double>(aho);
  const double off = chain == Chain::VH ? 0.0 : 25.0;
  return {off + 2.3 * std::cos(1.745 * t), 2.3 * std::sin(1.745 * t), 1.5 * t};
}

/// Low-frequency displacement field over AHo positions.
struct SmoothField {
  std::array<std::array<double, 3>, 3> amp{}, phase{};

  static SmoothField random(Rng& rng) {
    SmoothField f;
    for (int a = 0; a < 3; ++a)
      for (int k = 0; k < 3; ++k) {
        f.amp[a][k] = normal01(rng) / (k + 1.0);
        f.phase[a][k] = 2.0 * M_PI * uniform01(rng);
      }
    return f;
  }

  Point3 at(int aho) const {
    Point3 p;
    for (int a = 0; a < 3; ++a) {
      double v = 0;
      for (int k = 0; k < 3; ++k)
        v += amp[a][k] * std::sin(M_PI * (k + 1.0) * aho / kAlignedLength + phase[a][k]);
      p[a] = v;
    }
    return p;
  }
};

inline double field_rms(const SmoothField& f, int len) {
  double ss = 0;
  for (int p = 1; p <= len; ++p) ss += f.at(p).squaredNorm();
  return std::sqrt(ss / len);
}

struct VariantSite {
  Chain chain = Chain::VH;
  int pos = 0;  // 0-based residue index
  char alt = 'A';
  double seq_effect = 0.0;   // h_f
  double fine_effect = 0.0;  // g_f
  Point3 parental_shift = Point3::Zero();
};

struct Family {
  std::string name;
  std::string vh, vl;
  double base = 0.0;
  int sign = 1;
  SmoothField shape_vh, shape_vl;
  std::vector<VariantSite> sites;
  std::array<double, kBioColumns> bio_mean{};
};

}  // namespace detail

/// Deterministic synthetic dataset for a given config.
inline SyntheticDataset generate(const GenConfig& cfg) {
  cfg.validate();
  using namespace detail;
  Rng rng(cfg.seed);
  SyntheticDataset ds;

  std::vector<std::string> linkers;
  std::vector<double> linker_effect;
  for (int l = 0; l < cfg.n_linkers; ++l) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "LNK%02d", l + 1);
    linkers.emplace_back(buf);
    linker_effect.push_back(0.3 * normal01(rng));
  }
  const double orient_effect = 0.15 * normal01(rng);
  std::vector<Point3> vh_dirs, vl_dirs;
  for (std::size_t h = 0; h < kVhHotspots.size(); ++h) vh_dirs.push_back(random_unit(rng));
  for (std::size_t h = 0; h < kVlHotspots.size(); ++h) vl_dirs.push_back(random_unit(rng));
  Matrix residue_embedding = Matrix::Zero(20, std::max(cfg.embedding_dim, 1));
  for (Index i = 0; i < residue_embedding.size(); ++i) residue_embedding.data()[i] = normal01(rng);

  const double seq_norm = std::sqrt(std::max(1.0, cfg.variant_sites * cfg.mutation_rate));
  const double deform_mean = 0.5 * (kDeformMin + kDeformMax);
  const double deform_sd = (kDeformMax - kDeformMin) / std::sqrt(12.0);
  const double psh_sd = std::sqrt(1.25);

  struct Member {
    std::size_t family;
    std::vector<bool> mutated;
    SigKey key;
    double a, d, psh, noise, seq_term;
    SmoothField deform_vh, deform_vl;
  };
  std::vector<Family> families;
  std::vector<Member> members;
  std::vector<std::size_t> record_member;  // one entry per record
  std::map<SigKey, std::size_t> seen;

  for (int f = 0; f < cfg.n_families; ++f) {
    Family fam;
    char buf[16];
    std::snprintf(buf, sizeof buf, "FAM%03d", f + 1);
    fam.name = buf;
    const auto vh_len = static_cast<std::size_t>(std::clamp(std::lround(119.0 + 4.8 * normal01(rng)), 100L, 140L));
    const auto vl_len = static_cast<std::size_t>(std::clamp(std::lround(108.0 + 2.2 * normal01(rng)), 96L, 120L));
    fam.vh = random_sequence(vh_len, rng);
    fam.vl = random_sequence(vl_len, rng);
    fam.base = cfg.family_offset_std * normal01(rng);
    fam.sign = uniform01(rng) < cfg.family_sign_flip_prob ? -1 : 1;
    fam.shape_vh = SmoothField::random(rng);
    fam.shape_vl = SmoothField::random(rng);
    for (auto& m : fam.bio_mean) m = normal01(rng);
    std::set<std::pair<int, int>> used;
    while (static_cast<int>(fam.sites.size()) < cfg.variant_sites) {
      VariantSite s;
      s.chain = uniform01(rng) < 0.6 ? Chain::VH : Chain::VL;
      const std::string& seq = s.chain == Chain::VH ? fam.vh : fam.vl;
      s.pos = static_cast<int>(uniform_index(rng, seq.size()));
      if (!used.insert({s.chain == Chain::VH ? 0 : 1, s.pos}).second) continue;
      do s.alt = kAminoAcids[uniform_index(rng, kAminoAcids.size())];
      while (s.alt == seq[static_cast<std::size_t>(s.pos)]);
      s.seq_effect = normal01(rng);
      s.fine_effect = normal01(rng);
      s.parental_shift = 0.3 * Point3(normal01(rng), normal01(rng), normal01(rng));
      fam.sites.push_back(s);
    }
    const auto n_members =
        static_cast<int>(cfg.per_family_min + uniform_index(rng, static_cast<std::size_t>(cfg.per_family_max - cfg.per_family_min + 1)));
    for (int k = 0; k < n_members; ++k) {
      Member m;
      m.family = families.size();
      m.mutated.resize(fam.sites.size());
      std::string vh = fam.vh, vl = fam.vl;
      double g = 0.0, h = 0.0;
      for (std::size_t s = 0; s < fam.sites.size(); ++s) {
        m.mutated[s] = uniform01(rng) < cfg.mutation_rate;
        if (!m.mutated[s]) continue;
        const auto& site = fam.sites[s];
        (site.chain == Chain::VH ? vh : vl)[static_cast<std::size_t>(site.pos)] = site.alt;
        g += site.fine_effect;
        h += site.seq_effect;
      }
      const auto& linker = linkers[uniform_index(rng, linkers.size())];
      const auto orient = uniform01(rng) < 0.5 ? Orientation::VH_VL : Orientation::VL_VH;
      m.key = SigKey{vh, vl, linker, orient};
      m.a = g / seq_norm + 0.3 * normal01(rng);
      m.seq_term = h / seq_norm;
      m.d = kDeformMin + (kDeformMax - kDeformMin) * uniform01(rng);
      m.psh = fam.bio_mean[0] + 0.5 * normal01(rng);
      m.noise = normal01(rng);
      m.deform_vh = SmoothField::random(rng);
      m.deform_vl = SmoothField::random(rng);
      auto it = seen.find(m.key);
      if (it != seen.end()) {
        record_member.push_back(it->second);  // same construct synthesized again
        continue;
      }
      seen.emplace(m.key, members.size());
      record_member.push_back(members.size());
      if (uniform01(rng) < cfg.replicate_fraction) record_member.push_back(members.size());
      members.push_back(std::move(m));
    }
    families.push_back(std::move(fam));
  }

  // Latent scores and the calibrated pass threshold.
  std::vector<double> z(members.size());
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    const auto& fam = families[m.family];
    const std::size_t li = static_cast<std::size_t>(std::find(linkers.begin(), linkers.end(), m.key.linker) - linkers.begin());
    z[i] = fam.base + cfg.fine_signal_weight * m.a + cfg.sequence_signal_weight * m.seq_term + linker_effect[li] +
           (m.key.orientation == Orientation::VH_VL ? orient_effect : -orient_effect) +
           fam.sign * cfg.structure_signal_weight * (m.d - deform_mean) / deform_sd +
           cfg.bio_signal_weight * m.psh / psh_sd + cfg.noise_std * m.noise;
  }
  if (members.empty()) throw ConfigError("generator produced no signatures");
  double z_mean = 0, z_sd = 0;
  for (double v : z) z_mean += v;
  z_mean /= static_cast<double>(z.size());
  for (double v : z) z_sd += (v - z_mean) * (v - z_mean);
  z_sd = std::sqrt(z_sd / static_cast<double>(z.size()));
  if (!(z_sd > 0)) z_sd = 1.0;
  std::vector<double> sorted = z;
  std::sort(sorted.begin(), sorted.end());
  const auto n_fail = static_cast<std::size_t>(std::lround(cfg.target_fail_rate * static_cast<double>(z.size())));
  double threshold;
  if (n_fail == 0) threshold = sorted.front() - 1.0;
  else if (n_fail >= sorted.size()) threshold = sorted.back() + 1.0;
  else threshold = 0.5 * (sorted[n_fail - 1] + sorted[n_fail]);

  nlohmann::json man_sigs = nlohmann::json::array();
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& m = members[i];
    const auto& fam = families[m.family];
    SyntheticSignature s;
    s.key = m.key;
    s.family = fam.name;
    s.latent = z[i];
    const double zs = (z[i] - z_mean) / z_sd;
    s.yield = std::clamp(std::exp(kYieldLogMean + kYieldLogStd * zs), kYieldMin, kYieldMax);
    s.qc_pass = z[i] > threshold ? 1 : 0;
    s.sec = std::clamp(88.0 + 6.0 * (0.6 * zs + 0.8 * normal01(rng)), 30.0, 100.0);

    // Structures in the canonical frame; the scFv is then moved rigidly.
    s.parental.source = StructSource::PARENTAL_IGG;
    s.scfv.source = StructSource::SCFV;
    const Eigen::Matrix3d rot = random_rotation(rng);
    const Point3 shift(10.0 * normal01(rng), 10.0 * normal01(rng), 10.0 * normal01(rng));
    for (auto chain : {Chain::VH, Chain::VL}) {
      const bool is_vh = chain == Chain::VH;
      const int len = static_cast<int>((is_vh ? m.key.vh : m.key.vl).size());
      const auto& shape = is_vh ? fam.shape_vh : fam.shape_vl;
      const auto& deform = is_vh ? m.deform_vh : m.deform_vl;
      const double deform_scale = m.d / field_rms(deform, len);
      DomainStructure par{chain, StructSource::PARENTAL_IGG, {}}, sc{chain, StructSource::SCFV, {}};
      std::vector<Point3> local(static_cast<std::size_t>(len), Point3::Zero());
      for (std::size_t k = 0; k < fam.sites.size(); ++k)
        if (m.mutated[k] && fam.sites[k].chain == chain) local[static_cast<std::size_t>(fam.sites[k].pos)] += fam.sites[k].parental_shift;
      for (int p = 1; p <= len; ++p) {
        const Point3 base = template_point(chain, p) + 1.5 * shape.at(p) + local[static_cast<std::size_t>(p - 1)];
        Point3 moved = base + deform_scale * deform.at(p);
        const auto& hs = is_vh ? std::vector<int>(kVhHotspots.begin(), kVhHotspots.end())
                               : std::vector<int>(kVlHotspots.begin(), kVlHotspots.end());
        for (std::size_t h = 0; h < hs.size(); ++h)
          if (hs[h] == p) moved += kHotspotAmplitude * m.a * (is_vh ? vh_dirs[h] : vl_dirs[h]);
        moved += kCoordNoise * Point3(normal01(rng), normal01(rng), normal01(rng));
        par.coords.push_back({p, base});
        sc.coords.push_back({p, Point3(rot * moved + shift)});
      }
      (is_vh ? s.parental.vh : s.parental.vl) = std::move(par);
      (is_vh ? s.scfv.vh : s.scfv.vl) = std::move(sc);
    }

    s.biophys.values[0] = m.psh;
    for (int c = 1; c < kBioColumns; ++c)
      s.biophys.values[static_cast<std::size_t>(c)] = fam.bio_mean[static_cast<std::size_t>(c)] + 0.5 * normal01(rng);
    for (auto& v : s.biophys.values)
      if (uniform01(rng) < cfg.bio_missing_rate) v.reset();

    if (cfg.embedding_dim > 0) {
      auto embed = [&](Chain chain, const std::string& seq) {
        EmbeddingMatrix e;
        e.chain = chain;
        e.values.resize(static_cast<Index>(seq.size()), cfg.embedding_dim);
        for (std::size_t r = 0; r < seq.size(); ++r)
          for (int c = 0; c < cfg.embedding_dim; ++c)
            e.values(static_cast<Index>(r), c) =
                residue_embedding(static_cast<Index>(residue_code(seq[r])), c) + 0.1 * normal01(rng);
        return e;
      };
      s.vh_embedding = embed(Chain::VH, m.key.vh);
      s.vl_embedding = embed(Chain::VL, m.key.vl);
    }

    std::string muts;
    for (bool b : m.mutated) muts += b ? '1' : '0';
    man_sigs.push_back({{"sig_key", m.key.str()},
                        {"family", fam.name},
                        {"mutations", muts},
                        {"linker", m.key.linker},
                        {"orientation", std::string(to_string(m.key.orientation))},
                        {"a", m.a},
                        {"seq_term", m.seq_term},
                        {"d", m.d},
                        {"psh", m.psh},
                        {"noise", m.noise},
                        {"latent", z[i]},
                        {"yield", s.yield},
                        {"qc_pass", s.qc_pass}});
    ds.signatures.push_back(std::move(s));
  }

  int rec = 0;
  for (std::size_t mi : record_member) {
    const auto& s = ds.signatures[mi];
    ReformatRecord r;
    char buf[24];
    std::snprintf(buf, sizeof buf, "R%06d", ++rec);
    r.record_id = buf;
    r.vh_seq = s.key.vh;
    r.vl_seq = s.key.vl;
    r.linker_id = s.key.linker;
    r.orientation = s.key.orientation;
    r.parental_family = s.family;
    r.campaign = "CMP" + std::to_string(static_cast<int>(members[mi].family % 5) + 1);
    r.qc_pass = s.qc_pass;
    r.yield_ng_per_ul = s.yield;
    r.sec_main_peak_pct = s.sec;
    ds.records.push_back(std::move(r));
  }

  nlohmann::json fams = nlohmann::json::array();
  for (const auto& fam : families) {
    nlohmann::json sites = nlohmann::json::array();
    for (const auto& s : fam.sites)
      sites.push_back({{"chain", std::string(to_string(s.chain))},
                       {"position", s.pos + 1},
                       {"alt", std::string(1, s.alt)},
                       {"seq_effect", s.seq_effect},
                       {"fine_effect", s.fine_effect}});
    fams.push_back({{"family", fam.name},
                    {"base", fam.base},
                    {"sign", fam.sign},
                    {"bio_mean", fam.bio_mean},
                    {"sites", sites}});
  }
  nlohmann::json linker_json = nlohmann::json::object();
  for (std::size_t l = 0; l < linkers.size(); ++l) linker_json[linkers[l]] = linker_effect[l];
  ds.manifest = {{"config", to_json(cfg)},
                 {"linker_effects", linker_json},
                 {"orientation_effect", orient_effect},
                 {"deform_mean", deform_mean},
                 {"deform_sd", deform_sd},
                 {"psh_sd", psh_sd},
                 {"latent_threshold", threshold},
                 {"latent_mean", z_mean},
                 {"latent_sd", z_sd},
                 {"yield_log_mean", kYieldLogMean},
                 {"yield_log_std", kYieldLogStd},
                 {"yield_clip", {kYieldMin, kYieldMax}},
                 {"hotspots_vh", kVhHotspots},
                 {"hotspots_vl", kVlHotspots},
                 {"families", fams},
                 {"signatures", man_sigs}};
  return ds;
}

/// Signatures of a generated dataset, aggregated from its records.
inline SignatureSet synthetic_signatures(const SyntheticDataset& ds) { return aggregate_by_signature(ds.records); }

// ---- dataset summary -------------------------------------------------------------

struct TargetStats {
  std::size_t count = 0;
  double mean = 0, std = 0, min = 0, max = 0;
};

struct DatasetStats {
  std::size_t n = 0;
  std::size_t n_families = 0;
  std::size_t n_records = 0;
  std::map<std::string, TargetStats> targets;  // qc, yield, sec
  std::optional<double> qc_pass_fraction;
  std::optional<double> sec_pass_fraction;
};

inline DatasetStats stats_report(const SignatureSet& sigs) {
  if (sigs.empty()) throw DataError("stats_report: empty dataset");
  DatasetStats st;
  st.n = sigs.size();
  st.n_families = sigs.family_index.size();
  std::map<std::string, std::vector<double>> vals;
  std::size_t qc_n = 0, qc_pass = 0, sec_n = 0, sec_pass = 0;
  for (const auto& s : sigs.signatures) {
    st.n_records += static_cast<std::size_t>(s.replicate_count);
    if (s.qc_mean) vals["qc"].push_back(*s.qc_mean);
    if (s.yield_mean) vals["yield"].push_back(*s.yield_mean);
    if (s.sec_mean) vals["sec"].push_back(*s.sec_mean);
    if (s.qc_label) {
      ++qc_n;
      qc_pass += static_cast<std::size_t>(*s.qc_label);
    }
    if (s.sec_label) {
      ++sec_n;
      sec_pass += static_cast<std::size_t>(*s.sec_label);
    }
  }
  for (const auto& [name, v] : vals) {
    TargetStats t;
    t.count = v.size();
    const double n = static_cast<double>(v.size());
    for (double x : v) t.mean += x;
    t.mean /= n;
    for (double x : v) t.std += (x - t.mean) * (x - t.mean);
    t.std = v.size() > 1 ? std::sqrt(t.std / (n - 1.0)) : 0.0;
    t.min = *std::min_element(v.begin(), v.end());
    t.max = *std::max_element(v.begin(), v.end());
    st.targets[name] = t;
  }
  if (qc_n) st.qc_pass_fraction = static_cast<double>(qc_pass) / static_cast<double>(qc_n);
  if (sec_n) st.sec_pass_fraction = static_cast<double>(sec_pass) / static_cast<double>(sec_n);
  return st;
}

inline std::string format_stats(const DatasetStats& st) {
  std::string out;
  char buf[200];
  std::snprintf(buf, sizeof buf, "signatures: %zu\nrecords: %zu\nparental families: %zu\n", st.n, st.n_records,
                st.n_families);
  out += buf;
  for (const auto& [name, t] : st.targets) {
    std::snprintf(buf, sizeof buf, "%s: n=%zu mean %.2f +/- %.2f, range %.2f-%.2f\n", name.c_str(), t.count, t.mean,
                  t.std, t.min, t.max);
    out += buf;
  }
  if (st.qc_pass_fraction) {
    std::snprintf(buf, sizeof buf, "qc: %.1f%% pass, %.1f%% fail\n", 100.0 * *st.qc_pass_fraction,
                  100.0 * (1.0 - *st.qc_pass_fraction));
    out += buf;
  }
  if (st.sec_pass_fraction) {
    std::snprintf(buf, sizeof buf, "sec: %.1f%% >= 90%% purity\n", 100.0 * *st.sec_pass_fraction);
    out += buf;
  }
  return out;
}

inline nlohmann::json to_json(const DatasetStats& st) {
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [name, s] : st.targets)
    t[name] = {{"count", s.count}, {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"max", s.max}};
  nlohmann::json j = {{"n", st.n}, {"n_records", st.n_records}, {"n_families", st.n_families}, {"targets", t}};
  if (st.qc_pass_fraction) j["qc_pass_fraction"] = *st.qc_pass_fraction;
  if (st.sec_pass_fraction) j["sec_pass_fraction"] = *st.sec_pass_fraction;
  return j;
}

// ---- writing ---------------------------------------------------------------------

/// Layout: records.csv, biophys.csv, manifest.json, structures/<id>_parental.csv,
/// structures/<id>_scfv.csv and embeddings/<id>_{VH,VL}.emb, where <id> is the
/// signature id.
inline void write_dataset(const SyntheticDataset& ds, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "structures");
  {
    std::ofstream out(dir / "records.csv");
    write_records(out, ds.records);
  }
  std::vector<std::pair<std::string, BiophysRow>> bio;
  for (const auto& s : ds.signatures) {
    const std::string id = s.key.id();
    {
      std::ofstream p(dir / "structures" / (id + "_parental.csv"));
      write_structure(p, s.parental);
      std::ofstream q(dir / "structures" / (id + "_scfv.csv"));
      write_structure(q, s.scfv);
    }
    bio.emplace_back(s.key.str(), s.biophys);
    if (s.vh_embedding && s.vl_embedding) {
      fs::create_directories(dir / "embeddings");
      std::ofstream a(dir / "embeddings" / (id + "_VH.emb"));
      write_embedding_text(a, *s.vh_embedding);
      std::ofstream b(dir / "embeddings" / (id + "_VL.emb"));
      write_embedding_text(b, *s.vl_embedding);
    }
  }
  {
    std::ofstream out(dir / "biophys.csv");
    write_biophys(out, bio);
  }
  std::ofstream(dir / "manifest.json") << ds.manifest.dump(1) << '\n';
}

}  // namespace reformat
