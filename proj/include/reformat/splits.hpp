#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"
#include "reformat/dataset.hpp"

namespace reformat {

enum class Scheme { SIGNATURE, PARENTAL_FAMILY, TARGET_FAMILY };

inline std::string_view to_string(Scheme s) {
  switch (s) {
    case Scheme::SIGNATURE: return "signature";
    case Scheme::PARENTAL_FAMILY: return "family";
    case Scheme::TARGET_FAMILY: return "target";
  }
  return "?";
}

inline Scheme parse_scheme(std::string_view s) {
  if (s == "signature") return Scheme::SIGNATURE;
  if (s == "family") return Scheme::PARENTAL_FAMILY;
  if (s == "target") return Scheme::TARGET_FAMILY;
  throw ConfigError("unknown split scheme '" + std::string(s) + "' (signature|family|target)");
}

struct Ratios {
  double train = 0.6;
  double val = 0.1;
  double test = 0.3;

  void validate() const {
    if (train < 0 || val < 0 || test < 0) throw ConfigError("split ratios must be non-negative");
    if (std::abs(train + val + test - 1.0) > 1e-9)
      throw ConfigError("split ratios must sum to 1 (got " + std::to_string(train + val + test) + ")");
  }
};

struct SplitPlan {
  Scheme scheme = Scheme::SIGNATURE;
  std::uint64_t fold_seed = 0;
  std::vector<std::size_t> train, val, test;
  std::optional<std::string> target_family;
  std::optional<std::size_t> batch_size;

  bool operator==(const SplitPlan&) const = default;
};

/// Options shared by all schemes; the target-family fields are only read by
/// TARGET_FAMILY.
struct SplitOptions {
  Ratios ratios;
  std::string target_family;
  std::size_t batch_size = 32;
  double target_val_fraction = 0.25;  // of the non-batch target members
  bool family_largest_first = true;   // PARENTAL_FAMILY visit order
};

namespace detail {

inline long round_half_up(double x) { return static_cast<long>(std::floor(x + 0.5)); }

inline void sort_plan(SplitPlan& p) {
  std::sort(p.train.begin(), p.train.end());
  std::sort(p.val.begin(), p.val.end());
  std::sort(p.test.begin(), p.test.end());
}

}  // namespace detail

/// Per-family stratified random split. Families with fewer than three members
/// go wholly to train; the remaining allocation rounds cumulatively across
/// families so global partition sizes stay within one signature of target.
inline SplitPlan signature_split(const SignatureSet& sigs, const Ratios& ratios, std::uint64_t seed) {
  ratios.validate();
  if (sigs.size() < 10) throw ConfigError("signature split needs at least 10 signatures");
  Rng rng(seed);
  SplitPlan plan;
  plan.scheme = Scheme::SIGNATURE;
  plan.fold_seed = seed;

  long cum = 0, prev_train = 0, prev_trainval = 0;
  for (const auto& [family, members] : sigs.family_index) {
    std::vector<std::size_t> idx = members;
    if (idx.size() < 3) {
      plan.train.insert(plan.train.end(), idx.begin(), idx.end());
      continue;
    }
    shuffle_in_place(idx, rng);
    cum += static_cast<long>(idx.size());
    const long cum_train = detail::round_half_up(cum * ratios.train);
    const long cum_trainval = std::max(cum_train, detail::round_half_up(cum * (ratios.train + ratios.val)));
    const auto n_train = static_cast<std::size_t>(cum_train - prev_train);
    const auto n_val = static_cast<std::size_t>((cum_trainval - cum_train) - (prev_trainval - prev_train));
    prev_train = cum_train;
    prev_trainval = cum_trainval;
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k < n_train) plan.train.push_back(idx[k]);
      else if (k < n_train + n_val) plan.val.push_back(idx[k]);
      else plan.test.push_back(idx[k]);
    }
  }
  detail::sort_plan(plan);
  return plan;
}

/// Whole families to partitions. Families are shuffled, then (by default)
/// visited largest first; each goes to the partition with the largest
/// signature-count deficit, except that once the families left equal the
/// partitions still empty, the family goes to the empty partition with the
/// largest deficit. Largest-first only varies with the seed among families of
/// equal size; pass `largest_first = false` to visit in shuffled order.
inline SplitPlan parental_family_split(const SignatureSet& sigs, const Ratios& ratios, std::uint64_t seed,
                                       bool largest_first = true) {
  ratios.validate();
  if (sigs.family_index.size() < 3) throw ConfigError("family split needs at least 3 parental families");
  Rng rng(seed);
  std::vector<const std::vector<std::size_t>*> fams;
  for (const auto& [_, members] : sigs.family_index) fams.push_back(&members);
  shuffle_in_place(fams, rng);
  if (largest_first)
    std::stable_sort(fams.begin(), fams.end(), [](auto* a, auto* b) { return a->size() > b->size(); });

  const double n = static_cast<double>(sigs.size());
  const std::array<double, 3> target = {ratios.train * n, ratios.val * n, ratios.test * n};
  std::array<double, 3> filled = {0, 0, 0};
  std::array<std::vector<std::size_t>, 3> parts;

  for (std::size_t f = 0; f < fams.size(); ++f) {
    const std::size_t remaining = fams.size() - f;
    std::size_t empty = 0;
    for (auto& p : parts) empty += p.empty() ? 1 : 0;
    const bool must_fill_empty = remaining <= empty;
    int best = -1;
    for (int k = 0; k < 3; ++k) {
      if (must_fill_empty && !parts[k].empty()) continue;
      if (best < 0 || target[k] - filled[k] > target[best] - filled[best]) best = k;
    }
    parts[best].insert(parts[best].end(), fams[f]->begin(), fams[f]->end());
    filled[best] += static_cast<double>(fams[f]->size());
  }

  SplitPlan plan;
  plan.scheme = Scheme::PARENTAL_FAMILY;
  plan.fold_seed = seed;
  plan.train = std::move(parts[0]);
  plan.val = std::move(parts[1]);
  plan.test = std::move(parts[2]);
  detail::sort_plan(plan);
  return plan;
}

/// Every non-target family plus `batch_size` random target members train;
/// the rest of the target family splits val:test by `val_fraction`.
inline SplitPlan target_family_split(const SignatureSet& sigs, const std::string& target_family,
                                     std::size_t batch_size, double val_fraction, std::uint64_t seed) {
  auto it = sigs.family_index.find(target_family);
  if (it == sigs.family_index.end()) throw ConfigError("unknown target family '" + target_family + "'");
  if (val_fraction < 0.0 || val_fraction > 1.0) throw ConfigError("val fraction must lie in [0,1]");
  const auto& members = it->second;
  if (batch_size >= members.size())
    throw ConfigError("batch size " + std::to_string(batch_size) + " must be smaller than target family size " +
                      std::to_string(members.size()));
  Rng rng(seed);
  std::vector<std::size_t> idx = members;
  shuffle_in_place(idx, rng);

  SplitPlan plan;
  plan.scheme = Scheme::TARGET_FAMILY;
  plan.fold_seed = seed;
  plan.target_family = target_family;
  plan.batch_size = batch_size;
  for (const auto& [family, fam_members] : sigs.family_index)
    if (family != target_family) plan.train.insert(plan.train.end(), fam_members.begin(), fam_members.end());
  const std::size_t rest = idx.size() - batch_size;
  const auto n_val = static_cast<std::size_t>(detail::round_half_up(static_cast<double>(rest) * val_fraction));
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (k < batch_size) plan.train.push_back(idx[k]);
    else if (k < batch_size + n_val) plan.val.push_back(idx[k]);
    else plan.test.push_back(idx[k]);
  }
  detail::sort_plan(plan);
  return plan;
}

inline SplitPlan make_split(Scheme scheme, const SignatureSet& sigs, const SplitOptions& opt, std::uint64_t seed) {
  switch (scheme) {
    case Scheme::SIGNATURE: return signature_split(sigs, opt.ratios, seed);
    case Scheme::PARENTAL_FAMILY: return parental_family_split(sigs, opt.ratios, seed, opt.family_largest_first);
    case Scheme::TARGET_FAMILY:
      return target_family_split(sigs, opt.target_family, opt.batch_size, opt.target_val_fraction, seed);
  }
  throw ConfigError("unknown scheme");
}

/// Fold k uses seed base_seed + k.
inline std::vector<SplitPlan> make_folds(Scheme scheme, const SignatureSet& sigs, std::size_t n_folds,
                                         std::uint64_t base_seed, const SplitOptions& opt = {}) {
  if (n_folds < 1) throw ConfigError("n_folds must be at least 1");
  std::vector<SplitPlan> folds;
  folds.reserve(n_folds);
  for (std::size_t k = 0; k < n_folds; ++k) folds.push_back(make_split(scheme, sigs, opt, base_seed + k));
  return folds;
}

/// Largest family; ties go to the lexicographically first name.
inline std::string largest_family(const SignatureSet& sigs) {
  std::string best;
  std::size_t best_n = 0;
  for (const auto& [f, m] : sigs.family_index)
    if (m.size() > best_n) { best = f; best_n = m.size(); }
  return best;
}

// ---- serialization ---------------------------------------------------------

inline nlohmann::json to_json(const SplitPlan& p) {
  nlohmann::json j;
  j["scheme"] = std::string(to_string(p.scheme));
  j["seed"] = p.fold_seed;
  j["train"] = p.train;
  j["val"] = p.val;
  j["test"] = p.test;
  j["target_family"] = p.target_family ? nlohmann::json(*p.target_family) : nlohmann::json(nullptr);
  j["batch_size"] = p.batch_size ? nlohmann::json(*p.batch_size) : nlohmann::json(nullptr);
  return j;
}

inline SplitPlan split_from_json(const nlohmann::json& j) {
  SplitPlan p;
  p.scheme = parse_scheme(j.at("scheme").get<std::string>());
  p.fold_seed = j.at("seed").get<std::uint64_t>();
  p.train = j.at("train").get<std::vector<std::size_t>>();
  p.val = j.at("val").get<std::vector<std::size_t>>();
  p.test = j.at("test").get<std::vector<std::size_t>>();
  if (j.contains("target_family") && !j["target_family"].is_null())
    p.target_family = j["target_family"].get<std::string>();
  if (j.contains("batch_size") && !j["batch_size"].is_null()) p.batch_size = j["batch_size"].get<std::size_t>();
  return p;
}

// ---- invariant checks ------------------------------------------------------

/// Empty string when the plan satisfies its scheme's invariants, else a
/// description of the first violation.
inline std::string check_plan(const SplitPlan& p, const SignatureSet& sigs) {
  std::vector<int> owner(sigs.size(), -1);
  const std::array<const std::vector<std::size_t>*, 3> parts = {&p.train, &p.val, &p.test};
  for (int k = 0; k < 3; ++k)
    for (auto i : *parts[k]) {
      if (i >= sigs.size()) return "index out of range";
      if (owner[i] != -1) return "index " + std::to_string(i) + " in two partitions";
      owner[i] = k;
    }
  if (p.scheme == Scheme::PARENTAL_FAMILY) {
    std::map<std::string, int> fam_part;
    for (std::size_t i = 0; i < sigs.size(); ++i) {
      if (owner[i] < 0) continue;
      auto [it, ins] = fam_part.try_emplace(sigs[i].parental_family, owner[i]);
      if (!ins && it->second != owner[i]) return "family '" + it->first + "' spans partitions";
    }
  }
  if (p.scheme == Scheme::TARGET_FAMILY) {
    if (!p.target_family || !p.batch_size) return "target plan missing family or batch size";
    std::size_t in_train = 0;
    for (auto i : p.train) in_train += sigs[i].parental_family == *p.target_family ? 1 : 0;
    if (in_train != *p.batch_size) return "target family train count != batch size";
    for (auto* part : {&p.val, &p.test})
      for (auto i : *part)
        if (sigs[i].parental_family != *p.target_family) return "non-target signature in val/test";
  }
  return {};
}

}  // namespace reformat
