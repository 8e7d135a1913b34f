#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"
#include "reformat/dataset.hpp"
#include "reformat/feature_fusion.hpp"
#include "reformat/splits.hpp"

namespace reformat {

namespace detail {

inline std::vector<bool> positives(const Vector& labels, double positive_class) {
  std::vector<bool> pos(static_cast<std::size_t>(labels.size()));
  for (Index i = 0; i < labels.size(); ++i) pos[static_cast<std::size_t>(i)] = labels[i] == positive_class;
  return pos;
}

inline void check_scores(const Vector& scores, const Vector& labels) {
  if (scores.size() != labels.size()) throw ConfigError("scores and labels differ in length");
  if (!scores.allFinite()) throw DataError("scores contain non-finite values");
}

/// Sum of non-negative fractions p/q kept as a reduced fraction while the
/// denominator stays below 2^53, so the final conversion is a single correctly
/// rounded division. Falls back to floating summation past that.
class FractionSum {
 public:
  void add(std::int64_t p, std::int64_t q) {
    if (p == 0) return;
    const std::int64_t g0 = std::gcd(p, q);
    p /= g0;
    q /= g0;
    if (exact_) {
      const std::int64_t g = std::gcd(den_, q);
      const __int128 den = static_cast<__int128>(den_ / g) * q;
      if (den <= kLimit) {
        // The running sum stays <= 1 for average precision, so num <= den.
        const __int128 num = static_cast<__int128>(num_) * (den / den_) + static_cast<__int128>(p) * (den / q);
        const std::int64_t h = std::gcd(static_cast<std::int64_t>(num), static_cast<std::int64_t>(den));
        num_ = static_cast<std::int64_t>(num) / h;
        den_ = static_cast<std::int64_t>(den) / h;
        return;
      }
      exact_ = false;
      approx_ = static_cast<double>(num_) / static_cast<double>(den_);
    }
    approx_ += static_cast<double>(p) / static_cast<double>(q);
  }
  double value() const { return exact_ ? static_cast<double>(num_) / static_cast<double>(den_) : approx_; }

 private:
  static constexpr std::int64_t kLimit = std::int64_t{1} << 53;
  std::int64_t num_ = 0, den_ = 1;
  bool exact_ = true;
  double approx_ = 0.0;
};

}  // namespace detail

/// Average (mid) ranks, 1-based.
inline Vector average_ranks(const Vector& x) {
  const Index n = x.size();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return x[a] < x[b]; });
  Vector r(n);
  for (Index i = 0; i < n;) {
    Index j = i;
    while (j + 1 < n && x[order[static_cast<std::size_t>(j + 1)]] == x[order[static_cast<std::size_t>(i)]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Index k = i; k <= j; ++k) r[order[static_cast<std::size_t>(k)]] = rank;
    i = j + 1;
  }
  return r;
}

/// Probability that a random positive outranks a random negative, ties
/// counted as one half.
inline double auroc(const Vector& scores, const Vector& labels, double positive_class = 1.0) {
  detail::check_scores(scores, labels);
  const auto pos = detail::positives(labels, positive_class);
  const double n_pos = static_cast<double>(std::count(pos.begin(), pos.end(), true));
  const double n_neg = static_cast<double>(pos.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw DataError("AUROC undefined: both classes must be present");
  const Vector r = average_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i)
    if (pos[i]) rank_sum += r[static_cast<Index>(i)];
  // Mann-Whitney U; all terms are exact half-integers.
  const double u = rank_sum - n_pos * (n_pos + 1.0) / 2.0;
  return u / (n_pos * n_neg);
}

/// Average precision, Σ (Rᵢ − Rᵢ₋₁)·Pᵢ over descending thresholds, with equal
/// scores grouped into one threshold.
inline double auprc(const Vector& scores, const Vector& labels, double positive_class = 1.0) {
  detail::check_scores(scores, labels);
  const auto pos = detail::positives(labels, positive_class);
  const auto n_pos = static_cast<std::int64_t>(std::count(pos.begin(), pos.end(), true));
  if (n_pos == 0) throw DataError("AUPRC undefined: no positives");
  std::vector<Index> order(static_cast<std::size_t>(scores.size()));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return scores[a] > scores[b]; });
  std::int64_t tp = 0, fp = 0, prev_tp = 0;
  // Each group adds (ΔTP / n_pos) · TP / (TP + FP).
  detail::FractionSum ap;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      ++(pos[static_cast<std::size_t>(order[j])] ? tp : fp);
      ++j;
    }
    ap.add((tp - prev_tp) * tp, n_pos * (tp + fp));
    prev_tp = tp;
    i = j;
  }
  return ap.value();
}

inline double pearson(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw ConfigError("pearson: length mismatch");
  if (x.size() < 2) throw DataError("pearson: need n >= 2");
  if (!x.allFinite() || !y.allFinite()) throw DataError("pearson: non-finite input");
  const Vector xc = x.array() - x.mean();
  const Vector yc = y.array() - y.mean();
  const double sxx = xc.squaredNorm(), syy = yc.squaredNorm();
  if (sxx == 0.0 || syy == 0.0) throw DataError("correlation undefined for a constant vector");
  return std::clamp(xc.dot(yc) / std::sqrt(sxx * syy), -1.0, 1.0);
}

inline double spearman(const Vector& x, const Vector& y) {
  if (x.size() != y.size()) throw ConfigError("spearman: length mismatch");
  return pearson(average_ranks(x), average_ranks(y));
}

// ---- confusion-based metrics --------------------------------------------------

struct Confusion {
  long tp = 0, fp = 0, fn = 0, tn = 0;
  long total() const { return tp + fp + fn + tn; }
  bool operator==(const Confusion&) const = default;
};

/// Predict positive when score ≥ threshold.
inline Confusion confusion_at(const Vector& scores, const Vector& labels, double threshold,
                              double positive_class = 1.0) {
  detail::check_scores(scores, labels);
  Confusion c;
  for (Index i = 0; i < scores.size(); ++i) {
    const bool actual = labels[i] == positive_class;
    const bool predicted = scores[i] >= threshold;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

/// Metrics with a zero denominator are left empty.
struct ConfusionMetrics {
  std::optional<double> accuracy, precision, recall;
};

inline ConfusionMetrics confusion_metrics(const Confusion& c) {
  if (c.tp < 0 || c.fp < 0 || c.fn < 0 || c.tn < 0) throw DataError("confusion counts must be non-negative");
  ConfusionMetrics m;
  if (c.total() > 0) m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  if (c.tp + c.fp > 0) m.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) m.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return m;
}

/// Fraction of advanced candidates that truly pass, against testing everything.
struct ScreeningEfficiency {
  double efficiency = 0.0;
  double abs_gain = 0.0;
  double mult_gain = 0.0;
};

inline ScreeningEfficiency screening_efficiency(const Confusion& c, double baseline_prevalence) {
  if (!(baseline_prevalence > 0.0 && baseline_prevalence <= 1.0))
    throw ConfigError("baseline prevalence must be in (0,1]");
  const auto m = confusion_metrics(c);
  if (!m.precision) throw DataError("screening efficiency undefined: no predicted positives");
  return {*m.precision, *m.precision - baseline_prevalence, *m.precision / baseline_prevalence};
}

// ---- fold aggregation -----------------------------------------------------------

struct FoldReport {
  double mean = 0.0;
  double std = 0.0;  // population
  std::vector<double> values;
};

inline FoldReport aggregate_folds(const std::vector<double>& values) {
  if (values.empty()) throw ConfigError("aggregate_folds needs at least one value");
  FoldReport r;
  r.values = values;
  const double n = static_cast<double>(values.size());
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) {
    r.mean = *lo;  // avoids a rounding residue in the std of constant values
    return r;
  }
  r.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - r.mean) * (v - r.mean);
  r.std = std::sqrt(ss / n);
  return r;
}

using MetricValues = std::map<std::string, double>;
using MetricReports = std::map<std::string, FoldReport>;

inline MetricReports aggregate_metrics(const std::vector<MetricValues>& per_fold) {
  if (per_fold.empty()) throw ConfigError("no folds to aggregate");
  std::map<std::string, std::vector<double>> cols;
  for (const auto& fold : per_fold)
    for (const auto& [k, v] : fold) cols[k].push_back(v);
  MetricReports out;
  for (const auto& [k, vs] : cols) out[k] = aggregate_folds(vs);
  return out;
}

inline nlohmann::json to_json(const FoldReport& r) { return {{"mean", r.mean}, {"std", r.std}, {"values", r.values}}; }

inline FoldReport fold_report_from_json(const nlohmann::json& j) {
  FoldReport r;
  r.mean = j.at("mean").get<double>();
  r.std = j.at("std").get<double>();
  r.values = j.at("values").get<std::vector<double>>();
  return r;
}

/// AUROC, AUPRC and threshold-0.5 accuracy, precision and recall for scores
/// that are confidences in `positive_class`.
inline MetricValues classification_metrics(const Vector& scores, const Vector& labels, double positive_class = 1.0) {
  MetricValues m;
  m["auroc"] = auroc(scores, labels, positive_class);
  m["auprc"] = auprc(scores, labels, positive_class);
  const auto cm = confusion_metrics(confusion_at(scores, labels, 0.5, positive_class));
  if (cm.accuracy) m["accuracy"] = *cm.accuracy;
  if (cm.precision) m["precision"] = *cm.precision;
  if (cm.recall) m["recall"] = *cm.recall;
  return m;
}

inline MetricValues regression_metrics(const Vector& pred, const Vector& truth) {
  MetricValues m;
  m["pearson"] = pearson(pred, truth);
  m["spearman"] = spearman(pred, truth);
  m["rmse"] = std::sqrt((pred - truth).squaredNorm() / static_cast<double>(truth.size()));
  return m;
}

// ---- per-family structure analysis -----------------------------------------------

struct FamilyCorrelation {
  std::string family;
  std::size_t n = 0;
  double r_vh = 0.0;
  double r_vl = 0.0;
  double r_total = 0.0;  // VH RMSD + VL RMSD
};

struct FamilyRmsdReport {
  std::vector<FamilyCorrelation> families;  // sorted by |r_total|, descending
  std::vector<std::string> notes;           // skipped families
};

/// Pearson correlation of yield against VH, VL and summed RMSD within each
/// parental family. Rows of `rmsd_vh`, `rmsd_vl` and `yields` follow `sigs`.
inline FamilyRmsdReport family_rmsd_yield_report(const SignatureSet& sigs, const Vector& rmsd_vh,
                                                 const Vector& rmsd_vl, const Vector& yields) {
  const auto n = static_cast<Index>(sigs.signatures.size());
  if (rmsd_vh.size() != n || rmsd_vl.size() != n || yields.size() != n)
    throw ConfigError("family report inputs must align with the signature set");
  std::map<std::string, std::vector<Index>> members;
  for (Index i = 0; i < n; ++i) members[sigs.signatures[static_cast<std::size_t>(i)].parental_family].push_back(i);
  FamilyRmsdReport rep;
  for (const auto& [fam, idx] : members) {
    if (idx.size() < 3) {
      rep.notes.push_back(fam + ": skipped (n=" + std::to_string(idx.size()) + " < 3)");
      continue;
    }
    const Vector vh = rmsd_vh(idx), vl = rmsd_vl(idx), yy = yields(idx);
    try {
      FamilyCorrelation fc;
      fc.family = fam;
      fc.n = idx.size();
      fc.r_vh = pearson(vh, yy);
      fc.r_vl = pearson(vl, yy);
      fc.r_total = pearson(vh + vl, yy);
      rep.families.push_back(fc);
    } catch (const DataError&) {
      rep.notes.push_back(fam + ": skipped (constant column)");
    }
  }
  std::stable_sort(rep.families.begin(), rep.families.end(),
                   [](const auto& a, const auto& b) { return std::abs(a.r_total) > std::abs(b.r_total); });
  return rep;
}

// ---- modality ablation ----------------------------------------------------------

struct AblationRow {
  ModalityMask mask;
  MetricReports metrics;
};

/// Test-partition metrics for one mask on one fold.
using FoldEvaluator = std::function<MetricValues(const ModalityMask&, const SplitPlan&, std::size_t fold)>;

/// The seven ablation masks evaluated on shared folds, one row per mask.
/// Folds are visited in the outer loop so evaluators can cache per-fold work.
inline std::vector<AblationRow> ablation_run(const BlockSet& blocks, const std::vector<ModalityMask>& masks,
                                             const std::vector<SplitPlan>& folds, const FoldEvaluator& evaluate) {
  const auto expected = ablation_masks();
  std::set<unsigned> want, got;
  for (const auto& m : expected) want.insert(m.bits());
  for (const auto& m : masks) got.insert(m.bits());
  if (masks.size() != expected.size() || got != want)
    throw ConfigError("ablation requires exactly the seven masks seq, struct, rmsd, their pairs and the triple");
  if (folds.empty()) throw ConfigError("ablation requires at least one fold");
  for (auto m : {Modality::SEQ, Modality::STRUCT, Modality::RMSD})
    if (!blocks.count(m)) throw MissingArtifact("feature block '" + std::string(to_string(m)) + "' not available");
  std::vector<std::vector<MetricValues>> per_mask(masks.size());
  for (std::size_t k = 0; k < folds.size(); ++k)
    for (std::size_t i = 0; i < masks.size(); ++i) per_mask[i].push_back(evaluate(masks[i], folds[k], k));
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < masks.size(); ++i) rows.push_back({masks[i], aggregate_metrics(per_mask[i])});
  return rows;
}

}  // namespace reformat
