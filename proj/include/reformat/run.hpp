#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"
#include "reformat/pipeline.hpp"
#include "reformat/tuning.hpp"

namespace reformat {

/// Everything a subcommand needs. Loaded from a JSON config file and then
/// overridden by command-line flags.
struct RunConfig {
  // paths
  std::string data_dir;      // dataset directory (records.csv, structures/, ...)
  std::string features_dir;  // featurize output
  std::string splits_path;   // split output
  std::string out;           // output file or directory of the current command
  std::vector<std::string> inputs;  // model dirs for eval, reports for report

  Scheme scheme = Scheme::SIGNATURE;
  std::size_t n_folds = 10;
  Ratios ratios;
  std::string target_family;  // TARGET_FAMILY only; largest family when empty
  std::size_t batch_size = 32;
  bool family_largest_first = true;

  ModalityMask mask{Modality::SEQ};
  std::string model = "logistic";
  TargetKind target = TargetKind::QC;
  bool fail_positive = true;

  LinearConfig linear{Task::CLASSIFY, Penalty::L2, 10.0};
  MlpConfig mlp;
  CnnConfig cnn;
  GenConfig gen;

  std::string search = "grid";
  std::optional<nlohmann::json> search_space;
  std::size_t n_trials = 50;
  std::size_t tune_fold = 0;
  unsigned threads = 1;

  std::uint64_t seed = 0;
  std::string format = "table";
  bool force = false;
};

inline const std::vector<std::string>& model_names() {
  static const std::vector<std::string> names = {"logistic", "linear", "mlp", "cnn"};
  return names;
}

inline void check_model_name(const std::string& m) {
  if (std::find(model_names().begin(), model_names().end(), m) == model_names().end())
    throw ConfigError("unknown model '" + m + "' (logistic|linear|mlp|cnn)");
}

/// "largest" (largest family first) or "shuffled".
inline bool parse_family_order(const std::string& s) {
  if (s == "largest") return true;
  if (s == "shuffled") return false;
  throw ConfigError("family order must be largest or shuffled");
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  try {
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      c.data_dir = p.value("data", c.data_dir);
      c.features_dir = p.value("features", c.features_dir);
      c.splits_path = p.value("splits", c.splits_path);
      c.out = p.value("out", c.out);
      if (p.contains("inputs")) c.inputs = p.at("inputs").get<std::vector<std::string>>();
    }
    if (j.contains("scheme")) c.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.n_folds = j.value("folds", c.n_folds);
    if (j.contains("ratios")) {
      const auto r = j.at("ratios").get<std::vector<double>>();
      if (r.size() != 3) throw ConfigError("ratios needs three values");
      c.ratios = {r[0], r[1], r[2]};
    }
    c.target_family = j.value("target_family", c.target_family);
    c.batch_size = j.value("batch_size", c.batch_size);
    if (j.contains("family_order")) c.family_largest_first = parse_family_order(j.at("family_order").get<std::string>());
    if (j.contains("mask")) c.mask = ModalityMask::parse(j.at("mask").get<std::string>());
    c.model = j.value("model", c.model);
    if (j.contains("task")) c.target = parse_target(j.at("task").get<std::string>());
    if (j.contains("positive")) {
      const auto pos = j.at("positive").get<std::string>();
      if (pos != "fail" && pos != "pass") throw ConfigError("positive must be fail or pass");
      c.fail_positive = pos == "fail";
    }
    if (j.contains("linear")) {
      const auto& l = j.at("linear");
      c.linear.penalty = parse_penalty(l.value("penalty", std::string(to_string(c.linear.penalty))));
      c.linear.inverse_reg_C = l.value("C", c.linear.inverse_reg_C);
      c.linear.max_iter = l.value("max_iter", c.linear.max_iter);
      c.linear.tol = l.value("tol", c.linear.tol);
      c.linear.fit_intercept = l.value("fit_intercept", c.linear.fit_intercept);
    }
    if (j.contains("mlp")) c.mlp = mlp_config_from_json(j.at("mlp"));
    if (j.contains("cnn")) c.cnn = cnn_config_from_json(j.at("cnn"));
    if (j.contains("gen")) c.gen = gen_config_from_json(j.at("gen"));
    if (j.contains("search")) {
      const auto& s = j.at("search");
      c.search = s.value("method", c.search);
      c.n_trials = s.value("trials", c.n_trials);
      c.tune_fold = s.value("fold", c.tune_fold);
      c.threads = s.value("threads", c.threads);
      if (s.contains("space")) c.search_space = s.at("space");
    }
    c.seed = j.value("seed", c.seed);
    c.format = j.value("format", c.format);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
  check_model_name(c.model);
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  try {
    return run_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
  }
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = {
      {"paths", {{"data", c.data_dir}, {"features", c.features_dir}, {"splits", c.splits_path}, {"out", c.out},
                 {"inputs", c.inputs}}},
      {"scheme", std::string(to_string(c.scheme))},
      {"folds", c.n_folds},
      {"ratios", {c.ratios.train, c.ratios.val, c.ratios.test}},
      {"target_family", c.target_family},
      {"batch_size", c.batch_size},
      {"family_order", c.family_largest_first ? "largest" : "shuffled"},
      {"mask", c.mask.str()},
      {"model", c.model},
      {"task", std::string(to_string(c.target))},
      {"positive", c.fail_positive ? "fail" : "pass"},
      {"linear",
       {{"penalty", std::string(to_string(c.linear.penalty))},
        {"C", c.linear.inverse_reg_C},
        {"max_iter", c.linear.max_iter},
        {"tol", c.linear.tol},
        {"fit_intercept", c.linear.fit_intercept}}},
      {"mlp", to_json(c.mlp)},
      {"cnn", to_json(c.cnn)},
      {"gen", to_json(c.gen)},
      {"search", {{"method", c.search}, {"trials", c.n_trials}, {"fold", c.tune_fold}, {"threads", c.threads}}},
      {"seed", c.seed},
      {"format", c.format}};
  if (c.search_space) j["search"]["space"] = *c.search_space;
  return j;
}

inline std::string hash_json(const nlohmann::json& j) { return hex64(fnv1a(j.dump())); }

// ---- artifact helpers --------------------------------------------------------------

namespace detail {

inline nlohmann::json read_json_artifact(const std::filesystem::path& p, const std::string& what) {
  std::ifstream in(p);
  if (!in) throw MissingArtifact(what + " " + p.string() + " not found");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(what + " " + p.string() + " is not valid JSON: " + e.what());
  }
}

inline void write_json_artifact(const std::filesystem::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw ConfigError("cannot write " + p.string());
  out << j.dump(1) << '\n';
}

inline void require_path(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError("missing required path " + flag);
}

inline std::string features_hash_at(const std::filesystem::path& dir) {
  return read_json_artifact(dir / "features.json", "feature manifest").at("config_hash").get<std::string>();
}

inline void warn_mismatch(std::ostream& err, const std::string& what, const std::string& expected,
                          const std::string& actual) {
  if (expected != actual)
    err << "warning: " << what << " were produced from features " << expected << " but the current features are "
        << actual << '\n';
}

/// Manifest written next to every artifact: command, config hash, seed and
/// wall-clock timing. Kept apart from reports so reports stay reproducible.
class RunManifest {
 public:
  RunManifest(std::string command, const RunConfig& cfg)
      : command_(std::move(command)), config_(to_json(cfg)), start_(std::chrono::steady_clock::now()) {}

  void write(const std::filesystem::path& path, const std::string& artifact_hash) const {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    write_json_artifact(path, {{"command", command_},
                               {"config", config_},
                               {"config_hash", hash_json(config_)},
                               {"artifact_hash", artifact_hash},
                               {"seed", config_.at("seed")},
                               {"timings", {{"total_seconds", secs}}}});
  }

 private:
  std::string command_;
  nlohmann::json config_;
  std::chrono::steady_clock::time_point start_;
};

inline std::filesystem::path manifest_for_file(const std::filesystem::path& p) {
  return p.parent_path() / (p.filename().string() + ".manifest.json");
}

struct SplitsArtifact {
  nlohmann::json meta;
  std::vector<SplitPlan> folds;
  std::string hash() const { return meta.at("config_hash").get<std::string>(); }
  std::string features_hash() const { return meta.at("features_hash").get<std::string>(); }
};

inline SplitsArtifact read_splits(const std::filesystem::path& p) {
  SplitsArtifact s;
  s.meta = read_json_artifact(p, "splits file");
  for (const auto& f : s.meta.at("folds")) s.folds.push_back(split_from_json(f));
  return s;
}

inline Task model_task(const std::string& model, TargetKind target) {
  const Task t = task_for(target);
  if (model == "logistic" && t != Task::CLASSIFY)
    throw ConfigError("model 'logistic' needs a classification target (qc or sec)");
  if (model == "linear" && t != Task::REGRESS) throw ConfigError("model 'linear' needs the regression target (yield)");
  return t;
}

inline std::string fold_file(std::size_t k, const std::string& model) {
  std::ostringstream s;
  s << "fold_" << std::setw(2) << std::setfill('0') << k << (model == "mlp" || model == "cnn" ? ".ckpt" : ".json");
  return s.str();
}

/// Validation metric used for model selection.
inline double selection_metric(TargetKind target, const Vector& pred, const Vector& truth, bool fail_positive) {
  const auto m = fold_metrics(target, pred, truth, fail_positive);
  const char* key = task_for(target) == Task::REGRESS ? "pearson" : "auroc";
  auto it = m.find(key);
  if (it == m.end()) throw DataError(std::string("validation partition cannot score ") + key);
  return it->second;
}

}  // namespace detail

// ---- reports --------------------------------------------------------------------

struct ReportRow {
  std::string model;
  std::string mask;
  std::string scheme;
  std::string target;
  MetricReports metrics;
};

struct Report {
  std::string config_hash;  // hash of the features the rows were computed on
  std::vector<ReportRow> rows;
};

inline nlohmann::json to_json(const Report& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json m = nlohmann::json::object();
    for (const auto& [k, v] : row.metrics) m[k] = to_json(v);
    rows.push_back(
        {{"model", row.model}, {"mask", row.mask}, {"scheme", row.scheme}, {"task", row.target}, {"metrics", m}});
  }
  return {{"kind", "report"}, {"config_hash", r.config_hash}, {"rows", rows}};
}

inline Report report_from_json(const nlohmann::json& j) {
  if (j.value("kind", std::string()) != "report") throw DataError("not a report artifact");
  Report r;
  r.config_hash = j.at("config_hash").get<std::string>();
  for (const auto& row : j.at("rows")) {
    ReportRow x{row.at("model").get<std::string>(), row.at("mask").get<std::string>(),
                row.at("scheme").get<std::string>(), row.at("task").get<std::string>(), {}};
    for (const auto& [k, v] : row.at("metrics").items()) x.metrics[k] = fold_report_from_json(v);
    r.rows.push_back(std::move(x));
  }
  return r;
}

/// `table`: one line per row with `mean ± std` per metric. `tsv`: long form,
/// one line per row and metric.
inline std::string format_report(const Report& r, const std::string& format) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  if (format == "tsv") {
    os << "model\tmask\tscheme\ttask\tmetric\tmean\tstd\tfolds\n";
    for (const auto& row : r.rows)
      for (const auto& [k, v] : row.metrics)
        os << row.model << '\t' << row.mask << '\t' << row.scheme << '\t' << row.target << '\t' << k << '\t' << v.mean
           << '\t' << v.std << '\t' << v.values.size() << '\n';
    return os.str();
  }
  if (format != "table") throw ConfigError("unknown report format '" + format + "' (table|tsv)");
  std::vector<std::string> metrics;
  for (const auto& row : r.rows)
    for (const auto& [k, _] : row.metrics)
      if (std::find(metrics.begin(), metrics.end(), k) == metrics.end()) metrics.push_back(k);
  std::sort(metrics.begin(), metrics.end());
  os << std::left << std::setw(10) << "model" << std::setw(24) << "mask" << std::setw(18) << "split" << std::setw(7)
     << "task";
  for (const auto& m : metrics) os << std::setw(20) << m;
  os << '\n';
  for (const auto& row : r.rows) {
    os << std::setw(10) << row.model << std::setw(24) << row.mask << std::setw(18) << row.scheme << std::setw(7)
       << row.target;
    for (const auto& m : metrics) {
      auto it = row.metrics.find(m);
      std::ostringstream cell;
      cell << std::fixed << std::setprecision(4);
      if (it == row.metrics.end()) cell << "-";
      else cell << it->second.mean << " +/- " << it->second.std;
      os << std::setw(20) << cell.str();
    }
    os << '\n';
  }
  return os.str();
}

// ---- subcommands ------------------------------------------------------------------

struct CommandIo {
  std::ostream& out = std::cout;
  std::ostream& err = std::cerr;
};

inline void cmd_gen(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.out, "--out");
  detail::RunManifest manifest("gen", cfg);
  GenConfig g = cfg.gen;
  g.seed = cfg.seed;
  const auto ds = generate(g);
  write_dataset(ds, cfg.out);
  const auto stats = stats_report(synthetic_signatures(ds));
  detail::write_json_artifact(std::filesystem::path(cfg.out) / "stats.json", to_json(stats));
  io.out << format_stats(stats);
  manifest.write(std::filesystem::path(cfg.out) / "run_manifest.json", hash_json(to_json(g)));
}

inline void cmd_featurize(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.data_dir, "--data");
  detail::require_path(cfg.out, "--out");
  detail::RunManifest manifest("featurize", cfg);
  std::vector<RowDiagnostic> rejected;
  const auto fs = featurize_directory(cfg.data_dir, &rejected);
  for (const auto& r : rejected) io.err << "rejected row " << r.row << ": " << r.message << '\n';
  save_features(fs, cfg.out);
  io.out << "featurized " << fs.rows() << " signatures";
  for (const auto& [m, b] : fs.blocks) io.out << ' ' << to_string(m) << '=' << b.values.cols();
  if (fs.embeddings) io.out << " embeddings=" << fs.embeddings->cols();
  io.out << '\n';
  manifest.write(std::filesystem::path(cfg.out) / "run_manifest.json", fs.config_hash);
}

inline void cmd_split(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.features_dir, "--features");
  detail::require_path(cfg.out, "--out");
  detail::RunManifest manifest("split", cfg);
  const std::filesystem::path fdir = cfg.features_dir;
  const std::string fhash = detail::features_hash_at(fdir);
  std::ifstream sig_in(fdir / "signatures.jsonl");
  if (!sig_in) throw MissingArtifact("signatures file " + (fdir / "signatures.jsonl").string() + " not found");
  const SignatureSet sigs = read_signatures(sig_in);
  SplitOptions opt;
  opt.ratios = cfg.ratios;
  opt.batch_size = cfg.batch_size;
  opt.family_largest_first = cfg.family_largest_first;
  if (cfg.scheme == Scheme::TARGET_FAMILY)
    opt.target_family = cfg.target_family.empty() ? largest_family(sigs) : cfg.target_family;
  const auto folds = make_folds(cfg.scheme, sigs, cfg.n_folds, cfg.seed, opt);
  nlohmann::json jf = nlohmann::json::array();
  for (const auto& f : folds) {
    if (const auto bad = check_plan(f, sigs); !bad.empty()) throw NumericalError("split invariant violated: " + bad);
    jf.push_back(to_json(f));
  }
  nlohmann::json j = {{"kind", "splits"},
                      {"features_hash", fhash},
                      {"scheme", std::string(to_string(cfg.scheme))},
                      {"n_folds", cfg.n_folds},
                      {"seed", cfg.seed},
                      {"ratios", {cfg.ratios.train, cfg.ratios.val, cfg.ratios.test}},
                      {"family_order", cfg.family_largest_first ? "largest" : "shuffled"},
                      {"folds", jf}};
  j["config_hash"] = hash_json(j);
  detail::write_json_artifact(cfg.out, j);
  io.out << "wrote " << folds.size() << ' ' << to_string(cfg.scheme) << " folds to " << cfg.out << '\n';
  manifest.write(detail::manifest_for_file(cfg.out), j["config_hash"]);
}

inline void cmd_train(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.features_dir, "--features");
  detail::require_path(cfg.splits_path, "--splits");
  detail::require_path(cfg.out, "--out");
  check_model_name(cfg.model);
  detail::model_task(cfg.model, cfg.target);
  detail::RunManifest manifest("train", cfg);
  const auto splits = detail::read_splits(cfg.splits_path);
  const FeatureSet fs = load_features(cfg.features_dir);
  detail::warn_mismatch(io.err, "splits", splits.features_hash(), fs.config_hash);
  const std::filesystem::path dir = cfg.out;
  std::filesystem::create_directories(dir);

  nlohmann::json model_cfg;
  if (cfg.model == "logistic" || cfg.model == "linear") {
    LinearConfig lc = cfg.linear;
    lc.task = task_for(cfg.target);
    model_cfg = to_json(lc);
  } else if (cfg.model == "mlp") {
    cfg.mlp.validate();
    model_cfg = to_json(cfg.mlp);
  } else {
    cfg.cnn.validate();
    model_cfg = to_json(cfg.cnn);
  }

  for (std::size_t k = 0; k < splits.folds.size(); ++k) {
    const auto& plan = splits.folds[k];
    if (const auto bad = check_plan(plan, fs.sigs); !bad.empty())
      throw DataError("fold " + std::to_string(k) + " does not fit the features: " + bad);
    const auto path = dir / detail::fold_file(k, cfg.model);
    if (cfg.model == "logistic" || cfg.model == "linear") {
      LinearConfig lc = cfg.linear;
      const auto pm = train_linear(fs, cfg.mask, cfg.target, plan.train, lc);
      detail::write_json_artifact(path, to_json(pm));
    } else {
      const auto kind = cfg.model == "mlp" ? NeuralKind::MLP : NeuralKind::CNN;
      const auto in = neural_inputs(fs, kind, plan, cfg.target);
      std::ofstream os(path, std::ios::binary);
      if (!os) throw ConfigError("cannot write " + path.string());
      if (kind == NeuralKind::MLP) {
        auto c = cfg.mlp;
        c.seed = cfg.seed + k;
        const auto fit = mlp_fit(in.train_X, in.train_y, task_for(cfg.target), c, in.val_X, in.val_y);
        save_checkpoint(os, fit.model, fit.trace, {{"fold", k}});
      } else {
        auto c = cfg.cnn;
        c.seed = cfg.seed + k;
        const auto fit = cnn1d_fit(in.train_X, in.train_y, task_for(cfg.target), c, in.val_X, in.val_y);
        save_checkpoint(os, fit.model, fit.trace, {{"fold", k}});
      }
    }
    io.out << "trained fold " << k << '\n';
  }
  nlohmann::json meta = {{"kind", "model"},
                         {"model", cfg.model},
                         {"mask", cfg.model == "mlp" ? "embeddings" : cfg.model == "cnn" ? "struct" : cfg.mask.str()},
                         {"task", std::string(to_string(cfg.target))},
                         {"config", model_cfg},
                         {"seed", cfg.seed},
                         {"features_hash", fs.config_hash},
                         {"splits_hash", splits.hash()},
                         {"scheme", splits.meta.at("scheme")},
                         {"n_folds", splits.folds.size()}};
  meta["config_hash"] = hash_json(meta);
  detail::write_json_artifact(dir / "splits.json", splits.meta);
  detail::write_json_artifact(dir / "model.json", meta);
  manifest.write(dir / "run_manifest.json", meta["config_hash"]);
}

/// Test-partition metrics of one trained model directory, one entry per fold.
inline ReportRow evaluate_model_dir(const FeatureSet& fs, const std::filesystem::path& dir, bool fail_positive,
                                    std::ostream& err) {
  const auto meta = detail::read_json_artifact(dir / "model.json", "trained model");
  const auto splits = detail::read_splits(dir / "splits.json");
  detail::warn_mismatch(err, "models in " + dir.string(), meta.at("features_hash").get<std::string>(), fs.config_hash);
  const std::string model = meta.at("model").get<std::string>();
  const TargetKind target = parse_target(meta.at("task").get<std::string>());
  const Vector y = target_values(fs, target);
  std::vector<MetricValues> per_fold;
  for (std::size_t k = 0; k < splits.folds.size(); ++k) {
    const auto& plan = splits.folds[k];
    if (const auto bad = check_plan(plan, fs.sigs); !bad.empty())
      throw DataError("fold " + std::to_string(k) + " does not fit the features: " + bad);
    const auto path = dir / detail::fold_file(k, model);
    const auto test = rows_with_target(y, plan.test);
    Vector pred;
    if (model == "logistic" || model == "linear") {
      const auto pm = linear_pipeline_from_json(detail::read_json_artifact(path, "fold model"));
      pred = predict_rows(pm, fs, test);
    } else {
      std::ifstream in(path, std::ios::binary);
      if (!in) throw MissingArtifact("fold model " + path.string() + " not found");
      const auto net = load_checkpoint(in);
      const auto inputs = neural_inputs(fs, model == "mlp" ? NeuralKind::MLP : NeuralKind::CNN, plan, target);
      pred = net.predict(inputs.test_X);
    }
    per_fold.push_back(fold_metrics(target, pred, y(as_index(test)), fail_positive));
  }
  return {model, meta.at("mask").get<std::string>(), splits.meta.at("scheme").get<std::string>(),
          std::string(to_string(target)), aggregate_metrics(per_fold)};
}

inline Report cmd_eval(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.features_dir, "--features");
  if (cfg.inputs.empty()) throw ConfigError("eval needs at least one trained model directory (--models)");
  detail::RunManifest manifest("eval", cfg);
  for (const auto& d : cfg.inputs)
    if (!std::filesystem::exists(std::filesystem::path(d) / "model.json"))
      throw MissingArtifact("trained model " + (std::filesystem::path(d) / "model.json").string() + " not found");
  const FeatureSet fs = load_features(cfg.features_dir);
  Report rep;
  rep.config_hash = fs.config_hash;
  for (const auto& d : cfg.inputs) rep.rows.push_back(evaluate_model_dir(fs, d, cfg.fail_positive, io.err));
  if (!cfg.out.empty()) {
    detail::write_json_artifact(cfg.out, to_json(rep));
    manifest.write(detail::manifest_for_file(cfg.out), rep.config_hash);
  }
  io.out << format_report(rep, cfg.format);
  return rep;
}

inline Report cmd_ablate(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.features_dir, "--features");
  detail::require_path(cfg.splits_path, "--splits");
  detail::RunManifest manifest("ablate", cfg);
  const auto splits = detail::read_splits(cfg.splits_path);
  const FeatureSet fs = load_features(cfg.features_dir);
  detail::warn_mismatch(io.err, "splits", splits.features_hash(), fs.config_hash);
  LinearConfig lc = cfg.linear;
  lc.task = task_for(cfg.target);
  const auto rows = ablation_linear(fs, splits.folds, cfg.target, lc, cfg.fail_positive);
  Report rep;
  rep.config_hash = fs.config_hash;
  const std::string model = lc.task == Task::CLASSIFY ? "logistic" : "linear";
  for (const auto& r : rows)
    rep.rows.push_back({model, r.mask.str(), splits.meta.at("scheme").get<std::string>(),
                        std::string(to_string(cfg.target)), r.metrics});
  if (!cfg.out.empty()) {
    detail::write_json_artifact(cfg.out, to_json(rep));
    manifest.write(detail::manifest_for_file(cfg.out), rep.config_hash);
  }
  io.out << format_report(rep, cfg.format);
  return rep;
}

/// Searches one fold's train partition, selecting on its val partition.
inline SearchResult cmd_tune(const RunConfig& cfg, CommandIo io = {}) {
  detail::require_path(cfg.features_dir, "--features");
  detail::require_path(cfg.splits_path, "--splits");
  detail::require_path(cfg.out, "--out");
  check_model_name(cfg.model);
  detail::model_task(cfg.model, cfg.target);
  detail::RunManifest manifest("tune", cfg);
  const auto splits = detail::read_splits(cfg.splits_path);
  if (cfg.tune_fold >= splits.folds.size())
    throw ConfigError("tune fold " + std::to_string(cfg.tune_fold) + " out of range");
  const FeatureSet fs = load_features(cfg.features_dir);
  detail::warn_mismatch(io.err, "splits", splits.features_hash(), fs.config_hash);
  const SplitPlan& plan = splits.folds[cfg.tune_fold];

  const bool linear = cfg.model == "logistic" || cfg.model == "linear";
  const SearchSpace space = cfg.search_space ? search_space_from_json(*cfg.search_space)
                            : linear          ? linear_search_space()
                            : cfg.model == "mlp" ? mlp_search_space()
                                                 : cnn_search_space();
  DataHandle train, val;
  train.partition = Partition::TRAIN;
  val.partition = Partition::VAL;
  const Vector y = target_values(fs, cfg.target);
  if (linear) {
    train.rows = rows_with_target(y, plan.train);
    val.rows = rows_with_target(y, plan.val);
    if (val.rows.empty()) throw DataError("tuning needs a non-empty validation partition");
    std::optional<BiophysMeans> means;
    if (cfg.mask.has(Modality::BIO)) {
      BiophysMeans m{};
      fold_block(fs, Modality::BIO, train.rows, &m);
      means = m;
    }
    std::vector<std::size_t> cont;
    train.X = design_rows(fs, cfg.mask, means, train.rows, &cont);
    val.X = design_rows(fs, cfg.mask, means, val.rows);
    const auto sc = Scaler::fit(train.X, cont);
    sc.apply_in_place(train.X);
    sc.apply_in_place(val.X);
    train.y = y(as_index(train.rows));
    val.y = y(as_index(val.rows));
  } else {
    auto in = neural_inputs(fs, cfg.model == "mlp" ? NeuralKind::MLP : NeuralKind::CNN, plan, cfg.target);
    train.X = std::move(in.train_X);
    train.y = std::move(in.train_y);
    val.X = std::move(in.val_X);
    val.y = std::move(in.val_y);
  }

  const TargetKind target = cfg.target;
  const bool fail_positive = cfg.fail_positive;
  Objective objective = [&](const nlohmann::json& c, const DataHandle& tr, const DataHandle& va) {
    Vector pred;
    if (linear) {
      LinearConfig lc = cfg.linear;
      lc.task = task_for(target);
      if (c.contains("C")) lc.inverse_reg_C = c.at("C").get<double>();
      if (c.contains("penalty")) lc.penalty = parse_penalty(c.at("penalty").get<std::string>());
      pred = predict(fit(tr.X, tr.y, lc), va.X);
    } else if (cfg.model == "mlp") {
      nlohmann::json merged = to_json(cfg.mlp);
      merged.update(c);
      merged["seed"] = cfg.seed;
      const auto mc = mlp_config_from_json(merged);
      pred = mlp_fit(tr.X, tr.y, task_for(target), mc, va.X, va.y).model.predict(va.X);
    } else {
      nlohmann::json merged = to_json(cfg.cnn);
      merged.update(c);
      merged["seed"] = cfg.seed;
      const auto cc = cnn_config_from_json(merged);
      pred = cnn1d_fit(tr.X, tr.y, task_for(target), cc, va.X, va.y).model.predict(va.X);
    }
    return detail::selection_metric(target, pred, va.y, fail_positive);
  };

  const std::filesystem::path dir = cfg.out;
  std::filesystem::create_directories(dir);
  std::ofstream log(dir / "trials.jsonl");
  SearchResult res;
  if (cfg.search == "grid") res = grid_search(space, train, val, objective, true, cfg.threads, &log);
  else if (cfg.search == "random")
    res = random_search(space, cfg.n_trials, cfg.seed, train, val, objective, true, cfg.threads, &log);
  else throw ConfigError("unknown search method '" + cfg.search + "' (grid|random)");

  nlohmann::json best = {{"kind", "tuning"},
                         {"model", cfg.model},
                         {"mask", cfg.mask.str()},
                         {"task", std::string(to_string(cfg.target))},
                         {"space", to_json(space)},
                         {"best_config", res.best_config},
                         {"best_value", res.best_value},
                         {"best_trial", res.best_index},
                         {"n_trials", res.trials.size()},
                         {"features_hash", fs.config_hash},
                         {"splits_hash", splits.hash()},
                         {"fold", cfg.tune_fold}};
  best["config_hash"] = hash_json(best);
  detail::write_json_artifact(dir / "best.json", best);
  io.out << "best trial " << res.best_index << " value " << res.best_value << " config " << res.best_config.dump()
         << '\n';
  manifest.write(dir / "run_manifest.json", best["config_hash"]);
  return res;
}

inline Report cmd_report(const RunConfig& cfg, CommandIo io = {}) {
  if (cfg.inputs.empty()) throw ConfigError("report needs at least one report file");
  Report merged;
  for (const auto& p : cfg.inputs) {
    const auto r = report_from_json(detail::read_json_artifact(p, "report"));
    if (merged.rows.empty() && merged.config_hash.empty()) merged.config_hash = r.config_hash;
    else if (r.config_hash != merged.config_hash) {
      if (!cfg.force)
        throw ConfigError("report " + p + " has config hash " + r.config_hash + " but earlier reports have " +
                          merged.config_hash + "; pass --force to combine them");
      io.err << "warning: combining reports with different config hashes\n";
      merged.config_hash = "mixed";
    }
    merged.rows.insert(merged.rows.end(), r.rows.begin(), r.rows.end());
  }
  if (!cfg.out.empty()) detail::write_json_artifact(cfg.out, to_json(merged));
  io.out << format_report(merged, cfg.format);
  return merged;
}

/// Paired-structure features for one parental/scFv pair: RMSDs on stdout and,
/// with an output path, the per-residue matrix as JSON rows.
inline StructPairFeatures cmd_structfeat(const RunConfig& cfg, CommandIo io = {}) {
  if (cfg.inputs.size() != 2) throw ConfigError("structfeat needs --pair <parental file> <scfv file>");
  for (const auto& p : cfg.inputs)
    if (!std::filesystem::exists(p)) throw MissingArtifact("structure file " + p + " not found");
  const auto f = pair_features(read_structure_file(cfg.inputs[0]), read_structure_file(cfg.inputs[1]));
  io.out << std::setprecision(10) << "rmsd_vh\t" << f.rmsd_vh << "\nrmsd_vl\t" << f.rmsd_vl << '\n';
  if (!cfg.out.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (Index r = 0; r < f.per_residue.rows(); ++r) rows.push_back(to_std(f.per_residue.row(r).transpose()));
    detail::write_json_artifact(cfg.out, {{"rmsd_vh", f.rmsd_vh},
                                          {"rmsd_vl", f.rmsd_vl},
                                          {"channels", {"px", "py", "pz", "sx", "sy", "sz", "pgap", "sgap"}},
                                          {"per_residue", rows}});
  }
  return f;
}

/// Maps library errors to exit codes: 2 config or input data, 3 missing
/// artifact, 4 numerical failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const MissingArtifact*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e)) return 4;
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const DataError*>(&e)) return 2;
  return 1;
}

template <class F>
int run_guarded(F&& f, std::ostream& err = std::cerr) {
  try {
    f();
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
}

}  // namespace reformat
