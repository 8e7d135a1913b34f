#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "reformat/reformat.hpp"

namespace {

using reformat::RunConfig;

/// Flags write into string slots; after parsing, the config file is loaded and
/// each flag that was actually given is applied on top of it.
class Overrides {
 public:
  void add(CLI::App* app, const std::string& name, const std::string& help,
           std::function<void(RunConfig&, const std::string&)> apply) {
    auto slot = std::make_shared<std::string>();
    CLI::Option* opt = app->add_option(name, *slot, help);
    items_.push_back({opt, slot, std::move(apply)});
  }

  void add_list(CLI::App* app, const std::string& name, const std::string& help,
                std::function<void(RunConfig&, const std::vector<std::string>&)> apply) {
    auto slot = std::make_shared<std::vector<std::string>>();
    CLI::Option* opt = app->add_option(name, *slot, help);
    lists_.push_back({opt, slot, std::move(apply)});
  }

  void add_flag(CLI::App* app, const std::string& name, const std::string& help, std::function<void(RunConfig&)> apply) {
    CLI::Option* opt = app->add_flag(name, help);
    flags_.push_back({opt, std::move(apply)});
  }

  void apply(RunConfig& cfg) const {
    for (const auto& i : items_)
      if (i.opt->count() > 0) i.apply(cfg, *i.slot);
    for (const auto& i : lists_)
      if (i.opt->count() > 0) i.apply(cfg, *i.slot);
    for (const auto& f : flags_)
      if (f.opt->count() > 0) f.apply(cfg);
  }

 private:
  struct Item {
    CLI::Option* opt;
    std::shared_ptr<std::string> slot;
    std::function<void(RunConfig&, const std::string&)> apply;
  };
  struct ListItem {
    CLI::Option* opt;
    std::shared_ptr<std::vector<std::string>> slot;
    std::function<void(RunConfig&, const std::vector<std::string>&)> apply;
  };
  struct Flag {
    CLI::Option* opt;
    std::function<void(RunConfig&)> apply;
  };
  std::vector<Item> items_;
  std::vector<ListItem> lists_;
  std::vector<Flag> flags_;
};

double to_double(const std::string& s, const std::string& flag) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw reformat::ConfigError(flag + " expects a number, got '" + s + "'");
  }
}

long to_long(const std::string& s, const std::string& flag) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(s, &pos);
    if (pos != s.size() || v < 0) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw reformat::ConfigError(flag + " expects a non-negative integer, got '" + s + "'");
  }
}

void add_seed(Overrides& o, CLI::App* app) {
  o.add(app, "--seed", "Random seed", [](RunConfig& c, const std::string& v) {
    c.seed = static_cast<std::uint64_t>(to_long(v, "--seed"));
  });
}

void add_out(Overrides& o, CLI::App* app, const std::string& help) {
  o.add(app, "--out", help, [](RunConfig& c, const std::string& v) { c.out = v; });
}

void add_features(Overrides& o, CLI::App* app) {
  o.add(app, "--features", "Feature directory from `featurize`",
        [](RunConfig& c, const std::string& v) { c.features_dir = v; });
}

void add_splits(Overrides& o, CLI::App* app) {
  o.add(app, "--splits", "Splits file from `split`", [](RunConfig& c, const std::string& v) { c.splits_path = v; });
}

void add_mask(Overrides& o, CLI::App* app) {
  o.add(app, "--mask", "Modalities, e.g. seq,struct,rmsd,bio",
        [](RunConfig& c, const std::string& v) { c.mask = reformat::ModalityMask::parse(v); });
}

void add_task(Overrides& o, CLI::App* app) {
  o.add(app, "--task", "Target: qc, yield or sec",
        [](RunConfig& c, const std::string& v) { c.target = reformat::parse_target(v); });
}

void add_positive(Overrides& o, CLI::App* app) {
  o.add(app, "--positive", "Positive class for classification metrics: fail or pass",
        [](RunConfig& c, const std::string& v) {
          if (v != "fail" && v != "pass") throw reformat::ConfigError("--positive must be fail or pass");
          c.fail_positive = v == "fail";
        });
}

void add_linear(Overrides& o, CLI::App* app) {
  o.add(app, "--C", "Inverse regularization strength",
        [](RunConfig& c, const std::string& v) { c.linear.inverse_reg_C = to_double(v, "--C"); });
  o.add(app, "--penalty", "l1, l2 or none",
        [](RunConfig& c, const std::string& v) { c.linear.penalty = reformat::parse_penalty(v); });
}

void add_model(Overrides& o, CLI::App* app) {
  o.add(app, "--model", "logistic, linear, mlp or cnn", [](RunConfig& c, const std::string& v) {
    reformat::check_model_name(v);
    c.model = v;
  });
  o.add(app, "--epochs", "Epoch cap for mlp/cnn", [](RunConfig& c, const std::string& v) {
    const int e = static_cast<int>(to_long(v, "--epochs"));
    c.mlp.max_epochs = e;
    c.cnn.epochs = e;
  });
}

void add_format(Overrides& o, CLI::App* app) {
  o.add(app, "--format", "table or tsv", [](RunConfig& c, const std::string& v) {
    if (v != "table" && v != "tsv") throw reformat::ConfigError("--format must be table or tsv");
    c.format = v;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Predict scFv reformatting outcomes from sequence, structure and biophysical features"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "JSON run config; flags override its values");

  Overrides o;
  std::function<void(const RunConfig&)> run;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic benchmark dataset");
  add_out(o, gen, "Output dataset directory");
  add_seed(o, gen);
  o.add(gen, "--families", "Number of parental families", [](RunConfig& c, const std::string& v) {
    c.gen.n_families = static_cast<int>(to_long(v, "--families"));
  });
  o.add(gen, "--structure-weight", "Planted structure signal weight", [](RunConfig& c, const std::string& v) {
    c.gen.structure_signal_weight = to_double(v, "--structure-weight");
  });
  gen->callback([&] { run = [](const RunConfig& c) { reformat::cmd_gen(c); }; });

  auto* feat = app.add_subcommand("featurize", "Compute feature blocks for a dataset directory");
  o.add(feat, "--data", "Dataset directory with records.csv", [](RunConfig& c, const std::string& v) { c.data_dir = v; });
  add_out(o, feat, "Output feature directory");
  feat->callback([&] { run = [](const RunConfig& c) { reformat::cmd_featurize(c); }; });

  auto* split = app.add_subcommand("split", "Create cross-validation folds");
  add_features(o, split);
  add_out(o, split, "Output splits file");
  add_seed(o, split);
  o.add(split, "--scheme", "signature, family or target",
        [](RunConfig& c, const std::string& v) { c.scheme = reformat::parse_scheme(v); });
  o.add(split, "--folds", "Number of folds", [](RunConfig& c, const std::string& v) {
    c.n_folds = static_cast<std::size_t>(to_long(v, "--folds"));
  });
  o.add_list(split, "--ratios", "Train, val and test fractions", [](RunConfig& c, const std::vector<std::string>& v) {
    if (v.size() != 3) throw reformat::ConfigError("--ratios needs three values");
    c.ratios = {to_double(v[0], "--ratios"), to_double(v[1], "--ratios"), to_double(v[2], "--ratios")};
  });
  o.add(split, "--target-family", "Held-out family for the target scheme",
        [](RunConfig& c, const std::string& v) { c.target_family = v; });
  o.add(split, "--batch-size", "Target-family training batch size", [](RunConfig& c, const std::string& v) {
    c.batch_size = static_cast<std::size_t>(to_long(v, "--batch-size"));
  });
  o.add(split, "--family-order", "Family split visit order: largest or shuffled",
        [](RunConfig& c, const std::string& v) { c.family_largest_first = reformat::parse_family_order(v); });
  split->callback([&] { run = [](const RunConfig& c) { reformat::cmd_split(c); }; });

  auto* train = app.add_subcommand("train", "Train one model per fold");
  add_features(o, train);
  add_splits(o, train);
  add_out(o, train, "Output model directory");
  add_seed(o, train);
  add_model(o, train);
  add_mask(o, train);
  add_task(o, train);
  add_linear(o, train);
  train->callback([&] { run = [](const RunConfig& c) { reformat::cmd_train(c); }; });

  auto* eval = app.add_subcommand("eval", "Score trained models on their test partitions");
  add_features(o, eval);
  o.add_list(eval, "--models", "Trained model directories",
             [](RunConfig& c, const std::vector<std::string>& v) { c.inputs = v; });
  add_out(o, eval, "Output report file");
  add_positive(o, eval);
  add_format(o, eval);
  eval->callback([&] { run = [](const RunConfig& c) { reformat::cmd_eval(c); }; });

  auto* ablate = app.add_subcommand("ablate", "Linear modality ablation over the seven masks");
  add_features(o, ablate);
  add_splits(o, ablate);
  add_out(o, ablate, "Output report file");
  add_task(o, ablate);
  add_linear(o, ablate);
  add_positive(o, ablate);
  add_format(o, ablate);
  ablate->callback([&] { run = [](const RunConfig& c) { reformat::cmd_ablate(c); }; });

  auto* tune = app.add_subcommand("tune", "Hyperparameter search on one fold's validation partition");
  add_features(o, tune);
  add_splits(o, tune);
  add_out(o, tune, "Output directory for trials.jsonl and best.json");
  add_seed(o, tune);
  add_model(o, tune);
  add_mask(o, tune);
  add_task(o, tune);
  add_positive(o, tune);
  o.add(tune, "--search", "grid or random", [](RunConfig& c, const std::string& v) { c.search = v; });
  o.add(tune, "--trials", "Random-search trials", [](RunConfig& c, const std::string& v) {
    c.n_trials = static_cast<std::size_t>(to_long(v, "--trials"));
  });
  o.add(tune, "--fold", "Fold whose train/val partitions are used", [](RunConfig& c, const std::string& v) {
    c.tune_fold = static_cast<std::size_t>(to_long(v, "--fold"));
  });
  o.add(tune, "--threads", "Parallel trials", [](RunConfig& c, const std::string& v) {
    c.threads = static_cast<unsigned>(to_long(v, "--threads"));
  });
  tune->callback([&] { run = [](const RunConfig& c) { reformat::cmd_tune(c); }; });

  auto* report = app.add_subcommand("report", "Merge and print metric reports");
  o.add_list(report, "inputs", "Report files", [](RunConfig& c, const std::vector<std::string>& v) { c.inputs = v; });
  add_out(o, report, "Optional merged report file");
  add_format(o, report);
  o.add_flag(report, "--force", "Combine reports with different config hashes", [](RunConfig& c) { c.force = true; });
  report->callback([&] { run = [](const RunConfig& c) { reformat::cmd_report(c); }; });

  auto* sf = app.add_subcommand("structfeat", "Paired-structure features for one parental/scFv pair");
  auto* pair = sf->add_option("--pair", "Parental and scFv structure files")->expected(2);
  add_out(o, sf, "Optional JSON file for the per-residue matrix");
  sf->callback([&, pair] {
    const auto files = pair->as<std::vector<std::string>>();
    run = [files](const RunConfig& c) {
      RunConfig x = c;
      x.inputs = files;
      reformat::cmd_structfeat(x);
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  return reformat::run_guarded([&] {
    RunConfig cfg = config_path.empty() ? RunConfig{} : reformat::load_run_config(config_path);
    o.apply(cfg);
    run(cfg);
  });
}
