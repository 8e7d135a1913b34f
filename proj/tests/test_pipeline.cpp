#include <gtest/gtest.h>

#include "reformat/pipeline.hpp"
#include "test_util.hpp"

using namespace reformat;

namespace {

const SyntheticDataset& dataset() {
  static const SyntheticDataset ds = [] {
    GenConfig c;
    c.n_families = 6;
    c.per_family_min = 8;
    c.per_family_max = 14;
    c.embedding_dim = 4;
    c.bio_missing_rate = 0.1;
    c.seed = 3;
    return generate(c);
  }();
  return ds;
}

const FeatureSet& features() {
  static const FeatureSet fs = featurize_synthetic(dataset());
  return fs;
}

/// Largest elementwise difference; NaN must match NaN.
double max_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  double d = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double x = a.data()[i], y = b.data()[i];
    if (std::isnan(x) || std::isnan(y)) {
      if (std::isnan(x) != std::isnan(y)) return INFINITY;
      continue;
    }
    d = std::max(d, std::abs(x - y));
  }
  return d;
}

LinearConfig l2(double C) {
  LinearConfig c;
  c.penalty = Penalty::L2;
  c.inverse_reg_C = C;
  return c;
}

}  // namespace

TEST(Featurize, BlocksAndShapes) {
  const auto& fs = features();
  const Index n = fs.rows();
  EXPECT_EQ(static_cast<std::size_t>(n), dataset().signatures.size());
  for (auto m : kAllModalities) {
    ASSERT_TRUE(fs.has(m));
    EXPECT_EQ(fs.blocks.at(m).values.rows(), n);
  }
  EXPECT_EQ(fs.blocks.at(Modality::STRUCT).values.cols(), kStructFeatureDim);
  EXPECT_EQ(fs.blocks.at(Modality::RMSD).values.cols(), 2);
  ASSERT_TRUE(fs.embeddings.has_value());
  EXPECT_EQ(fs.embeddings->cols(), 8);
  const Vector y = target_values(fs, TargetKind::QC);
  for (Index i = 0; i < n; ++i) EXPECT_TRUE(y[i] == 0.0 || y[i] == 1.0);
  // The BIO block keeps missing cells for per-fold imputation.
  EXPECT_TRUE(fs.blocks.at(Modality::BIO).values.array().isNaN().any());
  EXPECT_THROW(featurize(SignatureSet{}, {}), DataError);
}

TEST(Featurize, DirectoryMatchesInMemory) {
  const auto dir = testutil::temp_dir("pipe_dir");
  write_dataset(dataset(), dir);
  const auto disk = featurize_directory(dir);
  const auto& mem = features();
  ASSERT_EQ(disk.rows(), mem.rows());
  for (auto m : kAllModalities) EXPECT_LE(max_diff(disk.blocks.at(m).values, mem.blocks.at(m).values), 1e-6) << to_string(m);
  std::filesystem::remove_all(dir);
  EXPECT_THROW(featurize_directory(dir), MissingArtifact);
}

TEST(FeatureArtifacts, SaveLoadRoundTrip) {
  const auto dir = testutil::temp_dir("pipe_feat");
  const auto& fs = features();
  save_features(fs, dir);
  const auto back = load_features(dir);
  EXPECT_EQ(back.rows(), fs.rows());
  EXPECT_EQ(back.config_hash, fs.config_hash);
  EXPECT_EQ(back.vocab.ids(), fs.vocab.ids());
  for (auto m : kAllModalities) {
    EXPECT_EQ(max_diff(fs.blocks.at(m).values, back.blocks.at(m).values), 0.0) << to_string(m);
  }
  EXPECT_EQ(*back.embeddings, *fs.embeddings);
  std::filesystem::remove(dir / "seq_codes.bin");
  EXPECT_THROW(load_features(dir), MissingArtifact);
  std::filesystem::remove_all(dir);
}

TEST(KernelPath, MatchesExplicitModel) {
  const auto& fs = features();
  const auto folds = make_folds(Scheme::PARENTAL_FAMILY, fs.sigs, 3, 1);
  for (const auto& mask : {ModalityMask{Modality::SEQ}, ModalityMask{Modality::RMSD, Modality::BIO},
                           ModalityMask{Modality::SEQ, Modality::STRUCT, Modality::BIO}})
    for (auto target : {TargetKind::QC, TargetKind::YIELD}) {
      const auto& plan = folds[0];
      const Vector y = target_values(fs, target);
      const auto train = rows_with_target(y, plan.train);
      const auto test = rows_with_target(y, plan.test);
      auto cfg = l2(0.7);
      cfg.task = task_for(target);
      const Vector explicit_pred = predict_rows(train_linear(fs, mask, target, train, cfg), fs, test);
      FoldKernels k(fs, train, test);
      const auto [Ktr, Kte] = k.kernels(mask);
      const Vector kernel_pred = kernel_fit_predict(Ktr, y(as_index(train)), Kte, cfg);
      const double scale = std::max(1.0, explicit_pred.cwiseAbs().maxCoeff());
      EXPECT_LE((kernel_pred - explicit_pred).cwiseAbs().maxCoeff(), 1e-6 * scale)
          << mask.str() << " " << to_string(target);
    }
}

TEST(KernelPath, RequiresL2) {
  LinearConfig c;
  c.penalty = Penalty::L1;
  EXPECT_THROW(kernel_fit_predict(Matrix::Identity(2, 2), Vector::Ones(2), Matrix::Identity(2, 2), c), ConfigError);
}

TEST(LinearPipeline, JsonRoundTripAndVocabCheck) {
  const auto& fs = features();
  std::vector<std::size_t> rows(static_cast<std::size_t>(fs.rows()));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  const auto pm = train_linear(fs, ModalityMask{Modality::RMSD, Modality::BIO}, TargetKind::QC, rows, l2(1.0));
  const auto back = linear_pipeline_from_json(to_json(pm));
  EXPECT_EQ(predict_rows(back, fs, rows), predict_rows(pm, fs, rows));
  auto other = back;
  other.linkers.push_back("LNK99");
  EXPECT_THROW(predict_rows(other, fs, rows), DataError);
}

TEST(CrossValidate, FoldCountAndMetrics) {
  const auto& fs = features();
  const auto folds = make_folds(Scheme::SIGNATURE, fs.sigs, 4, 2);
  const auto r = cross_validate_linear(fs, ModalityMask{Modality::SEQ, Modality::RMSD}, folds, TargetKind::QC, l2(1.0));
  EXPECT_EQ(r.per_fold.size(), 4u);
  const auto& a = r.metrics.at("auroc");
  EXPECT_EQ(a.values.size(), 4u);
  EXPECT_GE(a.mean, 0.0);
  EXPECT_LE(a.mean, 1.0);
}

TEST(NeuralInputs, PartitionsAndStandardization) {
  const auto& fs = features();
  const auto plan = make_folds(Scheme::SIGNATURE, fs.sigs, 3, 4)[0];
  const auto in = neural_inputs(fs, NeuralKind::MLP, plan, TargetKind::QC);
  EXPECT_EQ(static_cast<std::size_t>(in.train_X.rows() + in.val_X.rows() + in.test_X.rows()),
            static_cast<std::size_t>(fs.rows()));
  const Vector mean = in.train_X.colwise().mean();
  EXPECT_LE(mean.cwiseAbs().maxCoeff(), 1e-9);
  const auto cnn = neural_inputs(fs, NeuralKind::CNN, plan, TargetKind::YIELD);
  EXPECT_EQ(cnn.train_X.cols(), kStructFeatureDim);
  FeatureSet bare = fs;
  bare.embeddings.reset();
  EXPECT_THROW(neural_inputs(bare, NeuralKind::MLP, plan, TargetKind::QC), MissingArtifact);
}
