#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "reformat/bio_features.hpp"
#include "reformat/common.hpp"
#include "reformat/dataset.hpp"
#include "reformat/evaluation.hpp"
#include "reformat/feature_fusion.hpp"
#include "reformat/linear_models.hpp"
#include "reformat/neural.hpp"
#include "reformat/seq_features.hpp"
#include "reformat/splits.hpp"
#include "reformat/struct_features.hpp"
#include "reformat/synthetic.hpp"

namespace reformat {

enum class TargetKind { QC, YIELD, SEC };

inline std::string_view to_string(TargetKind t) {
  return t == TargetKind::QC ? "qc" : t == TargetKind::YIELD ? "yield" : "sec";
}

inline TargetKind parse_target(std::string_view s) {
  if (s == "qc") return TargetKind::QC;
  if (s == "yield") return TargetKind::YIELD;
  if (s == "sec") return TargetKind::SEC;
  throw ConfigError("unknown target '" + std::string(s) + "' (qc|yield|sec)");
}

inline Task task_for(TargetKind t) { return t == TargetKind::YIELD ? Task::REGRESS : Task::CLASSIFY; }

/// All per-signature features. Rows follow `sigs`. The BIO block keeps NaN
/// for missing values; imputation happens per fold from training rows.
struct FeatureSet {
  SignatureSet sigs;
  LinkerVocab vocab;
  std::vector<AlignedChain> vh, vl;
  BlockSet blocks;
  std::optional<Matrix> embeddings;  // pooled VH followed by pooled VL
  std::string config_hash;

  Index rows() const { return static_cast<Index>(sigs.size()); }
  bool has(Modality m) const { return blocks.count(m) > 0; }

  /// Gram matrix of the one-hot sequence block, computed on first use.
  const Matrix& seq_gram() const {
    if (!seq_gram_) {
      const Matrix& S = blocks.at(Modality::SEQ).values;
      Matrix G = Matrix::Zero(S.rows(), S.rows());
      G.selfadjointView<Eigen::Lower>().rankUpdate(S);
      seq_gram_ = Matrix(G.selfadjointView<Eigen::Lower>());
    }
    return *seq_gram_;
  }

 private:
  mutable std::optional<Matrix> seq_gram_;
};

/// Per-signature inputs beyond the signature itself; any lookup may be empty.
struct FeatureSources {
  std::function<std::optional<std::pair<StructureFile, StructureFile>>(const ScfvSignature&)> structures;
  std::function<std::optional<BiophysRow>(const ScfvSignature&)> biophys;
  std::function<std::optional<PositionMap>(const ScfvSignature&, Chain)> position_maps;
  std::function<std::optional<std::pair<EmbeddingMatrix, EmbeddingMatrix>>(const ScfvSignature&)> embeddings;
};

inline Matrix seq_block_from_codes(const FeatureSet& fs) {
  Matrix S(fs.rows(), static_cast<Index>(one_hot_dim(fs.vocab)));
  for (Index i = 0; i < fs.rows(); ++i) {
    const auto& s = fs.sigs.signatures[static_cast<std::size_t>(i)];
    S.row(i) = one_hot_features(fs.vh[static_cast<std::size_t>(i)], fs.vl[static_cast<std::size_t>(i)],
                                s.key.orientation, s.key.linker, fs.vocab)
                   .transpose();
  }
  return S;
}

inline FeatureSet featurize(const SignatureSet& sigs, const FeatureSources& src) {
  if (sigs.empty()) throw DataError("no signatures to featurize");
  FeatureSet fs;
  fs.sigs = sigs;
  fs.vocab = LinkerVocab::from(sigs);
  const auto n = static_cast<Index>(sigs.size());
  for (const auto& s : sigs.signatures) {
    std::optional<PositionMap> mh, ml;
    if (src.position_maps) {
      mh = src.position_maps(s, Chain::VH);
      ml = src.position_maps(s, Chain::VL);
    }
    fs.vh.push_back(align_chain(s.key.vh, mh));
    fs.vl.push_back(align_chain(s.key.vl, ml));
  }
  fs.blocks[Modality::SEQ] = {Modality::SEQ, seq_block_from_codes(fs), one_hot_labels(fs.vocab)};

  if (src.structures) {
    FeatureBlock st{Modality::STRUCT, Matrix(n, kStructFeatureDim), {}};
    FeatureBlock rm{Modality::RMSD, Matrix(n, 2), {"rmsd_vh", "rmsd_vl"}};
    for (Index i = 0; i < n; ++i) {
      const auto& s = sigs.signatures[static_cast<std::size_t>(i)];
      const auto pair = src.structures(s);
      if (!pair) throw MissingArtifact("structures for signature " + s.key.id() + " not found");
      const auto f = pair_features(pair->first, pair->second);
      st.values.row(i) = f.flattened().transpose();
      rm.values(i, 0) = f.rmsd_vh;
      rm.values(i, 1) = f.rmsd_vl;
    }
    static const char* channel_names[kStructChannels] = {"px", "py", "pz", "sx", "sy", "sz", "pgap", "sgap"};
    for (int r = 0; r < kStructPositions; ++r)
      for (int c = 0; c < kStructChannels; ++c)
        st.labels.push_back(std::string(r < kAlignedLength ? "VH:" : "VL:") + std::to_string(r % kAlignedLength + 1) +
                            ":" + channel_names[c]);
    fs.blocks[Modality::STRUCT] = std::move(st);
    fs.blocks[Modality::RMSD] = std::move(rm);
  }

  if (src.biophys) {
    std::vector<BiophysRow> rows;
    for (const auto& s : sigs.signatures) rows.push_back(src.biophys(s).value_or(BiophysRow{}));
    fs.blocks[Modality::BIO] = {Modality::BIO, rows_to_matrix(rows), {kBioNames.begin(), kBioNames.end()}};
  }

  if (src.embeddings) {
    Matrix E;
    for (Index i = 0; i < n; ++i) {
      const auto& s = sigs.signatures[static_cast<std::size_t>(i)];
      const auto e = src.embeddings(s);
      if (!e) {
        if (i == 0) break;  // no embeddings at all
        throw MissingArtifact("embeddings for signature " + s.key.id() + " not found");
      }
      const Vector a = pool_embedding(e->first), b = pool_embedding(e->second);
      if (i == 0) E.resize(n, a.size() + b.size());
      if (a.size() + b.size() != E.cols()) throw DataError("embedding dimension differs between signatures");
      E.row(i) << a.transpose(), b.transpose();
    }
    if (E.size() > 0) fs.embeddings = std::move(E);
  }
  return fs;
}

inline FeatureSet featurize_synthetic(const SyntheticDataset& ds) {
  const SignatureSet sigs = synthetic_signatures(ds);
  std::map<SigKey, const SyntheticSignature*> by_key;
  for (const auto& s : ds.signatures) by_key[s.key] = &s;
  FeatureSources src;
  src.structures = [&](const ScfvSignature& s) -> std::optional<std::pair<StructureFile, StructureFile>> {
    auto it = by_key.find(s.key);
    if (it == by_key.end()) return std::nullopt;
    return std::make_pair(it->second->parental, it->second->scfv);
  };
  src.biophys = [&](const ScfvSignature& s) -> std::optional<BiophysRow> {
    auto it = by_key.find(s.key);
    if (it == by_key.end()) return std::nullopt;
    return it->second->biophys;
  };
  src.embeddings = [&](const ScfvSignature& s) -> std::optional<std::pair<EmbeddingMatrix, EmbeddingMatrix>> {
    auto it = by_key.find(s.key);
    if (it == by_key.end() || !it->second->vh_embedding) return std::nullopt;
    return std::make_pair(*it->second->vh_embedding, *it->second->vl_embedding);
  };
  FeatureSet fs = featurize(sigs, src);
  fs.config_hash = hex64(fnv1a(ds.manifest.at("config").dump()));
  return fs;
}

/// Reads the layout written by `write_dataset`: records.csv is required;
/// structures/, biophys.csv, embeddings/ and position_maps/ are optional.
inline FeatureSet featurize_directory(const std::filesystem::path& dir,
                                      std::vector<RowDiagnostic>* rejected = nullptr) {
  namespace fs = std::filesystem;
  std::ifstream rec(dir / "records.csv");
  if (!rec) throw MissingArtifact("records file " + (dir / "records.csv").string() + " not found");
  auto parsed = parse_records(rec);
  if (rejected) *rejected = parsed.rejected;
  const SignatureSet sigs = aggregate_by_signature(parsed.records);
  FeatureSources src;
  if (fs::is_directory(dir / "structures")) {
    src.structures = [dir](const ScfvSignature& s) -> std::optional<std::pair<StructureFile, StructureFile>> {
      const auto p = dir / "structures" / (s.key.id() + "_parental.csv");
      const auto q = dir / "structures" / (s.key.id() + "_scfv.csv");
      if (!fs::exists(p) || !fs::exists(q)) return std::nullopt;
      return std::make_pair(read_structure_file(p.string()), read_structure_file(q.string()));
    };
  }
  std::map<std::string, BiophysRow> bio;
  if (fs::exists(dir / "biophys.csv")) {
    std::ifstream in(dir / "biophys.csv");
    bio = read_biophys(in);
    src.biophys = [&bio](const ScfvSignature& s) -> std::optional<BiophysRow> {
      auto it = bio.find(s.key.str());
      if (it == bio.end()) return std::nullopt;
      return it->second;
    };
  }
  if (fs::is_directory(dir / "embeddings")) {
    src.embeddings = [dir](const ScfvSignature& s) -> std::optional<std::pair<EmbeddingMatrix, EmbeddingMatrix>> {
      const auto a = dir / "embeddings" / (s.key.id() + "_VH.emb");
      const auto b = dir / "embeddings" / (s.key.id() + "_VL.emb");
      if (!fs::exists(a) || !fs::exists(b)) return std::nullopt;
      return std::make_pair(read_embedding_file(a.string()), read_embedding_file(b.string()));
    };
  }
  if (fs::is_directory(dir / "position_maps")) {
    src.position_maps = [dir](const ScfvSignature& s, Chain c) -> std::optional<PositionMap> {
      const auto p = dir / "position_maps" / (s.key.id() + "_" + std::string(to_string(c)) + ".map");
      std::ifstream in(p);
      if (!in) return std::nullopt;
      return read_position_map(in);
    };
  }
  FeatureSet out = featurize(sigs, src);
  std::string digest;
  {
    std::ifstream again(dir / "records.csv");
    digest.assign(std::istreambuf_iterator<char>(again), std::istreambuf_iterator<char>());
  }
  out.config_hash = hex64(fnv1a(digest));
  return out;
}

// ---- feature-set artifacts ------------------------------------------------------

namespace detail {
inline constexpr char kMatrixMagic[6] = {'R', 'M', 'A', 'T', '1', '\0'};

inline void write_matrix(const std::filesystem::path& p, const Matrix& m) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw ConfigError("cannot write " + p.string());
  const auto rows = static_cast<std::uint64_t>(m.rows()), cols = static_cast<std::uint64_t>(m.cols());
  os.write(kMatrixMagic, sizeof kMatrixMagic);
  os.write(reinterpret_cast<const char*>(&rows), sizeof rows);
  os.write(reinterpret_cast<const char*>(&cols), sizeof cols);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  os.write(reinterpret_cast<const char*>(rm.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
}

inline Matrix read_matrix(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw MissingArtifact("matrix file " + p.string() + " not found");
  char magic[sizeof kMatrixMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMatrixMagic, sizeof magic) != 0) throw DataError(p.string() + " is not a matrix file");
  std::uint64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), sizeof rows);
  in.read(reinterpret_cast<char*>(&cols), sizeof cols);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Index>(rows),
                                                                            static_cast<Index>(cols));
  in.read(reinterpret_cast<char*>(rm.data()), static_cast<std::streamsize>(rows * cols * sizeof(double)));
  if (!in) throw DataError("truncated matrix file " + p.string());
  return rm;
}
}  // namespace detail

/// features.json, signatures.jsonl, seq_codes.bin (aligned residue codes) and
/// one matrix file per continuous block. The sequence block is rebuilt from
/// the codes on load.
inline void save_features(const FeatureSet& fs, const std::filesystem::path& dir) {
  namespace fsys = std::filesystem;
  fsys::create_directories(dir);
  {
    std::ofstream out(dir / "signatures.jsonl");
    write_signatures(out, fs.sigs);
  }
  {
    std::ofstream out(dir / "seq_codes.bin", std::ios::binary);
    for (std::size_t i = 0; i < fs.vh.size(); ++i) {
      out.write(reinterpret_cast<const char*>(fs.vh[i].positions.data()), kAlignedLength);
      out.write(reinterpret_cast<const char*>(fs.vl[i].positions.data()), kAlignedLength);
    }
  }
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& [m, b] : fs.blocks) {
    if (m == Modality::SEQ) continue;
    const std::string name = std::string(to_string(m)) + ".bin";
    detail::write_matrix(dir / name, b.values);
    blocks.push_back({{"modality", std::string(to_string(m))}, {"file", name}, {"labels", b.labels}});
  }
  if (fs.embeddings) detail::write_matrix(dir / "embeddings.bin", *fs.embeddings);
  nlohmann::json meta = {{"config_hash", fs.config_hash},
                         {"rows", fs.rows()},
                         {"linkers", fs.vocab.ids()},
                         {"blocks", blocks},
                         {"embeddings", fs.embeddings.has_value()}};
  std::ofstream(dir / "features.json") << meta.dump(1) << '\n';
}

inline FeatureSet load_features(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "features.json");
  if (!meta_in) throw MissingArtifact("feature manifest " + (dir / "features.json").string() + " not found");
  const auto meta = nlohmann::json::parse(meta_in);
  FeatureSet fs;
  std::ifstream sig_in(dir / "signatures.jsonl");
  if (!sig_in) throw MissingArtifact("signatures file " + (dir / "signatures.jsonl").string() + " not found");
  fs.sigs = read_signatures(sig_in);
  fs.vocab = LinkerVocab(meta.at("linkers").get<std::vector<std::string>>());
  fs.config_hash = meta.at("config_hash").get<std::string>();
  if (static_cast<Index>(fs.sigs.size()) != meta.at("rows").get<Index>()) throw DataError("feature row count mismatch");
  std::ifstream codes(dir / "seq_codes.bin", std::ios::binary);
  if (!codes) throw MissingArtifact("sequence codes " + (dir / "seq_codes.bin").string() + " not found");
  for (std::size_t i = 0; i < fs.sigs.size(); ++i) {
    AlignedChain a, b;
    codes.read(reinterpret_cast<char*>(a.positions.data()), kAlignedLength);
    codes.read(reinterpret_cast<char*>(b.positions.data()), kAlignedLength);
    if (!codes) throw DataError("truncated sequence codes");
    a.source_len = static_cast<int>(fs.sigs.signatures[i].key.vh.size());
    b.source_len = static_cast<int>(fs.sigs.signatures[i].key.vl.size());
    fs.vh.push_back(a);
    fs.vl.push_back(b);
  }
  fs.blocks[Modality::SEQ] = {Modality::SEQ, seq_block_from_codes(fs), one_hot_labels(fs.vocab)};
  for (const auto& b : meta.at("blocks")) {
    const Modality m = parse_modality(b.at("modality").get<std::string>());
    fs.blocks[m] = {m, detail::read_matrix(dir / b.at("file").get<std::string>()),
                    b.at("labels").get<std::vector<std::string>>()};
    if (fs.blocks[m].values.rows() != fs.rows()) throw DataError("block row count mismatch");
  }
  if (meta.value("embeddings", false)) fs.embeddings = detail::read_matrix(dir / "embeddings.bin");
  return fs;
}

// ---- targets and fold preparation ------------------------------------------------

/// QC and SEC labels (1 = pass) or mean yield; NaN where missing.
inline Vector target_values(const FeatureSet& fs, TargetKind t) {
  Vector y(fs.rows());
  for (Index i = 0; i < fs.rows(); ++i) {
    const auto& s = fs.sigs.signatures[static_cast<std::size_t>(i)];
    std::optional<double> v;
    if (t == TargetKind::QC && s.qc_label) v = *s.qc_label;
    if (t == TargetKind::YIELD && s.yield_mean) v = *s.yield_mean;
    if (t == TargetKind::SEC && s.sec_label) v = *s.sec_label;
    y[i] = v.value_or(std::numeric_limits<double>::quiet_NaN());
  }
  return y;
}

inline std::vector<std::size_t> rows_with_target(const Vector& y, const std::vector<std::size_t>& rows) {
  std::vector<std::size_t> out;
  for (auto r : rows)
    if (!std::isnan(y[static_cast<Index>(r)])) out.push_back(r);
  return out;
}

inline std::vector<Index> as_index(const std::vector<std::size_t>& rows) { return {rows.begin(), rows.end()}; }

/// Block values with BIO missing cells filled by training-row means.
inline Matrix fold_block(const FeatureSet& fs, Modality m, const std::vector<std::size_t>& train_rows,
                         BiophysMeans* means_out = nullptr) {
  const auto it = fs.blocks.find(m);
  if (it == fs.blocks.end()) throw MissingArtifact("feature block '" + std::string(to_string(m)) + "' not available");
  if (m != Modality::BIO) return it->second.values;
  const auto rows = rows_from_matrix(it->second.values);
  std::vector<BiophysRow> train;
  for (auto r : train_rows) train.push_back(rows[r]);
  const auto means = fit_imputer(train);
  if (means_out) *means_out = means;
  return impute(rows, means);
}

// ---- kernel evaluation of L2 linear models ------------------------------------------

/// Per-modality Gram matrices for one fold, with continuous blocks scaled by
/// training statistics. Summing blocks gives the Gram matrix of any mask.
class FoldKernels {
 public:
  FoldKernels(const FeatureSet& fs, std::vector<std::size_t> train, std::vector<std::size_t> test)
      : fs_(&fs), train_(std::move(train)), test_(std::move(test)) {}

  const std::vector<std::size_t>& train() const { return train_; }
  const std::vector<std::size_t>& test() const { return test_; }

  /// (train × train, test × train).
  std::pair<Matrix, Matrix> kernels(const ModalityMask& mask) {
    const auto ntr = static_cast<Index>(train_.size()), nte = static_cast<Index>(test_.size());
    Matrix Ktr = Matrix::Zero(ntr, ntr), Kte = Matrix::Zero(nte, ntr);
    for (auto m : kAllModalities) {
      if (!mask.has(m)) continue;
      const auto& [a, b] = block(m);
      Ktr += a;
      Kte += b;
    }
    return {std::move(Ktr), std::move(Kte)};
  }

 private:
  const std::pair<Matrix, Matrix>& block(Modality m) {
    auto it = cache_.find(m);
    if (it != cache_.end()) return it->second;
    const auto tr = as_index(train_), te = as_index(test_);
    std::pair<Matrix, Matrix> k;
    if (m == Modality::SEQ) {
      if (!fs_->has(m)) throw MissingArtifact("feature block 'seq' not available");
      const Matrix& G = fs_->seq_gram();
      k.first = G(tr, tr);
      k.second = G(te, tr);
    } else {
      const Matrix X = fold_block(*fs_, m, train_);
      std::vector<std::size_t> cols(static_cast<std::size_t>(X.cols()));
      for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
      const Scaler sc = Scaler::fit(X(tr, Eigen::all), cols);
      const Matrix Ztr = sc.apply(X(tr, Eigen::all));
      const Matrix Zte = sc.apply(X(te, Eigen::all));
      k.first = Matrix::Zero(Ztr.rows(), Ztr.rows());
      k.first.selfadjointView<Eigen::Lower>().rankUpdate(Ztr);
      k.first = Matrix(k.first.selfadjointView<Eigen::Lower>());
      k.second = Zte * Ztr.transpose();
    }
    return cache_.emplace(m, std::move(k)).first->second;
  }

  const FeatureSet* fs_;
  std::vector<std::size_t> train_, test_;
  std::map<Modality, std::pair<Matrix, Matrix>> cache_;
};

/// Test predictions (probabilities or values) of an L2 linear model fitted
/// in representer form from Gram matrices.
inline Vector kernel_fit_predict(const Matrix& Ktr, const Vector& ytr, const Matrix& Kte, const LinearConfig& cfg) {
  cfg.validate();
  if (cfg.penalty != Penalty::L2) throw ConfigError("kernel evaluation requires the L2 penalty");
  if (cfg.task == Task::CLASSIFY) {
    bool has0 = false, has1 = false;
    for (Index i = 0; i < ytr.size(); ++i) (ytr[i] == 1.0 ? has1 : has0) = true;
    if (!has0 || !has1) throw DataError("logistic regression needs both classes present");
    LinearModel m;
    m.config = cfg;
    const Vector alpha = detail::newton_logistic_dual(Ktr, ytr, m);
    const double b = m.weights[0];
    Vector z = (Kte * alpha).array() + b;
    for (Index i = 0; i < z.size(); ++i) z[i] = detail::sigmoid(z[i]);
    return z;
  }
  const double ridge = 1.0 / (2.0 * cfg.inverse_reg_C);
  const Index n = Ktr.rows();
  Matrix Kc = Ktr;
  Matrix Kt = Kte;
  double y_mean = 0.0;
  if (cfg.fit_intercept) {
    const Vector r = Ktr.rowwise().mean();
    const double all = r.mean();
    Kc.colwise() -= r;
    Kc.rowwise() -= r.transpose();
    Kc.array() += all;
    const Vector rt = Kte.rowwise().mean();
    Kt.colwise() -= rt;
    Kt.rowwise() -= r.transpose();
    Kt.array() += all;
    y_mean = ytr.mean();
  }
  Kc.diagonal().array() += ridge;
  const Vector alpha = Eigen::LDLT<Matrix>(Kc).solve((ytr.array() - y_mean).matrix());
  (void)n;
  return (Kt * alpha).array() + y_mean;
}

// ---- fold metrics --------------------------------------------------------------------

/// Classification scores are probabilities of label 1 (pass). With
/// `fail_positive` metrics treat fail as the positive class.
inline MetricValues fold_metrics(TargetKind t, const Vector& pred, const Vector& truth, bool fail_positive) {
  if (task_for(t) == Task::REGRESS) return regression_metrics(pred, truth);
  MetricValues m;
  const Vector scores = fail_positive ? Vector((1.0 - pred.array()).matrix()) : pred;
  const double pos = fail_positive ? 0.0 : 1.0;
  const auto n_pos = (truth.array() == pos).count();
  if (n_pos > 0 && n_pos < truth.size()) {
    m["auroc"] = auroc(scores, truth, pos);
    m["auprc"] = auprc(scores, truth, pos);
  }
  const auto cm = confusion_metrics(confusion_at(scores, truth, 0.5, pos));
  if (cm.accuracy) m["accuracy"] = *cm.accuracy;
  return m;
}

struct CvResult {
  MetricReports metrics;
  std::vector<MetricValues> per_fold;
};

inline CvResult summarize(std::vector<MetricValues> per_fold) {
  CvResult r;
  r.metrics = aggregate_metrics(per_fold);
  r.per_fold = std::move(per_fold);
  return r;
}

// ---- explicit linear models (artifacts) ---------------------------------------------

/// A fitted linear model together with the fold preprocessing it needs.
struct LinearPipelineModel {
  ModalityMask mask;
  TargetKind target = TargetKind::QC;
  LinearModel model;
  Scaler scaler;
  std::optional<BiophysMeans> bio_means;
  std::vector<std::string> linkers;
};

inline Matrix design_rows(const FeatureSet& fs, const ModalityMask& mask, const std::optional<BiophysMeans>& bio_means,
                          const std::vector<std::size_t>& rows, std::vector<std::size_t>* continuous = nullptr) {
  BlockSet blocks;
  for (auto m : kAllModalities) {
    if (!mask.has(m)) continue;
    auto it = fs.blocks.find(m);
    if (it == fs.blocks.end()) throw MissingArtifact("feature block '" + std::string(to_string(m)) + "' not available");
    FeatureBlock b{m, it->second.values(as_index(rows), Eigen::all), {}};
    if (m == Modality::BIO) {
      if (!bio_means) throw ConfigError("BIO block requires imputation means");
      b.values = impute(rows_from_matrix(b.values), *bio_means);
    }
    blocks[m] = std::move(b);
  }
  DesignMatrix dm = assemble(blocks, mask);
  if (continuous) *continuous = dm.continuous_columns();
  return std::move(dm.X);
}

inline LinearPipelineModel train_linear(const FeatureSet& fs, const ModalityMask& mask, TargetKind target,
                                        const std::vector<std::size_t>& train_rows, LinearConfig cfg) {
  const Vector y_all = target_values(fs, target);
  const auto rows = rows_with_target(y_all, train_rows);
  if (rows.size() < 2) throw DataError("too few training rows with target values");
  LinearPipelineModel pm;
  pm.mask = mask;
  pm.target = target;
  pm.linkers = fs.vocab.ids();
  if (mask.has(Modality::BIO)) {
    BiophysMeans means{};
    fold_block(fs, Modality::BIO, rows, &means);
    pm.bio_means = means;
  }
  std::vector<std::size_t> cont;
  Matrix X = design_rows(fs, mask, pm.bio_means, rows, &cont);
  pm.scaler = Scaler::fit(X, cont);
  pm.scaler.apply_in_place(X);
  cfg.task = task_for(target);
  pm.model = fit(X, y_all(as_index(rows)), cfg);
  return pm;
}

inline Vector predict_rows(const LinearPipelineModel& pm, const FeatureSet& fs, const std::vector<std::size_t>& rows) {
  if (fs.vocab.ids() != pm.linkers) throw DataError("linker vocabulary differs from the one the model was trained on");
  Matrix X = design_rows(fs, pm.mask, pm.bio_means, rows);
  pm.scaler.apply_in_place(X);
  return predict(pm.model, X);
}

inline nlohmann::json to_json(const LinearPipelineModel& pm) {
  nlohmann::json j = {{"kind", "linear"},
                      {"mask", pm.mask.str()},
                      {"target", std::string(to_string(pm.target))},
                      {"model", to_json(pm.model)},
                      {"scaler",
                       {{"columns", pm.scaler.columns}, {"mean", to_std(pm.scaler.mean)}, {"std", to_std(pm.scaler.std)}}},
                      {"linkers", pm.linkers}};
  if (pm.bio_means) j["bio_means"] = *pm.bio_means;
  return j;
}

inline LinearPipelineModel linear_pipeline_from_json(const nlohmann::json& j) {
  LinearPipelineModel pm;
  pm.mask = ModalityMask::parse(j.at("mask").get<std::string>());
  pm.target = parse_target(j.at("target").get<std::string>());
  pm.model = linear_model_from_json(j.at("model"));
  pm.scaler.columns = j.at("scaler").at("columns").get<std::vector<std::size_t>>();
  pm.scaler.mean = to_eigen(j.at("scaler").at("mean").get<std::vector<double>>());
  pm.scaler.std = to_eigen(j.at("scaler").at("std").get<std::vector<double>>());
  pm.linkers = j.at("linkers").get<std::vector<std::string>>();
  if (j.contains("bio_means")) pm.bio_means = j.at("bio_means").get<BiophysMeans>();
  return pm;
}

// ---- cross-validation ------------------------------------------------------------------

/// Linear model on each fold's train partition, scored on its test partition.
/// L2 models are evaluated in representer form; other penalties explicitly.
inline MetricValues evaluate_linear_fold(const FeatureSet& fs, const ModalityMask& mask, const SplitPlan& plan,
                                         TargetKind target, LinearConfig cfg, bool fail_positive = true,
                                         FoldKernels* kernels = nullptr) {
  cfg.task = task_for(target);
  const Vector y = target_values(fs, target);
  const auto train = rows_with_target(y, plan.train);
  const auto test = rows_with_target(y, plan.test);
  if (test.empty()) throw DataError("fold has no test rows with target values");
  Vector pred;
  if (cfg.penalty == Penalty::L2) {
    std::optional<FoldKernels> local;
    if (!kernels) kernels = &local.emplace(fs, train, test);
    if (kernels->train() != train || kernels->test() != test) throw ConfigError("fold kernels built for other rows");
    const auto [Ktr, Kte] = kernels->kernels(mask);
    pred = kernel_fit_predict(Ktr, y(as_index(train)), Kte, cfg);
  } else {
    pred = predict_rows(train_linear(fs, mask, target, train, cfg), fs, test);
  }
  return fold_metrics(target, pred, y(as_index(test)), fail_positive);
}

inline CvResult cross_validate_linear(const FeatureSet& fs, const ModalityMask& mask,
                                      const std::vector<SplitPlan>& folds, TargetKind target, const LinearConfig& cfg,
                                      bool fail_positive = true) {
  std::vector<MetricValues> per_fold;
  for (const auto& plan : folds) per_fold.push_back(evaluate_linear_fold(fs, mask, plan, target, cfg, fail_positive));
  return summarize(std::move(per_fold));
}

/// Seven-mask ablation with per-fold kernels shared across masks.
inline std::vector<AblationRow> ablation_linear(const FeatureSet& fs, const std::vector<SplitPlan>& folds,
                                                TargetKind target, const LinearConfig& cfg,
                                                bool fail_positive = true) {
  const Vector y = target_values(fs, target);
  std::size_t cached_fold = static_cast<std::size_t>(-1);
  std::optional<FoldKernels> kern;
  auto eval = [&](const ModalityMask& mask, const SplitPlan& plan, std::size_t k) {
    if (cfg.penalty == Penalty::L2 && k != cached_fold) {
      kern.emplace(fs, rows_with_target(y, plan.train), rows_with_target(y, plan.test));
      cached_fold = k;
    }
    return evaluate_linear_fold(fs, mask, plan, target, cfg, fail_positive, kern ? &*kern : nullptr);
  };
  return ablation_run(fs.blocks, ablation_masks(), folds, eval);
}

// ---- neural models on features --------------------------------------------------------

enum class NeuralKind { MLP, CNN };

struct NeuralInputs {
  Matrix train_X, val_X, test_X;
  Vector train_y, val_y, test_y;
  std::vector<std::size_t> test_rows;
};

/// MLP inputs are pooled embeddings standardized by training statistics; CNN
/// inputs are the per-residue structure tensors.
inline NeuralInputs neural_inputs(const FeatureSet& fs, NeuralKind kind, const SplitPlan& plan, TargetKind target) {
  const Vector y = target_values(fs, target);
  const auto tr = rows_with_target(y, plan.train), va = rows_with_target(y, plan.val), te = rows_with_target(y, plan.test);
  if (va.empty()) throw DataError("neural training needs a non-empty validation partition");
  const Matrix* src = nullptr;
  if (kind == NeuralKind::MLP) {
    if (!fs.embeddings) throw MissingArtifact("embeddings not available for the MLP");
    src = &*fs.embeddings;
  } else {
    if (!fs.has(Modality::STRUCT)) throw MissingArtifact("feature block 'struct' not available for the CNN");
    src = &fs.blocks.at(Modality::STRUCT).values;
  }
  NeuralInputs in;
  in.train_X = (*src)(as_index(tr), Eigen::all);
  in.val_X = (*src)(as_index(va), Eigen::all);
  in.test_X = (*src)(as_index(te), Eigen::all);
  if (kind == NeuralKind::MLP) {
    std::vector<std::size_t> cols(static_cast<std::size_t>(src->cols()));
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
    const Scaler sc = Scaler::fit(in.train_X, cols);
    sc.apply_in_place(in.train_X);
    sc.apply_in_place(in.val_X);
    sc.apply_in_place(in.test_X);
  }
  in.train_y = y(as_index(tr));
  in.val_y = y(as_index(va));
  in.test_y = y(as_index(te));
  in.test_rows = te;
  return in;
}

inline MetricValues evaluate_mlp_fold(const FeatureSet& fs, const SplitPlan& plan, TargetKind target,
                                      const MlpConfig& cfg, bool fail_positive = true) {
  const auto in = neural_inputs(fs, NeuralKind::MLP, plan, target);
  const auto fit = mlp_fit(in.train_X, in.train_y, task_for(target), cfg, in.val_X, in.val_y);
  return fold_metrics(target, fit.model.predict(in.test_X), in.test_y, fail_positive);
}

inline MetricValues evaluate_cnn_fold(const FeatureSet& fs, const SplitPlan& plan, TargetKind target,
                                      const CnnConfig& cfg, bool fail_positive = true) {
  const auto in = neural_inputs(fs, NeuralKind::CNN, plan, target);
  const auto fit = cnn1d_fit(in.train_X, in.train_y, task_for(target), cfg, in.val_X, in.val_y);
  return fold_metrics(target, fit.model.predict(in.test_X), in.test_y, fail_positive);
}

}  // namespace reformat
