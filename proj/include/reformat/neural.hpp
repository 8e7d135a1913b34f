#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "reformat/common.hpp"
#include "reformat/linear_models.hpp"
#include "reformat/struct_features.hpp"

namespace reformat {

// ---- optimizer -------------------------------------------------------------

/// Adam with decoupled weight decay: θ ← θ·(1 − lr·wd) − lr·m̂/(√v̂ + ε).
struct AdamW {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  Vector m, v;
  long t = 0;

  void step(Vector& theta, const Vector& grad) {
    if (m.size() != theta.size()) {
      m = Vector::Zero(theta.size());
      v = Vector::Zero(theta.size());
      t = 0;
    }
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    theta *= 1.0 - lr * weight_decay;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
    theta.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

enum class Mode { TRAIN, EVAL };

struct TrainTrace {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  int best_epoch = 0;     // 1-based
  int stopped_epoch = 0;  // last epoch run
};

inline nlohmann::json to_json(const TrainTrace& t) {
  return {{"train_loss", t.train_loss}, {"val_loss", t.val_loss}, {"best_epoch", t.best_epoch},
          {"stopped_epoch", t.stopped_epoch}};
}

inline TrainTrace trace_from_json(const nlohmann::json& j) {
  TrainTrace t;
  t.train_loss = j.at("train_loss").get<std::vector<double>>();
  t.val_loss = j.at("val_loss").get<std::vector<double>>();
  t.best_epoch = j.at("best_epoch").get<int>();
  t.stopped_epoch = j.at("stopped_epoch").get<int>();
  return t;
}

namespace detail {

/// Output-layer loss: mean log-loss on logits, or mean squared error.
inline double head_loss(Task task, const Vector& out, const Vector& y, Vector* d_out) {
  const double n = static_cast<double>(out.size());
  double loss = 0.0;
  if (d_out) d_out->resize(out.size());
  for (Index i = 0; i < out.size(); ++i) {
    if (task == Task::CLASSIFY) {
      loss += log1pexp(out[i]) - y[i] * out[i];
      if (d_out) (*d_out)[i] = (sigmoid(out[i]) - y[i]) / n;
    } else {
      const double r = out[i] - y[i];
      loss += r * r;
      if (d_out) (*d_out)[i] = 2.0 * r / n;
    }
  }
  return loss / n;
}

inline void he_init(Eigen::Ref<Vector> w, double fan_in, Rng& rng) {
  const double s = std::sqrt(2.0 / fan_in);
  for (Index i = 0; i < w.size(); ++i) w[i] = s * normal01(rng);
}

inline std::uint64_t hash_pattern(std::uint64_t h, const Matrix& Z) {
  std::uint64_t word = 0;
  int bits = 0;
  for (Index i = 0; i < Z.size(); ++i) {
    word = (word << 1) | (Z.data()[i] > 0.0 ? 1u : 0u);
    if (++bits == 64) {
      h = (h ^ word) * 0x100000001b3ULL;
      word = 0;
      bits = 0;
    }
  }
  return (h ^ word ^ static_cast<std::uint64_t>(bits)) * 0x100000001b3ULL;
}

}  // namespace detail

// ---- MLP -------------------------------------------------------------------

struct MlpConfig {
  int hidden_dim = 128;
  double dropout = 0.2;
  double lr = 1e-3;
  int batch_size = 32;
  bool linear_head = false;
  int max_epochs = 200;
  int patience = 10;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;

  void validate() const {
    if (hidden_dim < 1) throw ConfigError("hidden_dim must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
  }
};

inline nlohmann::json to_json(const MlpConfig& c) {
  return {{"hidden_dim", c.hidden_dim}, {"dropout", c.dropout},       {"lr", c.lr},
          {"batch_size", c.batch_size}, {"linear_head", c.linear_head}, {"max_epochs", c.max_epochs},
          {"patience", c.patience},     {"weight_decay", c.weight_decay}, {"seed", c.seed}};
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.linear_head = j.value("linear_head", c.linear_head);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// input → [linear, ReLU, dropout] × 2 → scalar output. With `linear_head` an
/// additional linear path from the input is added to the output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(Index input_dim, Task task, const MlpConfig& cfg) : cfg_(cfg), task_(task), d_(input_dim) {
    cfg.validate();
    if (input_dim < 1) throw ConfigError("input dimension must be >= 1");
    const Index h = cfg.hidden_dim;
    o_w1_ = 0;
    o_b1_ = o_w1_ + h * d_;
    o_w2_ = o_b1_ + h;
    o_b2_ = o_w2_ + h * h;
    o_w3_ = o_b2_ + h;
    o_b3_ = o_w3_ + h;
    o_wl_ = o_b3_ + 1;
    const Index total = o_wl_ + (cfg.linear_head ? d_ : 0);
    theta = Vector::Zero(total);
    Rng rng(cfg.seed);
    detail::he_init(theta.segment(o_w1_, h * d_), static_cast<double>(d_), rng);
    detail::he_init(theta.segment(o_w2_, h * h), static_cast<double>(h), rng);
    const double s3 = std::sqrt(1.0 / static_cast<double>(h));
    for (Index i = 0; i < h; ++i) theta[o_w3_ + i] = s3 * normal01(rng);
  }

  Vector theta;
  double y_mean = 0.0, y_std = 1.0;  // regression target scaling

  const MlpConfig& config() const { return cfg_; }
  Task task() const { return task_; }
  Index input_dim() const { return d_; }

  Vector snapshot() const { return theta; }
  void restore(const Vector& s) { theta = s; }

  /// Mean loss on (X, y) with y already in model units. Fills `grad` when
  /// given. Dropout masks are drawn from `rng` in TRAIN mode.
  double loss_grad(const Matrix& X, const Vector& y, Mode mode, Rng* rng, Vector* grad,
                   std::uint64_t* pattern = nullptr, bool = false) {
    Cache c;
    const Vector out = forward(X, mode, rng, &c);
    if (pattern) *pattern = detail::hash_pattern(detail::hash_pattern(0, c.Z1), c.Z2);
    Vector d_out;
    const double loss = detail::head_loss(task_, out, y, grad ? &d_out : nullptr);
    if (!grad) return loss;
    backward(X, c, d_out, *grad);
    return loss;
  }

  /// Raw outputs (logits or standardized values) in EVAL mode.
  Vector output(const Matrix& X) const { return forward(X, Mode::EVAL, nullptr, nullptr); }

  /// Probabilities for CLASSIFY, values in target units for REGRESS.
  Vector predict(const Matrix& X) const {
    Vector o = output(X);
    if (task_ == Task::CLASSIFY)
      for (Index i = 0; i < o.size(); ++i) o[i] = detail::sigmoid(o[i]);
    else
      o = (o.array() * y_std + y_mean).matrix();
    return o;
  }

 private:
  struct Cache {
    Matrix Z1, H1, M1, Z2, H2, M2;
  };

  auto W1() const { return Eigen::Map<const Matrix>(theta.data() + o_w1_, cfg_.hidden_dim, d_); }
  auto W2() const { return Eigen::Map<const Matrix>(theta.data() + o_w2_, cfg_.hidden_dim, cfg_.hidden_dim); }
  auto b1() const { return theta.segment(o_b1_, cfg_.hidden_dim); }
  auto b2() const { return theta.segment(o_b2_, cfg_.hidden_dim); }
  auto w3() const { return theta.segment(o_w3_, cfg_.hidden_dim); }
  auto wl() const { return theta.segment(o_wl_, d_); }

  Matrix dropout_mask(Index rows, Index cols, Mode mode, Rng* rng) const {
    if (mode == Mode::EVAL || cfg_.dropout == 0.0) return Matrix::Ones(rows, cols);
    if (!rng) throw ConfigError("dropout in TRAIN mode needs an rng");
    Matrix M(rows, cols);
    const double keep = 1.0 - cfg_.dropout;
    for (Index i = 0; i < M.size(); ++i) M.data()[i] = uniform01(*rng) < keep ? 1.0 / keep : 0.0;
    return M;
  }

  Vector forward(const Matrix& X, Mode mode, Rng* rng, Cache* cache) const {
    if (X.cols() != d_) throw ConfigError("MLP input dimension mismatch");
    Cache local;
    Cache& c = cache ? *cache : local;
    c.Z1 = (X * W1().transpose()).rowwise() + b1().transpose();
    c.M1 = dropout_mask(X.rows(), cfg_.hidden_dim, mode, rng);
    c.H1 = c.Z1.cwiseMax(0.0).cwiseProduct(c.M1);
    c.Z2 = (c.H1 * W2().transpose()).rowwise() + b2().transpose();
    c.M2 = dropout_mask(X.rows(), cfg_.hidden_dim, mode, rng);
    c.H2 = c.Z2.cwiseMax(0.0).cwiseProduct(c.M2);
    Vector out = (c.H2 * w3()).array() + theta[o_b3_];
    if (cfg_.linear_head) out += X * wl();
    return out;
  }

  void backward(const Matrix& X, const Cache& c, const Vector& d_out, Vector& g) const {
    const Index h = cfg_.hidden_dim;
    g = Vector::Zero(theta.size());
    g.segment(o_w3_, h) = c.H2.transpose() * d_out;
    g[o_b3_] = d_out.sum();
    if (cfg_.linear_head) g.segment(o_wl_, d_) = X.transpose() * d_out;
    Matrix dZ2 = d_out * w3().transpose();
    dZ2 = dZ2.cwiseProduct(c.M2).cwiseProduct((c.Z2.array() > 0.0).cast<double>().matrix());
    Eigen::Map<Matrix>(g.data() + o_w2_, h, h) = dZ2.transpose() * c.H1;
    g.segment(o_b2_, h) = dZ2.colwise().sum().transpose();
    Matrix dZ1 = dZ2 * W2();
    dZ1 = dZ1.cwiseProduct(c.M1).cwiseProduct((c.Z1.array() > 0.0).cast<double>().matrix());
    Eigen::Map<Matrix>(g.data() + o_w1_, h, d_) = dZ1.transpose() * X;
    g.segment(o_b1_, h) = dZ1.colwise().sum().transpose();
  }

  MlpConfig cfg_;
  Task task_ = Task::CLASSIFY;
  Index d_ = 0;
  Index o_w1_ = 0, o_b1_ = 0, o_w2_ = 0, o_b2_ = 0, o_w3_ = 0, o_b3_ = 0, o_wl_ = 0;
};

// ---- dilated 1D CNN ----------------------------------------------------------

struct CnnConfig {
  int n_layers = 5;
  int rep_dim = 32;
  double expansion = 1.4;
  bool batch_norm = false;
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 50;  // epoch cap; early stopping may end sooner
  int patience = 10;
  double weight_decay = 0.01;
  int kernel_size = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_layers < 1 || n_layers > 5) throw ConfigError("n_layers must be in [1,5]");
    if (rep_dim < 1) throw ConfigError("rep_dim must be >= 1");
    if (!(expansion >= 1.0 && expansion <= 4.0)) throw ConfigError("expansion must be in [1,4]");
    if (!(lr >= 0.0)) throw ConfigError("lr must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (patience < 0) throw ConfigError("patience must be >= 0");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw ConfigError("kernel_size must be odd");
  }

  int width() const { return static_cast<int>(std::lround(rep_dim * expansion)); }
  int dilation(int layer) const { return 1 << layer; }  // 0-based layer index
};

inline nlohmann::json to_json(const CnnConfig& c) {
  return {{"n_layers", c.n_layers},   {"rep_dim", c.rep_dim},       {"expansion", c.expansion},
          {"batch_norm", c.batch_norm}, {"lr", c.lr},               {"batch_size", c.batch_size},
          {"epochs", c.epochs},       {"patience", c.patience},     {"weight_decay", c.weight_decay},
          {"kernel_size", c.kernel_size}, {"seed", c.seed}};
}

inline CnnConfig cnn_config_from_json(const nlohmann::json& j) {
  CnnConfig c;
  c.n_layers = j.value("n_layers", c.n_layers);
  c.rep_dim = j.value("rep_dim", c.rep_dim);
  c.expansion = j.value("expansion", c.expansion);
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.lr = j.value("lr", c.lr);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.patience = j.value("patience", c.patience);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.kernel_size = j.value("kernel_size", c.kernel_size);
  c.seed = j.value("seed", c.seed);
  return c;
}

/// Stem convolution (channels → rep_dim) followed by n_layers−1 dilated
/// convolutions of width round(rep_dim·expansion); dilation doubles per layer,
/// "same" zero padding, optional batch norm before each ReLU, mean pooling over
/// positions and a linear head. Inputs are rows of positions×channels values,
/// flattened position-major.
class Cnn1d {
 public:
  Cnn1d() = default;
  Cnn1d(Task task, const CnnConfig& cfg, int positions = kStructPositions, int channels = kStructChannels)
      : cfg_(cfg), task_(task), P_(positions), C_(channels) {
    cfg.validate();
    if (positions < 1 || channels < 1) throw ConfigError("CNN input shape must be positive");
    Index off = 0;
    int cin = channels;
    for (int l = 0; l < cfg.n_layers; ++l) {
      Layer L;
      L.cin = cin;
      L.cout = l == 0 ? cfg.rep_dim : cfg.width();
      L.dilation = cfg.dilation(l);
      L.o_w = off;
      off += static_cast<Index>(L.cout) * cfg.kernel_size * L.cin;
      L.o_b = off;
      off += L.cout;
      if (cfg.batch_norm) {
        L.o_gamma = off;
        off += L.cout;
        L.o_beta = off;
        off += L.cout;
      }
      layers_.push_back(L);
      cin = L.cout;
    }
    o_head_ = off;
    off += cin + 1;
    theta = Vector::Zero(off);
    Rng rng(cfg.seed);
    for (const auto& L : layers_) {
      detail::he_init(theta.segment(L.o_w, static_cast<Index>(L.cout) * cfg.kernel_size * L.cin),
                      static_cast<double>(cfg.kernel_size * L.cin), rng);
      if (cfg.batch_norm) theta.segment(L.o_gamma, L.cout).setOnes();
    }
    const double s = std::sqrt(1.0 / static_cast<double>(cin));
    for (Index i = 0; i < cin; ++i) theta[o_head_ + i] = s * normal01(rng);
    for (const auto& L : layers_) {
      running_mean_.push_back(Vector::Zero(L.cout));
      running_var_.push_back(Vector::Ones(L.cout));
    }
  }

  Vector theta;
  double y_mean = 0.0, y_std = 1.0;

  const CnnConfig& config() const { return cfg_; }
  Task task() const { return task_; }
  int positions() const { return P_; }
  int channels() const { return C_; }
  Index input_dim() const { return static_cast<Index>(P_) * C_; }

  Vector snapshot() const {
    Vector s(theta.size() + 2 * running_stat_size());
    s.head(theta.size()) = theta;
    Index o = theta.size();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      s.segment(o, running_mean_[l].size()) = running_mean_[l];
      o += running_mean_[l].size();
      s.segment(o, running_var_[l].size()) = running_var_[l];
      o += running_var_[l].size();
    }
    return s;
  }

  void restore(const Vector& s) {
    theta = s.head(theta.size());
    Index o = theta.size();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      running_mean_[l] = s.segment(o, running_mean_[l].size());
      o += running_mean_[l].size();
      running_var_[l] = s.segment(o, running_var_[l].size());
      o += running_var_[l].size();
    }
  }

  /// Mean loss; in TRAIN mode batch norm uses batch statistics and, when
  /// `update_stats` is set, updates the running averages.
  double loss_grad(const Matrix& X, const Vector& y, Mode mode, Rng*, Vector* grad, std::uint64_t* pattern = nullptr,
                   bool update_stats = false) {
    Cache c;
    const Vector out = forward(X, mode, &c, update_stats);
    if (pattern) {
      std::uint64_t h = 0;
      for (const auto& Y : c.Y) h = detail::hash_pattern(h, Y);
      *pattern = h;
    }
    Vector d_out;
    const double loss = detail::head_loss(task_, out, y, grad ? &d_out : nullptr);
    if (grad) backward(X.rows(), c, d_out, *grad);
    return loss;
  }

  Vector output(const Matrix& X) const {
    Cache c;
    return const_cast<Cnn1d*>(this)->forward(X, Mode::EVAL, &c, false);
  }

  Vector predict(const Matrix& X) const {
    Vector o = output(X);
    if (task_ == Task::CLASSIFY)
      for (Index i = 0; i < o.size(); ++i) o[i] = detail::sigmoid(o[i]);
    else
      o = (o.array() * y_std + y_mean).matrix();
    return o;
  }

  const std::vector<Vector>& running_mean() const { return running_mean_; }
  const std::vector<Vector>& running_var() const { return running_var_; }

 private:
  struct Layer {
    int cin = 0, cout = 0, dilation = 1;
    Index o_w = 0, o_b = 0, o_gamma = 0, o_beta = 0;
  };
  struct Cache {
    std::vector<Matrix> Xcol;   // im2col input per layer
    std::vector<Matrix> Xhat;   // normalized pre-activations (batch norm)
    std::vector<Vector> inv_std;
    std::vector<Matrix> Y;      // pre-ReLU values
    Matrix pooled;
    Mode mode = Mode::EVAL;
  };

  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  Index running_stat_size() const {
    Index n = 0;
    for (const auto& m : running_mean_) n += m.size();
    return n;
  }

  auto W(const Layer& L) const {
    return Eigen::Map<const Matrix>(theta.data() + L.o_w, L.cout, static_cast<Index>(cfg_.kernel_size) * L.cin);
  }

  /// Rows are (sample, position); columns are (tap, input channel).
  Matrix im2col(const Matrix& U, Index B, const Layer& L) const {
    const int K = cfg_.kernel_size, half = K / 2;
    Matrix col = Matrix::Zero(B * P_, static_cast<Index>(K) * L.cin);
    for (Index s = 0; s < B; ++s)
      for (int p = 0; p < P_; ++p)
        for (int k = 0; k < K; ++k) {
          const int q = p + (k - half) * L.dilation;
          if (q < 0 || q >= P_) continue;
          col.block(s * P_ + p, static_cast<Index>(k) * L.cin, 1, L.cin) = U.row(s * P_ + q);
        }
    return col;
  }

  Matrix col2im(const Matrix& dcol, Index B, const Layer& L) const {
    const int K = cfg_.kernel_size, half = K / 2;
    Matrix dU = Matrix::Zero(B * P_, L.cin);
    for (Index s = 0; s < B; ++s)
      for (int p = 0; p < P_; ++p)
        for (int k = 0; k < K; ++k) {
          const int q = p + (k - half) * L.dilation;
          if (q < 0 || q >= P_) continue;
          dU.row(s * P_ + q) += dcol.block(s * P_ + p, static_cast<Index>(k) * L.cin, 1, L.cin);
        }
    return dU;
  }

  Vector forward(const Matrix& X, Mode mode, Cache* c, bool update_stats) {
    if (X.cols() != input_dim()) throw ConfigError("CNN input dimension mismatch");
    const Index B = X.rows();
    c->mode = mode;
    Matrix U(B * P_, C_);
    for (Index s = 0; s < B; ++s)
      for (int p = 0; p < P_; ++p) U.row(s * P_ + p) = X.block(s, static_cast<Index>(p) * C_, 1, C_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const Layer& L = layers_[l];
      Matrix col = im2col(U, B, L);
      Matrix Z = (col * W(L).transpose()).rowwise() + theta.segment(L.o_b, L.cout).transpose();
      if (cfg_.batch_norm) {
        Vector mu, var;
        if (mode == Mode::TRAIN) {
          mu = Z.colwise().mean().transpose();
          var = (Z.rowwise() - mu.transpose()).array().square().colwise().mean().transpose();
          if (update_stats) {
            running_mean_[l] = (1.0 - kBnMomentum) * running_mean_[l] + kBnMomentum * mu;
            const double nn = static_cast<double>(Z.rows());
            const Vector unbiased = nn > 1 ? Vector(var * (nn / (nn - 1.0))) : var;
            running_var_[l] = (1.0 - kBnMomentum) * running_var_[l] + kBnMomentum * unbiased;
          }
        } else {
          mu = running_mean_[l];
          var = running_var_[l];
        }
        const Vector inv = (var.array() + kBnEps).rsqrt();
        Matrix Xhat = (Z.rowwise() - mu.transpose()) * inv.asDiagonal();
        Z = (Xhat * theta.segment(L.o_gamma, L.cout).asDiagonal()).rowwise() +
            theta.segment(L.o_beta, L.cout).transpose();
        c->Xhat.push_back(std::move(Xhat));
        c->inv_std.push_back(inv);
      }
      U = Z.cwiseMax(0.0);
      c->Xcol.push_back(std::move(col));
      c->Y.push_back(std::move(Z));
    }
    const int cl = layers_.back().cout;
    c->pooled.resize(B, cl);
    for (Index s = 0; s < B; ++s) c->pooled.row(s) = U.middleRows(s * P_, P_).colwise().mean();
    return (c->pooled * theta.segment(o_head_, cl)).array() + theta[o_head_ + cl];
  }

  void backward(Index B, const Cache& c, const Vector& d_out, Vector& g) const {
    g = Vector::Zero(theta.size());
    const int cl = layers_.back().cout;
    g.segment(o_head_, cl) = c.pooled.transpose() * d_out;
    g[o_head_ + cl] = d_out.sum();
    Matrix dU(B * P_, cl);
    const Eigen::RowVectorXd wh = theta.segment(o_head_, cl).transpose();
    for (Index s = 0; s < B; ++s) dU.middleRows(s * P_, P_).rowwise() = d_out[s] / static_cast<double>(P_) * wh;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const Layer& L = layers_[li];
      Matrix dZ = dU.cwiseProduct((c.Y[li].array() > 0.0).cast<double>().matrix());
      if (cfg_.batch_norm) {
        const Matrix& Xhat = c.Xhat[li];
        g.segment(L.o_gamma, L.cout) = dZ.cwiseProduct(Xhat).colwise().sum().transpose();
        g.segment(L.o_beta, L.cout) = dZ.colwise().sum().transpose();
        const Matrix dXhat = dZ * theta.segment(L.o_gamma, L.cout).asDiagonal();
        // EVAL-mode statistics are constants, so only the scaling applies.
        if (c.mode == Mode::TRAIN) {
          const double N = static_cast<double>(dZ.rows());
          const Eigen::RowVectorXd sum_dx = dXhat.colwise().sum();
          const Eigen::RowVectorXd sum_dxx = dXhat.cwiseProduct(Xhat).colwise().sum();
          Matrix t = (N * dXhat).rowwise() - sum_dx;
          t -= Xhat * sum_dxx.asDiagonal();
          dZ = t * (c.inv_std[li] / N).asDiagonal();
        } else {
          dZ = dXhat * c.inv_std[li].asDiagonal();
        }
      }
      Eigen::Map<Matrix>(g.data() + L.o_w, L.cout, static_cast<Index>(cfg_.kernel_size) * L.cin) =
          dZ.transpose() * c.Xcol[li];
      g.segment(L.o_b, L.cout) = dZ.colwise().sum().transpose();
      if (li > 0) dU = col2im(dZ * W(L), B, L);
    }
  }

  CnnConfig cfg_;
  Task task_ = Task::REGRESS;
  int P_ = kStructPositions, C_ = kStructChannels;
  std::vector<Layer> layers_;
  Index o_head_ = 0;
  std::vector<Vector> running_mean_, running_var_;
};

// ---- training ----------------------------------------------------------------

struct FitOptions {
  double lr = 1e-3;
  int batch_size = 32;
  int max_epochs = 200;
  int patience = 10;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
};

namespace detail {

inline void check_fit_inputs(Task task, const Matrix& X, const Vector& y, const Matrix& Xv, const Vector& yv,
                             Index dim) {
  if (X.rows() != y.size() || Xv.rows() != yv.size()) throw ConfigError("feature rows and targets differ");
  if (X.rows() < 1) throw DataError("empty training set");
  if (Xv.rows() < 1) throw DataError("validation set must be non-empty");
  if (X.cols() != dim || Xv.cols() != dim) throw ConfigError("input dimension mismatch");
  if (!X.allFinite() || !Xv.allFinite() || !y.allFinite() || !yv.allFinite())
    throw DataError("non-finite training inputs");
  if (task == Task::CLASSIFY) {
    bool has0 = false, has1 = false;
    for (Index i = 0; i < y.size(); ++i) {
      if (y[i] == 0.0) has0 = true;
      else if (y[i] == 1.0) has1 = true;
      else throw DataError("class labels must be 0 or 1");
    }
    if (!has0 || !has1) throw DataError("both classes must be present in training data");
  }
}

}  // namespace detail

/// Minibatch AdamW with early stopping on validation loss. Regression targets
/// are standardized with training statistics. The weights of the best epoch
/// are restored before returning.
template <class Net>
TrainTrace train_network(Net& net, const Matrix& X, const Vector& y, const Matrix& Xv, const Vector& yv,
                         const FitOptions& opt) {
  const Task task = net.task();
  detail::check_fit_inputs(task, X, y, Xv, yv, net.input_dim());
  if (opt.batch_size < 1 || opt.max_epochs < 1 || opt.patience < 0) throw ConfigError("invalid training options");
  Vector yt = y, yvt = yv;
  if (task == Task::REGRESS) {
    net.y_mean = y.mean();
    const double sd = std::sqrt((y.array() - net.y_mean).square().mean());
    net.y_std = sd > 0.0 ? sd : 1.0;
    yt = (y.array() - net.y_mean) / net.y_std;
    yvt = (yv.array() - net.y_mean) / net.y_std;
  }
  AdamW adam;
  adam.lr = opt.lr;
  adam.weight_decay = opt.weight_decay;
  Rng rng(opt.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Index> order(static_cast<std::size_t>(X.rows()));
  std::iota(order.begin(), order.end(), Index{0});

  TrainTrace trace;
  double best = std::numeric_limits<double>::infinity();
  Vector best_state = net.snapshot();
  Vector grad;
  for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(opt.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(opt.batch_size));
      const std::vector<Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Matrix Xb = X(idx, Eigen::all);
      const Vector yb = yt(idx);
      const double loss = net.loss_grad(Xb, yb, Mode::TRAIN, &rng, &grad, nullptr, true);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at " +
                             std::to_string(start));
      adam.step(net.theta, grad);
      loss_sum += loss * static_cast<double>(idx.size());
    }
    const double val = net.loss_grad(Xv, yvt, Mode::EVAL, nullptr, nullptr);
    if (!std::isfinite(val)) throw NumericalError("non-finite validation loss at epoch " + std::to_string(epoch));
    trace.train_loss.push_back(loss_sum / static_cast<double>(X.rows()));
    trace.val_loss.push_back(val);
    trace.stopped_epoch = epoch;
    if (val < best) {
      best = val;
      trace.best_epoch = epoch;
      best_state = net.snapshot();
    } else if (epoch - trace.best_epoch > opt.patience) {
      break;
    }
  }
  net.restore(best_state);
  return trace;
}

template <class Net>
struct FitResult {
  Net model;
  TrainTrace trace;
};

inline FitResult<Mlp> mlp_fit(const Matrix& X, const Vector& y, Task task, const MlpConfig& cfg, const Matrix& Xv,
                              const Vector& yv) {
  cfg.validate();
  FitResult<Mlp> r{Mlp(X.cols(), task, cfg), {}};
  r.trace = train_network(r.model, X, y, Xv, yv,
                          {cfg.lr, cfg.batch_size, cfg.max_epochs, cfg.patience, cfg.weight_decay, cfg.seed});
  return r;
}

inline FitResult<Cnn1d> cnn1d_fit(const Matrix& X, const Vector& y, Task task, const CnnConfig& cfg, const Matrix& Xv,
                                  const Vector& yv, int positions = kStructPositions,
                                  int channels = kStructChannels) {
  cfg.validate();
  FitResult<Cnn1d> r{Cnn1d(task, cfg, positions, channels), {}};
  r.trace = train_network(r.model, X, y, Xv, yv,
                          {cfg.lr, cfg.batch_size, cfg.epochs, cfg.patience, cfg.weight_decay, cfg.seed});
  return r;
}

// ---- gradient check ----------------------------------------------------------

struct GradCheckResult {
  double max_rel_error = 0.0;
  int checked = 0;
  int skipped = 0;  // perturbation crossed a ReLU kink
};

/// Central finite differences on randomly chosen parameters. Parameters whose
/// perturbation changes any ReLU activation pattern are skipped. Relative
/// error is |a−n| / max(|a|, |n|, 1e-6). In TRAIN mode every evaluation reuses
/// the same dropout masks.
template <class Net>
GradCheckResult grad_check(Net& net, const Matrix& X, const Vector& y, int n_params = 100, double eps = 1e-5,
                           std::uint64_t seed = 0, Mode mode = Mode::EVAL) {
  const Rng mask_rng(seed ^ 0x5851f42d4c957f2dULL);
  auto eval = [&](Vector* g, std::uint64_t* pat) {
    Rng r = mask_rng;
    return net.loss_grad(X, y, mode, &r, g, pat, false);
  };
  Vector analytic;
  std::uint64_t base_pattern = 0;
  eval(&analytic, &base_pattern);
  Rng pick(seed);
  std::vector<Index> idx(static_cast<std::size_t>(net.theta.size()));
  std::iota(idx.begin(), idx.end(), Index{0});
  shuffle_in_place(idx, pick);
  GradCheckResult res;
  for (Index i : idx) {
    if (res.checked >= n_params) break;
    const double orig = net.theta[i];
    std::uint64_t pp = 0, pm = 0;
    net.theta[i] = orig + eps;
    const double fp = eval(nullptr, &pp);
    net.theta[i] = orig - eps;
    const double fm = eval(nullptr, &pm);
    net.theta[i] = orig;
    if (pp != base_pattern || pm != base_pattern) {
      ++res.skipped;
      continue;
    }
    const double num = (fp - fm) / (2.0 * eps);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(num), 1e-6});
    res.max_rel_error = std::max(res.max_rel_error, std::abs(a - num) / denom);
    ++res.checked;
  }
  return res;
}

// ---- checkpoints -------------------------------------------------------------

namespace detail {
inline constexpr char kCheckpointMagic[6] = {'R', 'C', 'K', 'P', '1', '\0'};

inline void write_checkpoint(std::ostream& os, const nlohmann::json& header, const Vector& state) {
  const std::string h = header.dump();
  const auto hlen = static_cast<std::uint64_t>(h.size());
  const auto n = static_cast<std::uint64_t>(state.size());
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  os.write(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  os.write(reinterpret_cast<const char*>(state.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

inline std::pair<nlohmann::json, Vector> read_checkpoint(std::istream& in) {
  char magic[sizeof kCheckpointMagic] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) throw DataError("not a model checkpoint");
  std::uint64_t hlen = 0, n = 0;
  in.read(reinterpret_cast<char*>(&hlen), sizeof hlen);
  if (!in || hlen > (1u << 30)) throw DataError("corrupt checkpoint header");
  std::string h(hlen, '\0');
  in.read(h.data(), static_cast<std::streamsize>(hlen));
  in.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!in || n > (1ull << 32)) throw DataError("corrupt checkpoint");
  Vector state(static_cast<Index>(n));
  in.read(reinterpret_cast<char*>(state.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw DataError("truncated checkpoint");
  return {nlohmann::json::parse(h), state};
}
}  // namespace detail

inline void save_checkpoint(std::ostream& os, const Mlp& m, const TrainTrace& t, const nlohmann::json& extra = {}) {
  nlohmann::json h = {{"kind", "mlp"},        {"task", std::string(to_string(m.task()))},
                      {"input_dim", m.input_dim()}, {"config", to_json(m.config())},
                      {"y_mean", m.y_mean},   {"y_std", m.y_std},
                      {"trace", to_json(t)},  {"extra", extra}};
  detail::write_checkpoint(os, h, m.snapshot());
}

inline void save_checkpoint(std::ostream& os, const Cnn1d& m, const TrainTrace& t, const nlohmann::json& extra = {}) {
  nlohmann::json h = {{"kind", "cnn"},         {"task", std::string(to_string(m.task()))},
                      {"positions", m.positions()}, {"channels", m.channels()},
                      {"config", to_json(m.config())}, {"y_mean", m.y_mean},
                      {"y_std", m.y_std},      {"trace", to_json(t)},
                      {"extra", extra}};
  detail::write_checkpoint(os, h, m.snapshot());
}

struct LoadedNetwork {
  std::string kind;
  Mlp mlp;
  Cnn1d cnn;
  TrainTrace trace;
  nlohmann::json extra;

  Vector predict(const Matrix& X) const { return kind == "mlp" ? mlp.predict(X) : cnn.predict(X); }
  Task task() const { return kind == "mlp" ? mlp.task() : cnn.task(); }
};

inline LoadedNetwork load_checkpoint(std::istream& in) {
  auto [h, state] = detail::read_checkpoint(in);
  LoadedNetwork out;
  out.kind = h.at("kind").get<std::string>();
  const Task task = parse_task(h.at("task").get<std::string>());
  out.trace = trace_from_json(h.at("trace"));
  out.extra = h.value("extra", nlohmann::json::object());
  auto fill = [&](auto& net) {
    if (net.snapshot().size() != state.size()) throw DataError("checkpoint parameter count mismatch");
    net.restore(state);
    net.y_mean = h.at("y_mean").get<double>();
    net.y_std = h.at("y_std").get<double>();
  };
  if (out.kind == "mlp") {
    out.mlp = Mlp(h.at("input_dim").get<Index>(), task, mlp_config_from_json(h.at("config")));
    fill(out.mlp);
  } else if (out.kind == "cnn") {
    out.cnn = Cnn1d(task, cnn_config_from_json(h.at("config")), h.at("positions").get<int>(),
                    h.at("channels").get<int>());
    fill(out.cnn);
  } else {
    throw DataError("unknown checkpoint kind '" + out.kind + "'");
  }
  return out;
}

}  // namespace reformat
