#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "gatelab/errors.hpp"
#include "gatelab/params.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/slots.hpp"

namespace gatelab {

struct GateConfig {
  int k = 32;
  int n_layers = 2;
  int d_head = 16;
  int key_dim = 2;  // (action / v_max, task demand)
  int value_dim = kValueDim;
  bool train_residual_gain = false;

  void validate() const {
    if (k < 1) throw ConfigError("context window k must be >= 1");
    if (n_layers < 1) throw ConfigError("gate depth must be >= 1");
    if (d_head <= 0) throw ConfigError("d_head must be positive");
    if (key_dim <= 0 || value_dim <= 0) throw ConfigError("key and value dimensions must be positive");
  }
};

/// Sliding window of the last k (key, value) entries, oldest first.
class ContextBuffer {
 public:
  struct Entry {
    Eigen::VectorXd key;
    Eigen::VectorXd value;
  };

  explicit ContextBuffer(int k) : k_(k) {
    if (k < 1) throw ConfigError("context window k must be >= 1");
  }

  void push(Eigen::VectorXd key, Eigen::VectorXd value) {
    entries_.push_back({std::move(key), std::move(value)});
    if (static_cast<int>(entries_.size()) > k_) entries_.pop_front();
  }

  [[nodiscard]] bool full() const { return static_cast<int>(entries_.size()) == k_; }
  [[nodiscard]] int size() const { return static_cast<int>(entries_.size()); }
  [[nodiscard]] int capacity() const { return k_; }
  [[nodiscard]] const Entry& operator[](int i) const { return entries_[static_cast<std::size_t>(i)]; }
  void clear() { entries_.clear(); }

 private:
  int k_;
  std::deque<Entry> entries_;
};

struct GateOutput {
  double confidence = 0.5;
  double logit = 0.0;
  Eigen::VectorXd alpha;  // final layer attention over the window
};

/// A batch of window evaluations sharing one timeline of buffer entries.
/// Window t attends over timeline rows [end[t] - k + 1, end[t]].
struct GateBatch {
  Eigen::MatrixXd keys;     // n x key_dim
  Eigen::MatrixXd values;   // n x value_dim
  Eigen::MatrixXd queries;  // T x key_dim
  std::vector<int> end;
};

struct GateBatchCache {
  std::vector<Eigen::MatrixXd> kk, vv;    // per layer, n x d_head
  std::vector<Eigen::MatrixXd> e, ctx;    // per layer, T x d_head
  std::vector<Eigen::MatrixXd> alpha;     // per layer, T x k
  Eigen::VectorXd logits;
};

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Attention gate over a k-step context. Per layer l:
///   e = W_Q q + b_Q (+ rho_l * ctx_{l-1} for l > 0)
///   alpha = softmax(K W_K^T e / sqrt(d_head)),  ctx_l = sum_i alpha_i W_V z_i
/// and the confidence is sigmoid(w . ctx_last).
class ContingencyGate {
 public:
  explicit ContingencyGate(GateConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      wq_.push_back(params_.add(p + "W_Q", cfg_.d_head, cfg_.key_dim));
      bq_.push_back(params_.add(p + "b_Q", cfg_.d_head, 1));
      wk_.push_back(params_.add(p + "W_K", cfg_.d_head, cfg_.key_dim));
      wv_.push_back(params_.add(p + "W_V", cfg_.d_head, cfg_.value_dim));
      if (l > 0) {
        rho_.push_back(params_.add(p + "rho", 1, 1, cfg_.train_residual_gain));
        params_[rho_.back()](0, 0) = 1.0;
      } else {
        rho_.push_back(0);
      }
    }
    w_ = params_.add("readout.w", cfg_.d_head, 1);
  }

  /// Uniform fan-in initialisation. A zero readout makes every confidence
  /// exactly 0.5 until training starts.
  void init(Rng& rng, bool zero_readout) {
    for (int l = 0; l < cfg_.n_layers; ++l) {
      init_uniform_fan_in(params_[wq_[l]], cfg_.key_dim, rng);
      init_uniform_fan_in(params_[bq_[l]], cfg_.key_dim, rng);
      init_uniform_fan_in(params_[wk_[l]], cfg_.key_dim, rng);
      init_uniform_fan_in(params_[wv_[l]], cfg_.value_dim, rng);
    }
    if (zero_readout)
      params_[w_].setZero();
    else
      init_uniform_fan_in(params_[w_], cfg_.d_head, rng);
  }

  [[nodiscard]] const GateConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }

  /// Replaces the parameters; names and shapes must match this gate.
  void set_params(const ParamSet& ps) {
    if (!ps.same_layout(params_)) throw ConfigError("parameter layout does not match gate configuration");
    params_ = ps;
  }

  [[nodiscard]] std::size_t wq(int l) const { return wq_[l]; }
  [[nodiscard]] std::size_t bq(int l) const { return bq_[l]; }
  [[nodiscard]] std::size_t wk(int l) const { return wk_[l]; }
  [[nodiscard]] std::size_t wv(int l) const { return wv_[l]; }
  [[nodiscard]] std::size_t rho(int l) const { return rho_[l]; }
  [[nodiscard]] std::size_t readout() const { return w_; }

  /// Single evaluation; std::nullopt while the buffer is not yet full.
  [[nodiscard]] std::optional<GateOutput> forward(const ContextBuffer& buf, const Eigen::VectorXd& query) const {
    if (buf.capacity() != cfg_.k) throw ConfigError("buffer capacity differs from gate k");
    if (!buf.full()) return std::nullopt;
    if (!params_.all_finite()) throw NumericError("non-finite gate parameters");
    GateBatch b;
    b.keys.resize(cfg_.k, cfg_.key_dim);
    b.values.resize(cfg_.k, cfg_.value_dim);
    for (int i = 0; i < cfg_.k; ++i) {
      if (buf[i].key.size() != cfg_.key_dim || buf[i].value.size() != cfg_.value_dim)
        throw ConfigError("buffer entry dimension mismatch");
      b.keys.row(i) = buf[i].key.transpose();
      b.values.row(i) = buf[i].value.transpose();
    }
    if (query.size() != cfg_.key_dim) throw ConfigError("query dimension mismatch");
    b.queries = query.transpose();
    b.end = {cfg_.k - 1};
    GateBatchCache c;
    forward_batch(b, c);
    GateOutput out;
    out.logit = c.logits[0];
    out.confidence = sigmoid(out.logit);
    out.alpha = c.alpha.back().row(0).transpose();
    return out;
  }

  /// Logits for every window in the batch; fills the cache used by backward.
  const Eigen::VectorXd& forward_batch(const GateBatch& b, GateBatchCache& c) const {
    const int L = cfg_.n_layers, k = cfg_.k, dh = cfg_.d_head;
    const auto T = static_cast<Eigen::Index>(b.end.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int end : b.end)
      if (end < k - 1 || end >= b.keys.rows()) throw ConfigError("window extends outside the timeline");
    c.kk.resize(L);
    c.vv.resize(L);
    c.e.resize(L);
    c.ctx.resize(L);
    c.alpha.resize(L);
    for (int l = 0; l < L; ++l) {
      c.kk[l].noalias() = b.keys * params_[wk_[l]].transpose();
      c.vv[l].noalias() = b.values * params_[wv_[l]].transpose();
      c.e[l].noalias() = b.queries * params_[wq_[l]].transpose();
      c.e[l].rowwise() += params_[bq_[l]].col(0).transpose();
      if (l > 0) c.e[l] += params_[rho_[l]](0, 0) * c.ctx[l - 1];
      c.alpha[l].resize(T, k);
      c.ctx[l].resize(T, dh);
      Eigen::VectorXd s(k);
      for (Eigen::Index t = 0; t < T; ++t) {
        const int start = b.end[static_cast<std::size_t>(t)] - k + 1;
        s.noalias() = c.kk[l].middleRows(start, k) * c.e[l].row(t).transpose();
        s *= scale;
        const double m = s.maxCoeff();
        s = (s.array() - m).exp().matrix();
        s /= s.sum();
        c.alpha[l].row(t) = s.transpose();
        c.ctx[l].row(t).noalias() = s.transpose() * c.vv[l].middleRows(start, k);
      }
    }
    c.logits.noalias() = c.ctx[L - 1] * params_[w_].col(0);
    return c.logits;
  }

  /// Accumulates dLoss/dparams given dLoss/dlogit for each window.
  void backward_batch(const GateBatch& b, const GateBatchCache& c, const Eigen::VectorXd& dlogits,
                      ParamSet& grad) const {
    const int L = cfg_.n_layers, k = cfg_.k, dh = cfg_.d_head;
    const auto T = static_cast<Eigen::Index>(b.end.size());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    grad[w_].col(0).noalias() += c.ctx[L - 1].transpose() * dlogits;
    Eigen::MatrixXd dctx = dlogits * params_[w_].col(0).transpose();  // T x dh
    Eigen::MatrixXd dkk, dvv, de(T, dh);
    Eigen::VectorXd da(k), ds(k);
    for (int l = L - 1; l >= 0; --l) {
      dkk.setZero(b.keys.rows(), dh);
      dvv.setZero(b.keys.rows(), dh);
      for (Eigen::Index t = 0; t < T; ++t) {
        const int start = b.end[static_cast<std::size_t>(t)] - k + 1;
        const Eigen::VectorXd alpha = c.alpha[l].row(t).transpose();
        da.noalias() = c.vv[l].middleRows(start, k) * dctx.row(t).transpose();
        dvv.middleRows(start, k).noalias() += alpha * dctx.row(t);
        ds = alpha.cwiseProduct((da.array() - alpha.dot(da)).matrix()) * scale;
        de.row(t).noalias() = ds.transpose() * c.kk[l].middleRows(start, k);
        dkk.middleRows(start, k).noalias() += ds * c.e[l].row(t);
      }
      grad[wv_[l]].noalias() += dvv.transpose() * b.values;
      grad[wk_[l]].noalias() += dkk.transpose() * b.keys;
      grad[wq_[l]].noalias() += de.transpose() * b.queries;
      grad[bq_[l]].col(0) += de.colwise().sum().transpose();
      if (l > 0) {
        grad[rho_[l]](0, 0) += (de.array() * c.ctx[l - 1].array()).sum();
        dctx = params_[rho_[l]](0, 0) * de;
      }
    }
  }

 private:
  GateConfig cfg_;
  ParamSet params_;
  std::vector<std::size_t> wq_, bq_, wk_, wv_, rho_;
  std::size_t w_ = 0;
};

/// Categorical slot commitment from per-slot logits.
struct SlotCommitment {
  Eigen::VectorXd probs;   // soft probabilities (or the relaxed sample when hard)
  Eigen::VectorXd onehot;  // exact one-hot when hard, equals probs otherwise
  int index = 0;
};

inline Eigen::VectorXd softmax(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  Eigen::VectorXd e = (x.array() - m).exp().matrix();
  return e / e.sum();
}

/// Soft: softmax(logits / tau). Hard: Gumbel-softmax sample whose forward
/// value is the one-hot argmax (straight-through).
inline SlotCommitment slot_commit(const Eigen::VectorXd& logits, double tau, bool hard, Rng& rng) {
  if (!(tau > 0)) throw DomainError("temperature must be positive");
  SlotCommitment out;
  Eigen::VectorXd z = logits;
  if (hard)
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] += rng.gumbel();
  out.probs = softmax(z / tau);
  Eigen::Index idx = 0;
  out.probs.maxCoeff(&idx);
  out.index = static_cast<int>(idx);
  if (hard) {
    out.onehot = Eigen::VectorXd::Zero(z.size());
    out.onehot[idx] = 1.0;
  } else {
    out.onehot = out.probs;
  }
  return out;
}

/// Fixed exponential moving average with rate 1/k starting from chance.
inline std::vector<double> fixed_ema_baseline(const std::vector<double>& evidence, int k, double c0 = 0.5) {
  if (k < 1) throw DomainError("EMA window must be >= 1");
  const double a = 1.0 / k;
  std::vector<double> out;
  out.reserve(evidence.size());
  double c = c0;
  for (double e : evidence) {
    c = (1.0 - a) * c + a * e;
    out.push_back(c);
  }
  return out;
}

}  // namespace gatelab
