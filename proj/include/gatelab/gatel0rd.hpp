#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>

#include "gatelab/errors.hpp"
#include "gatelab/params.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

/// Two-layer perceptron y = W2 tanh(W1 x + b1) + b2, optionally followed by
/// tanh. Parameters live in a shared ParamSet under a name prefix.
struct Mlp {
  std::size_t w1 = 0, b1 = 0, w2 = 0, b2 = 0;
  bool tanh_out = false;

  static Mlp create(ParamSet& ps, const std::string& prefix, int in, int hidden, int out, bool tanh_out) {
    Mlp m;
    m.w1 = ps.add(prefix + ".W1", hidden, in);
    m.b1 = ps.add(prefix + ".b1", hidden, 1);
    m.w2 = ps.add(prefix + ".W2", out, hidden);
    m.b2 = ps.add(prefix + ".b2", out, 1);
    m.tanh_out = tanh_out;
    return m;
  }

  void init(ParamSet& ps, Rng& rng) const {
    init_uniform_fan_in(ps[w1], static_cast<double>(ps[w1].cols()), rng);
    init_uniform_fan_in(ps[b1], static_cast<double>(ps[w1].cols()), rng);
    init_uniform_fan_in(ps[w2], static_cast<double>(ps[w2].cols()), rng);
    init_uniform_fan_in(ps[b2], static_cast<double>(ps[w2].cols()), rng);
  }

  struct Cache {
    Eigen::VectorXd x, hid, y;
  };

  Eigen::VectorXd forward(const ParamSet& ps, const Eigen::VectorXd& x, Cache* cache = nullptr) const {
    Eigen::VectorXd hid = (ps[w1] * x + ps[b1]).array().tanh().matrix();
    Eigen::VectorXd y = ps[w2] * hid + ps[b2];
    if (tanh_out) y = y.array().tanh().matrix();
    if (cache) *cache = {x, hid, y};
    return y;
  }

  /// Accumulates parameter gradients; returns dL/dx.
  Eigen::VectorXd backward(const ParamSet& ps, const Cache& c, Eigen::VectorXd dy, ParamSet& grad) const {
    if (tanh_out) dy = dy.cwiseProduct((1.0 - c.y.array().square()).matrix());
    grad[w2] += dy * c.hid.transpose();
    grad[b2] += dy;
    Eigen::VectorXd dh = (ps[w2].transpose() * dy).cwiseProduct((1.0 - c.hid.array().square()).matrix());
    grad[w1] += dh * c.x.transpose();
    grad[b1] += dh;
    return ps[w1].transpose() * dh;
  }
};

struct GateL0RDConfig {
  int input_dim = 8;
  int hidden_size = 16;
  int mlp_hidden = 16;
  int action_dim = 1;
  double gate_noise_var = 0.0;
  double l0_weight = 0.01;
};

/// Sparsely gated recurrent cell. The latent h only changes on steps where
/// some gate coordinate opens:
///   s = g(x) + noise, Lambda = max(0, tanh s), Theta = [Lambda > 0],
///   h = Lambda * r(x) + (1 - Lambda) * h_prev, out = p([x, h]),
/// with x = [z, h_prev]. The L0 penalty lambda * mean(Theta) is trained with
/// a straight-through estimator, so its gradient is that of lambda * mean(Lambda).
class GateL0RD {
 public:
  explicit GateL0RD(GateL0RDConfig cfg = {}) : cfg_(cfg) {
    if (cfg.l0_weight < 0) throw ConfigError("L0 weight must be non-negative");
    if (cfg.gate_noise_var < 0) throw ConfigError("gate noise variance must be non-negative");
    const int x_dim = cfg.input_dim + cfg.hidden_size;
    r_ = Mlp::create(params_, "r", x_dim, cfg.mlp_hidden, cfg.hidden_size, true);
    g_ = Mlp::create(params_, "g", x_dim, cfg.mlp_hidden, cfg.hidden_size, false);
    p_ = Mlp::create(params_, "p", x_dim + cfg.hidden_size, cfg.mlp_hidden, 2 * cfg.action_dim, false);
  }

  void init(Rng& rng) {
    r_.init(params_, rng);
    g_.init(params_, rng);
    p_.init(params_, rng);
  }

  [[nodiscard]] const GateL0RDConfig& config() const { return cfg_; }
  ParamSet& params() { return params_; }
  [[nodiscard]] const ParamSet& params() const { return params_; }

  struct StepOutput {
    Eigen::VectorXd h;
    Eigen::VectorXd mu;
    Eigen::VectorXd log_sigma;
    Eigen::VectorXd theta;
    double reg_loss = 0.0;
  };

  struct StepCache {
    Eigen::VectorXd h_prev, s, lambda, r;
    Mlp::Cache rc, gc, pc;
  };

  StepOutput step(const Eigen::VectorXd& z, const Eigen::VectorXd& h_prev, Rng* rng = nullptr,
                  StepCache* cache = nullptr) const {
    if (z.size() != cfg_.input_dim || h_prev.size() != cfg_.hidden_size)
      throw ConfigError("GateL0RD input dimension mismatch");
    Eigen::VectorXd x(cfg_.input_dim + cfg_.hidden_size);
    x << z, h_prev;
    StepCache local;
    StepCache& c = cache ? *cache : local;
    c.h_prev = h_prev;
    c.r = r_.forward(params_, x, &c.rc);
    c.s = g_.forward(params_, x, &c.gc);
    if (cfg_.gate_noise_var > 0 && rng) {
      const double sd = std::sqrt(cfg_.gate_noise_var);
      for (Eigen::Index i = 0; i < c.s.size(); ++i) c.s[i] += sd * rng->normal();
    }
    c.lambda = c.s.array().tanh().max(0.0).matrix();
    StepOutput out;
    out.theta = (c.lambda.array() > 0.0).cast<double>().matrix();
    out.h = c.lambda.cwiseProduct(c.r) + (1.0 - c.lambda.array()).matrix().cwiseProduct(h_prev);
    Eigen::VectorXd xp(x.size() + cfg_.hidden_size);
    xp << x, out.h;
    const Eigen::VectorXd ap = p_.forward(params_, xp, &c.pc);
    out.mu = ap.head(cfg_.action_dim);
    out.log_sigma = ap.tail(cfg_.action_dim);
    out.reg_loss = cfg_.l0_weight * out.theta.mean();
    return out;
  }

  /// Backward through one step for upstream gradients on (h, mu, log_sigma)
  /// plus the regulariser (weight `reg_scale`). Returns dL/dh_prev.
  Eigen::VectorXd backward(const StepCache& c, const Eigen::VectorXd& dh_out, const Eigen::VectorXd& dmu,
                           const Eigen::VectorXd& dlog_sigma, double reg_scale, ParamSet& grad) const {
    const int H = cfg_.hidden_size;
    const int X = cfg_.input_dim + H;
    Eigen::VectorXd dap(2 * cfg_.action_dim);
    dap << dmu, dlog_sigma;
    const Eigen::VectorXd dxp = p_.backward(params_, c.pc, dap, grad);
    Eigen::VectorXd dx = dxp.head(X);
    const Eigen::VectorXd dh = dh_out + dxp.tail(H);

    // h = Lambda * r + (1 - Lambda) * h_prev
    Eigen::VectorXd dlambda = dh.cwiseProduct(c.r - c.h_prev);
    dlambda.array() += reg_scale * cfg_.l0_weight / H;  // straight-through Theta
    const Eigen::VectorXd dr = dh.cwiseProduct(c.lambda);
    Eigen::VectorXd dh_prev = dh.cwiseProduct((1.0 - c.lambda.array()).matrix());

    Eigen::VectorXd ds(H);
    for (int i = 0; i < H; ++i) {
      const double t = std::tanh(c.s[i]);
      ds[i] = c.s[i] > 0 ? dlambda[i] * (1.0 - t * t) : 0.0;
    }
    dx += r_.backward(params_, c.rc, dr, grad);
    dx += g_.backward(params_, c.gc, ds, grad);
    dh_prev += dx.tail(H);
    return dh_prev;
  }

 private:
  GateL0RDConfig cfg_;
  ParamSet params_;
  Mlp r_, g_, p_;
};

}  // namespace gatelab
