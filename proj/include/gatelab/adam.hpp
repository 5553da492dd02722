#pragma once

#include <cmath>

#include "gatelab/errors.hpp"
#include "gatelab/params.hpp"

namespace gatelab {

struct AdamConfig {
  double lr = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("learning rate must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("Adam epsilon must be positive");
  }
};

/// Adam with bias correction. Blocks marked non-trainable are left untouched.
class Adam {
 public:
  Adam(const ParamSet& layout, AdamConfig cfg) : cfg_(cfg), m_(layout.zeros_like()), v_(layout.zeros_like()) {
    cfg_.validate();
  }

  /// Returns false (and leaves everything unchanged) when any trainable
  /// gradient entry is non-finite.
  bool step(ParamSet& params, const ParamSet& grad) {
    if (!params.same_layout(grad) || !params.same_layout(m_)) throw ConfigError("Adam layout mismatch");
    for (std::size_t i = 0; i < grad.size(); ++i)
      if (params.block(i).trainable && !grad[i].allFinite()) {
        ++skipped_;
        return false;
      }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (!params.block(i).trainable) continue;
      m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i].cwiseProduct(grad[i]);
      params[i].array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
    return true;
  }

  [[nodiscard]] long steps() const { return t_; }
  [[nodiscard]] long skipped() const { return skipped_; }
  [[nodiscard]] const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  ParamSet m_, v_;
  long t_ = 0;
  long skipped_ = 0;
};

}  // namespace gatelab
