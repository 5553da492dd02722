#pragma once

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "gatelab/errors.hpp"

namespace gatelab {

/// Proprioceptive kinematic chain (elbow -> wrist in the 1D task). Node 0 is
/// driven by actions; downstream nodes follow through scalar link gains.
struct BodySchema {
  struct Node {
    double mean = 0.0;
    double log_var = 0.0;
  };

  std::vector<Node> nodes{Node{}, Node{}};
  std::vector<double> link_gain{1.0};        // W_ij for link i -> i+1
  std::vector<double> link_log_var{-4.0};    // intrinsic variance added per link
  double phi0 = 0.1;

  [[nodiscard]] double phi(double magnitude) const { return phi0 * std::abs(magnitude); }

  void validate() const {
    if (nodes.empty()) throw ConfigError("body schema needs at least one node");
    if (link_gain.size() + 1 != nodes.size() || link_log_var.size() + 1 != nodes.size())
      throw ConfigError("body schema link count must be node count minus one");
    if (phi0 < 0) throw ConfigError("uncertainty gain must be non-negative");
  }
};

inline double log_add_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// Downstream nodes take the transformed upstream mean; their variance is
/// the upstream variance plus the link's own, so it never drops below it.
inline BodySchema schema_propagate(BodySchema s) {
  s.validate();
  for (std::size_t i = 0; i + 1 < s.nodes.size(); ++i) {
    s.nodes[i + 1].mean = s.link_gain[i] * s.nodes[i].mean;
    s.nodes[i + 1].log_var = log_add_exp(s.nodes[i].log_var, s.link_log_var[i]);
  }
  return s;
}

inline BodySchema schema_apply_action(BodySchema s, double a) {
  s.validate();
  s.nodes[0].mean += a;
  s.nodes[0].log_var += s.phi(a);
  return schema_propagate(std::move(s));
}

}  // namespace gatelab
