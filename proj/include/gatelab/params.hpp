#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "gatelab/errors.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

/// A named, ordered collection of dense parameter blocks. Gradients and
/// optimizer moments are stored as ParamSets of identical layout.
class ParamSet {
 public:
  struct Block {
    std::string name;
    Eigen::MatrixXd value;
    bool trainable = true;
  };

  std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                  bool trainable = true) {
    if (index_.count(name)) throw ConfigError("duplicate parameter block: " + name);
    index_[name] = blocks_.size();
    blocks_.push_back({name, Eigen::MatrixXd::Zero(rows, cols), trainable});
    return blocks_.size() - 1;
  }

  [[nodiscard]] std::size_t size() const { return blocks_.size(); }
  [[nodiscard]] bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Eigen::MatrixXd& operator[](std::size_t i) { return blocks_[i].value; }
  const Eigen::MatrixXd& operator[](std::size_t i) const { return blocks_[i].value; }

  Eigen::MatrixXd& at(const std::string& name) { return blocks_[find(name)].value; }
  [[nodiscard]] const Eigen::MatrixXd& at(const std::string& name) const {
    return blocks_[find(name)].value;
  }

  Block& block(std::size_t i) { return blocks_[i]; }
  [[nodiscard]] const Block& block(std::size_t i) const { return blocks_[i]; }
  [[nodiscard]] const std::vector<Block>& blocks() const { return blocks_; }

  [[nodiscard]] std::size_t find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter block: " + name);
    return it->second;
  }

  /// Same names and shapes, all zeros.
  [[nodiscard]] ParamSet zeros_like() const {
    ParamSet out = *this;
    for (auto& b : out.blocks_) b.value.setZero();
    return out;
  }

  void set_zero() {
    for (auto& b : blocks_) b.value.setZero();
  }

  [[nodiscard]] std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& b : blocks_) n += static_cast<std::size_t>(b.value.size());
    return n;
  }

  [[nodiscard]] bool all_finite() const {
    for (const auto& b : blocks_)
      if (!b.value.allFinite()) return false;
    return true;
  }

  [[nodiscard]] bool same_layout(const ParamSet& o) const {
    if (o.blocks_.size() != blocks_.size()) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      if (blocks_[i].name != o.blocks_[i].name || blocks_[i].value.rows() != o.blocks_[i].value.rows() ||
          blocks_[i].value.cols() != o.blocks_[i].value.cols())
        return false;
    }
    return true;
  }

  /// Flat view in block order (column-major within a block).
  [[nodiscard]] std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(scalar_count());
    for (const auto& b : blocks_) out.insert(out.end(), b.value.data(), b.value.data() + b.value.size());
    return out;
  }

  void unflatten(const std::vector<double>& flat) {
    if (flat.size() != scalar_count()) throw ConfigError("flat parameter vector has wrong length");
    std::size_t off = 0;
    for (auto& b : blocks_) {
      std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
                flat.begin() + static_cast<std::ptrdiff_t>(off + b.value.size()), b.value.data());
      off += static_cast<std::size_t>(b.value.size());
    }
  }

  /// Scalar reference by flat index; used by finite-difference checks.
  double& scalar(std::size_t flat_index) {
    for (auto& b : blocks_) {
      const auto n = static_cast<std::size_t>(b.value.size());
      if (flat_index < n) return b.value.data()[flat_index];
      flat_index -= n;
    }
    throw ConfigError("flat parameter index out of range");
  }

  bool operator==(const ParamSet& o) const {
    if (!same_layout(o)) return false;
    for (std::size_t i = 0; i < blocks_.size(); ++i)
      if (blocks_[i].value != o.blocks_[i].value) return false;
    return true;
  }

 private:
  std::vector<Block> blocks_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Fills a block with U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
inline void init_uniform_fan_in(Eigen::MatrixXd& m, double fan_in, Rng& rng) {
  const double b = 1.0 / std::sqrt(fan_in);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = rng.uniform(-b, b);
}

}  // namespace gatelab
