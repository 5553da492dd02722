#pragma once

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "gatelab/errors.hpp"
#include "gatelab/training.hpp"

namespace gatelab {

inline double ema_predict(double t, double k, double c_inf) {
  if (t < 0) throw DomainError("time must be non-negative");
  if (k < 1) throw DomainError("EMA window must be >= 1");
  return c_inf - (c_inf - 0.5) * std::exp(-t / k);
}

struct EmaFit {
  double c_infinity = 0.5;
  double rate = 1.0;
  double residual = 0.0;  // RMS error over the fitted trace
};

/// Least-squares c_inf with the rate fixed at k. The model is linear in
/// c_inf: c(t) - 0.5 e(t) = c_inf (1 - e(t)), e(t) = exp(-t / k). Time is the
/// trace index; on a cold-phase episode trace that is the optimizer update.
inline EmaFit fit_ema(const std::vector<double>& trace, double k) {
  if (trace.size() < 3) throw InsufficientDataError("EMA fit needs at least 3 points");
  if (k < 1) throw DomainError("EMA window must be >= 1");
  double num = 0.0, den = 0.0;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const double e = std::exp(-static_cast<double>(t) / k);
    num += (1.0 - e) * (trace[t] - 0.5 * e);
    den += (1.0 - e) * (1.0 - e);
  }
  EmaFit fit;
  fit.rate = k;
  fit.c_infinity = den > 0 ? std::clamp(num / den, 0.0, 1.0) : 0.5;
  double sse = 0.0;
  for (std::size_t t = 0; t < trace.size(); ++t) {
    const double r = ema_predict(static_cast<double>(t), k, fit.c_infinity) - trace[t];
    sse += r * r;
  }
  fit.residual = std::sqrt(sse / static_cast<double>(trace.size()));
  return fit;
}

/// (epochs x td) grid of mean confidence.
struct PhaseDiagram {
  std::vector<double> td;
  Eigen::MatrixXd grid;  // rows epochs, cols td
  int k = 0;
  int n_layers = 0;
  std::vector<std::uint64_t> seeds;

  void validate() const {
    if (grid.cols() != static_cast<Eigen::Index>(td.size())) throw ConfigError("diagram columns differ from td grid");
    if (!grid.allFinite()) throw NumericError("diagram has non-finite entries");
    if ((grid.array() < 0).any() || (grid.array() > 1).any()) throw DomainError("diagram entries must lie in [0, 1]");
  }

  [[nodiscard]] std::optional<Eigen::Index> column(double value) const {
    for (std::size_t i = 0; i < td.size(); ++i)
      if (std::abs(td[i] - value) < 1e-9) return static_cast<Eigen::Index>(i);
    return std::nullopt;
  }
};

/// Diagram from one run's records.
inline PhaseDiagram diagram_from_records(const std::vector<EpochRecord>& recs) {
  PhaseDiagram d;
  std::map<double, int> col;
  int max_epoch = -1;
  for (const auto& r : recs) {
    col.emplace(r.td, 0);
    max_epoch = std::max(max_epoch, r.epoch);
  }
  int i = 0;
  for (auto& [td, c] : col) {
    c = i++;
    d.td.push_back(td);
  }
  d.grid = Eigen::MatrixXd::Constant(max_epoch + 1, static_cast<Eigen::Index>(col.size()),
                                     std::numeric_limits<double>::quiet_NaN());
  for (const auto& r : recs) d.grid(r.epoch, col[r.td]) = r.mean_confidence;
  if (!recs.empty()) {
    d.k = recs.front().k;
    d.n_layers = recs.front().n_layers;
    d.seeds = {recs.front().seed};
  }
  if (!d.grid.allFinite()) throw ConfigError("records do not form a complete (epoch x td) grid");
  return d;
}

/// Element-wise mean over seeds; all diagrams must share their grid.
inline PhaseDiagram mean_diagram(const std::vector<PhaseDiagram>& ds) {
  if (ds.empty()) throw InsufficientDataError("no diagrams to average");
  PhaseDiagram out = ds.front();
  out.seeds.clear();
  out.grid.setZero();
  for (const auto& d : ds) {
    if (d.td != out.td || d.grid.rows() != out.grid.rows()) throw ConfigError("diagram grids differ");
    out.grid += d.grid;
    out.seeds.insert(out.seeds.end(), d.seeds.begin(), d.seeds.end());
  }
  out.grid /= static_cast<double>(ds.size());
  return out;
}

inline constexpr double kHighDemandAnchor = 0.88;
inline constexpr int kDefaultTrailingWindow = 10;

/// Trailing-window mean confidence at td=0 minus that at td=0.88.
inline double compute_delta(const PhaseDiagram& d, int window = kDefaultTrailingWindow) {
  const auto lo = d.column(0.0), hi = d.column(kHighDemandAnchor);
  if (!lo || !hi) throw ConfigError("diagram lacks the td=0 or td=0.88 anchor column");
  if (window < 1 || window > d.grid.rows()) throw ConfigError("trailing window outside the diagram");
  const auto tail = d.grid.bottomRows(window);
  return tail.col(*lo).mean() - tail.col(*hi).mean();
}

/// Secondary column: max minus min of the trailing-window per-td means.
inline double range_delta(const PhaseDiagram& d, int window = kDefaultTrailingWindow) {
  if (window < 1 || window > d.grid.rows()) throw ConfigError("trailing window outside the diagram");
  const Eigen::RowVectorXd m = d.grid.bottomRows(window).colwise().mean();
  return m.maxCoeff() - m.minCoeff();
}

/// Trailing-window mean confidence per td column.
inline std::vector<double> trailing_means(const PhaseDiagram& d, int window = kDefaultTrailingWindow) {
  const Eigen::RowVectorXd m = d.grid.bottomRows(std::min<Eigen::Index>(window, d.grid.rows())).colwise().mean();
  return {m.data(), m.data() + m.size()};
}

enum class SeparationStatus { Dead, Emerging, Partial, Selected, Saturated };

inline std::string to_string(SeparationStatus s) {
  switch (s) {
    case SeparationStatus::Dead: return "Dead";
    case SeparationStatus::Emerging: return "Emerging";
    case SeparationStatus::Partial: return "Partial";
    case SeparationStatus::Selected: return "Selected";
    case SeparationStatus::Saturated: return "Saturated";
  }
  return "Dead";
}

inline constexpr double kDeadBelow = 0.02;
inline constexpr double kEmergingBelow = 0.10;
inline constexpr double kPartialBelow = 0.15;
inline constexpr double kSaturationTolerance = 0.02;
inline constexpr double kStepsThreshold = 10.0;

inline SeparationStatus base_status(double delta) {
  if (delta < kDeadBelow) return SeparationStatus::Dead;
  if (delta < kEmergingBelow) return SeparationStatus::Emerging;
  if (delta < kPartialBelow) return SeparationStatus::Partial;
  return SeparationStatus::Selected;
}

struct SweepRow {
  int k = 0;
  std::optional<double> delta;  // seed mean; empty when the k is missing
  double delta_sd = 0.0;
  double range = 0.0;
  int n_seeds = 0;
  std::optional<SeparationStatus> status;
};

struct SeparationReport {
  std::vector<SweepRow> rows;
  double k_steps = kStepsThreshold;
  std::optional<int> largest_dead_k;
  std::optional<int> smallest_resolved_k;
  bool brackets_threshold = false;
  std::vector<int> missing;

  [[nodiscard]] const SweepRow* row(int k) const {
    for (const auto& r : rows)
      if (r.k == k) return &r;
    return nullptr;
  }
};

struct SweepInput {
  int k = 0;
  std::vector<double> deltas;  // one per seed
  std::vector<double> ranges;
};

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); zero for fewer than two values.
inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Labels each k by its seed-mean separation. A Selected row becomes
/// Saturated when the next smaller resolved k is Selected-or-better and
/// within the saturation tolerance, i.e. doubling the window stopped paying.
inline SeparationReport sweep_report(std::vector<SweepInput> inputs, const std::vector<int>& expected_k = {}) {
  std::sort(inputs.begin(), inputs.end(), [](const auto& a, const auto& b) { return a.k < b.k; });
  SeparationReport rep;
  std::vector<int> ks = expected_k;
  for (const auto& in : inputs)
    if (std::find(ks.begin(), ks.end(), in.k) == ks.end()) ks.push_back(in.k);
  std::sort(ks.begin(), ks.end());
  for (int k : ks) {
    SweepRow row;
    row.k = k;
    auto it = std::find_if(inputs.begin(), inputs.end(), [&](const auto& in) { return in.k == k; });
    if (it != inputs.end() && !it->deltas.empty()) {
      row.delta = mean_of(it->deltas);
      row.delta_sd = sd_of(it->deltas);
      row.range = mean_of(it->ranges);
      row.n_seeds = static_cast<int>(it->deltas.size());
      row.status = base_status(*row.delta);
    } else {
      rep.missing.push_back(k);
    }
    rep.rows.push_back(row);
  }
  const SweepRow* prev = nullptr;
  for (auto& row : rep.rows) {
    if (!row.delta) continue;
    if (prev && *row.status == SeparationStatus::Selected && *prev->delta >= kPartialBelow &&
        std::abs(*row.delta - *prev->delta) <= kSaturationTolerance)
      row.status = SeparationStatus::Saturated;
    prev = &row;
  }
  for (const auto& row : rep.rows) {
    if (!row.delta) continue;
    if (*row.status == SeparationStatus::Dead) rep.largest_dead_k = row.k;
  }
  for (const auto& row : rep.rows) {
    if (!row.delta) continue;
    const bool resolved = *row.status == SeparationStatus::Selected || *row.status == SeparationStatus::Saturated;
    if (resolved && (!rep.largest_dead_k || row.k > *rep.largest_dead_k)) {
      rep.smallest_resolved_k = row.k;
      break;
    }
  }
  rep.brackets_threshold = rep.largest_dead_k && rep.smallest_resolved_k &&
                           static_cast<double>(*rep.largest_dead_k) < rep.k_steps &&
                           rep.k_steps <= static_cast<double>(*rep.smallest_resolved_k);
  return rep;
}

struct DepthRow {
  int n_layers = 0;
  double delta = 0.0;
  double delta_sd = 0.0;
  int n_seeds = 0;
};

struct DepthReport {
  std::vector<DepthRow> rows;
  bool plateau = false;        // |delta(3) - delta(2)| within seed SD
  bool depth_helps = false;    // delta(1) < delta(2)
};

inline DepthReport depth_report(const std::map<int, std::vector<double>>& deltas_by_depth) {
  DepthReport rep;
  for (const auto& [nl, ds] : deltas_by_depth)
    rep.rows.push_back({nl, mean_of(ds), sd_of(ds), static_cast<int>(ds.size())});
  auto find = [&](int nl) -> const DepthRow* {
    for (const auto& r : rep.rows)
      if (r.n_layers == nl) return &r;
    return nullptr;
  };
  const auto *d1 = find(1), *d2 = find(2), *d3 = find(3);
  if (d1 && d2) rep.depth_helps = d1->delta < d2->delta;
  if (d2 && d3) rep.plateau = std::abs(d3->delta - d2->delta) <= std::max(d2->delta_sd, d3->delta_sd);
  return rep;
}

struct LogFit {
  double a = 0.0;
  double b = 0.0;
  double b_stderr = 0.0;
  double r_squared = 0.0;
  double rmse = 0.0;
  int n = 0;
};

/// Least squares for y = a + b log k.
inline LogFit log_scaling_check(const std::vector<int>& ks, const std::vector<double>& ys) {
  if (ks.size() != ys.size()) throw ConfigError("k and value lists differ in length");
  if (ks.size() < 3) throw InsufficientDataError("log scaling fit needs at least 3 k values");
  const auto n = static_cast<Eigen::Index>(ks.size());
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (ks[static_cast<std::size_t>(i)] < 1) throw DomainError("k must be >= 1");
    X(i, 0) = 1.0;
    X(i, 1) = std::log(static_cast<double>(ks[static_cast<std::size_t>(i)]));
    y[i] = ys[static_cast<std::size_t>(i)];
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < 2) throw NumericError("degenerate design matrix in log scaling fit");
  const Eigen::Vector2d beta = qr.solve(y);
  LogFit f;
  f.a = beta[0];
  f.b = beta[1];
  f.n = static_cast<int>(n);
  const Eigen::VectorXd resid = y - X * beta;
  const double sse = resid.squaredNorm();
  const double sst = (y.array() - y.mean()).square().sum();
  f.r_squared = sst > 0 ? 1.0 - sse / sst : 1.0;
  f.rmse = std::sqrt(sse / static_cast<double>(n));
  if (n > 2) {
    const double s2 = sse / static_cast<double>(n - 2);
    const Eigen::Matrix2d cov = s2 * (X.transpose() * X).inverse();
    f.b_stderr = std::sqrt(std::max(cov(1, 1), 0.0));
  }
  return f;
}

inline std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

inline std::string report_markdown(const SeparationReport& rep) {
  std::ostringstream os;
  os << "| k | delta | sd | range | seeds | status |\n|---|---|---|---|---|---|\n";
  for (const auto& r : rep.rows) {
    if (r.delta)
      os << "| " << r.k << " | " << fmt(*r.delta) << " | " << fmt(r.delta_sd) << " | " << fmt(r.range) << " | "
         << r.n_seeds << " | " << to_string(*r.status) << " |\n";
    else
      os << "| " << r.k << " | missing | | | 0 | |\n";
  }
  os << "\nThreshold K_steps = " << fmt(rep.k_steps, 1) << ": largest Dead k = "
     << (rep.largest_dead_k ? std::to_string(*rep.largest_dead_k) : "none") << ", smallest resolved k = "
     << (rep.smallest_resolved_k ? std::to_string(*rep.smallest_resolved_k) : "none") << ", bracketed = "
     << (rep.brackets_threshold ? "yes" : "no") << "\n";
  return os.str();
}

inline nlohmann::json report_json(const SeparationReport& rep) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rep.rows) {
    nlohmann::json row{{"k", r.k}, {"n_seeds", r.n_seeds}};
    if (r.delta) {
      row["delta"] = *r.delta;
      row["delta_sd"] = r.delta_sd;
      row["range"] = r.range;
      row["status"] = to_string(*r.status);
    } else {
      row["delta"] = nullptr;
      row["status"] = nullptr;
    }
    j["rows"].push_back(row);
  }
  j["k_steps"] = rep.k_steps;
  j["largest_dead_k"] = rep.largest_dead_k ? nlohmann::json(*rep.largest_dead_k) : nlohmann::json(nullptr);
  j["smallest_resolved_k"] =
      rep.smallest_resolved_k ? nlohmann::json(*rep.smallest_resolved_k) : nlohmann::json(nullptr);
  j["brackets_threshold"] = rep.brackets_threshold;
  j["missing"] = rep.missing;
  return j;
}

inline std::string depth_markdown(const DepthReport& rep) {
  std::ostringstream os;
  os << "| depth | delta | sd | seeds |\n|---|---|---|---|\n";
  for (const auto& r : rep.rows)
    os << "| " << r.n_layers << " | " << fmt(r.delta) << " | " << fmt(r.delta_sd) << " | " << r.n_seeds << " |\n";
  os << "\nDepth helps (1 < 2): " << (rep.depth_helps ? "yes" : "no")
     << "; plateau (|3 - 2| within seed SD): " << (rep.plateau ? "yes" : "no") << "\n";
  return os.str();
}

/// Heatmap payload for plotting.
inline nlohmann::json diagram_json(const PhaseDiagram& d) {
  nlohmann::json j;
  j["k"] = d.k;
  j["n_layers"] = d.n_layers;
  j["seeds"] = d.seeds;
  j["td"] = d.td;
  j["epochs"] = d.grid.rows();
  j["z"] = nlohmann::json::array();
  for (Eigen::Index e = 0; e < d.grid.rows(); ++e) {
    std::vector<double> row;
    for (Eigen::Index c = 0; c < d.grid.cols(); ++c) row.push_back(d.grid(e, c));
    j["z"].push_back(row);
  }
  return j;
}

}  // namespace gatelab
