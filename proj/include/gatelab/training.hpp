#pragma once

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "gatelab/adam.hpp"
#include "gatelab/env.hpp"
#include "gatelab/errors.hpp"
#include "gatelab/gate.hpp"
#include "gatelab/params.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/slots.hpp"

namespace gatelab {

enum class TrainMode { controllability, arbitration, ema_ablation };

inline std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::controllability: return "controllability";
    case TrainMode::arbitration: return "arbitration";
    case TrainMode::ema_ablation: return "ema_ablation";
  }
  return "arbitration";
}

inline TrainMode train_mode_from_string(const std::string& s) {
  if (s == "controllability") return TrainMode::controllability;
  if (s == "arbitration") return TrainMode::arbitration;
  if (s == "ema_ablation" || s == "ema") return TrainMode::ema_ablation;
  throw ConfigError("unknown training mode: " + s);
}

struct TemperatureSchedule {
  double tau_warm = 10.0;
  double tau_cold = 0.001;
  int warm_epochs = 10;
  int total_epochs = 60;

  void validate() const {
    if (!(tau_warm > tau_cold && tau_cold > 0)) throw ConfigError("temperatures must satisfy tau_warm > tau_cold > 0");
    if (!(warm_epochs >= 0 && warm_epochs < total_epochs)) throw ConfigError("warm epochs must be fewer than total epochs");
  }
  [[nodiscard]] bool warm(int epoch) const { return epoch < warm_epochs; }
  [[nodiscard]] double tau(int epoch) const { return warm(epoch) ? tau_warm : tau_cold; }
};

/// Target probability of prospective control as a function of task demand.
/// "centered": 0.5 - slope * (td - center). "linear": 1 - td.
struct ArbitrationTarget {
  std::string kind = "centered";
  double slope = 0.225;
  double center = 0.44;

  [[nodiscard]] double value(double td) const {
    double p;
    if (kind == "linear")
      p = 1.0 - td;
    else if (kind == "centered")
      p = 0.5 - slope * (td - center);
    else
      throw ConfigError("unknown arbitration target: " + kind);
    return std::clamp(p, 0.0, 1.0);
  }
};

inline std::vector<double> default_td_grid() {
  std::vector<double> g;
  for (int i = 0; i < 9; ++i) g.push_back(0.11 * i);
  g.back() = 0.88;
  return g;
}

struct TrainRunConfig {
  TrainMode mode = TrainMode::arbitration;
  GateConfig gate;
  std::vector<double> td_grid = default_td_grid();
  double td = 0.5;  // controllability runs use a single fixed demand
  TemperatureSchedule schedule;
  int episodes_per_epoch = 20;
  std::uint64_t seed = 0;
  AdamConfig adam{1e-2};
  ArbitrationTarget target;
  EnvConfig env;
  bool record_traces = false;

  [[nodiscard]] std::vector<double> cells() const {
    return mode == TrainMode::controllability ? std::vector<double>{td} : td_grid;
  }

  void validate() const {
    gate.validate();
    schedule.validate();
    adam.validate();
    env.validate();
    if (episodes_per_epoch < 1) throw ConfigError("episodes per epoch must be >= 1");
    for (double d : cells())
      if (!(d >= 0 && d <= 1)) throw DomainError("task demand must lie in [0, 1]");
    if (cells().empty()) throw ConfigError("task-demand grid is empty");
    if (mode == TrainMode::controllability && gate.value_dim != kValueDim)
      throw ConfigError("controllability needs the two-slot value layout");
  }

  /// Everything except the seed; two configs with equal json produce equal runs
  /// up to the seed.
  [[nodiscard]] nlohmann::json to_json(bool include_seed = true) const {
    nlohmann::json j;
    j["mode"] = to_string(mode);
    j["k"] = gate.k;
    j["n_layers"] = gate.n_layers;
    j["d_head"] = gate.d_head;
    j["train_residual_gain"] = gate.train_residual_gain;
    if (mode == TrainMode::controllability)
      j["td"] = td;
    else
      j["td_grid"] = td_grid;
    j["tau_warm"] = schedule.tau_warm;
    j["tau_cold"] = schedule.tau_cold;
    j["warm_epochs"] = schedule.warm_epochs;
    j["epochs"] = schedule.total_epochs;
    j["episodes_per_epoch"] = episodes_per_epoch;
    j["lr"] = adam.lr;
    j["beta1"] = adam.beta1;
    j["beta2"] = adam.beta2;
    j["adam_eps"] = adam.eps;
    if (mode == TrainMode::arbitration) {
      j["target"] = {{"kind", target.kind}, {"slope", target.slope}, {"center", target.center}};
    }
    j["velocity_mode"] = to_string(env.velocity_mode);
    j["max_steps"] = env.max_steps;
    j["record_traces"] = record_traces;
    if (include_seed) j["seed"] = seed;
    return j;
  }

  static TrainRunConfig from_json(const nlohmann::json& j) {
    TrainRunConfig c;
    c.mode = train_mode_from_string(j.at("mode").get<std::string>());
    c.gate.k = j.value("k", c.gate.k);
    c.gate.n_layers = j.value("n_layers", c.gate.n_layers);
    c.gate.d_head = j.value("d_head", c.gate.d_head);
    c.gate.train_residual_gain = j.value("train_residual_gain", false);
    if (j.contains("td_grid")) c.td_grid = j.at("td_grid").get<std::vector<double>>();
    c.td = j.value("td", c.td);
    c.schedule.tau_warm = j.value("tau_warm", c.schedule.tau_warm);
    c.schedule.tau_cold = j.value("tau_cold", c.schedule.tau_cold);
    c.schedule.warm_epochs = j.value("warm_epochs", c.schedule.warm_epochs);
    c.schedule.total_epochs = j.value("epochs", c.schedule.total_epochs);
    c.episodes_per_epoch = j.value("episodes_per_epoch", c.episodes_per_epoch);
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("adam_eps", c.adam.eps);
    if (j.contains("target")) {
      const auto& t = j.at("target");
      c.target.kind = t.value("kind", c.target.kind);
      c.target.slope = t.value("slope", c.target.slope);
      c.target.center = t.value("center", c.target.center);
    }
    c.env.velocity_mode = velocity_mode_from_string(j.value("velocity_mode", std::string("bounded")));
    c.env.max_steps = j.value("max_steps", c.env.max_steps);
    c.record_traces = j.value("record_traces", false);
    c.seed = j.value("seed", std::uint64_t{0});
    return c;
  }

  /// Stable identifier of the configuration without its seed.
  [[nodiscard]] std::string hash() const {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(to_json(false).dump());
    return os.str();
  }
};

struct EpochRecord {
  int epoch = 0;
  double td = 0.0;
  int k = 0;
  int n_layers = 0;
  std::uint64_t seed = 0;
  double mean_confidence = 0.5;
  double loss = 0.0;
  double tau = 0.0;
  double prospective_rate = 0.0;  // fraction of evaluations with c > 0.5 (cursor commitments in controllability)
  int evaluations = 0;
};

struct TraceRecord {
  int epoch = 0;
  int episode = 0;
  int t = 0;
  double td = 0.0;
  double c = 0.5;
  std::vector<double> alpha;
  int committed_slot = 0;  // 0 cursor / prospective, 1 goal / reactive
};

struct EpisodePoint {
  int epoch = 0;
  int episode = 0;
  double td = 0.0;
  double mean_confidence = 0.5;
};

/// Per-episode confidence of one cell from `first_epoch` on. In the cold
/// phase each entry is one optimizer update.
inline std::vector<double> episode_trace(const std::vector<EpisodePoint>& pts, double td, int first_epoch = 0) {
  std::vector<double> out;
  for (const auto& p : pts)
    if (p.epoch >= first_epoch && std::abs(p.td - td) < 1e-12) out.push_back(p.mean_confidence);
  return out;
}

struct RunResult {
  TrainRunConfig config;
  std::vector<EpochRecord> records;  // epoch-major, then td in grid order
  std::vector<TraceRecord> traces;
  std::vector<EpisodePoint> episodes;  // per-episode mean confidence, in training order
  ParamSet initial_params;
  ParamSet warm_end_params;
  ParamSet final_params;
  long optimizer_steps = 0;
  long skipped_updates = 0;

  /// Mean confidence per epoch for one td cell.
  [[nodiscard]] std::vector<double> confidence_trace(double td) const {
    std::vector<double> out;
    for (const auto& r : records)
      if (std::abs(r.td - td) < 1e-12) out.push_back(r.mean_confidence);
    return out;
  }
};

struct StepRecord {
  double action = 0.0;
  double td = 0.0;
  double cursor_x = 0.0;
  double goal_x = 0.0;
  double cursor_dx = 0.0;
  double goal_dx = 0.0;
};

/// Continuous stream of oracle-driven episodes at a fixed demand. The cursor
/// persists between episodes; only the goal is resampled after arrival.
class EpisodeStream {
 public:
  EpisodeStream(const EnvConfig& cfg, double td, std::uint64_t seed) : env_(cfg) {
    env_.reset(td, seed);
    prev_cursor_ = env_.state().cursor_x;
    prev_goal_ = env_.state().goal_x;
  }

  std::vector<StepRecord> next_episode() {
    std::vector<StepRecord> steps;
    while (!env_.state().done()) {
      const double a = oracle_action(env_.state());
      const auto& s = env_.step(a);
      steps.push_back({a, s.task_demand, s.cursor_x, s.goal_x, s.cursor_x - prev_cursor_, s.goal_x - prev_goal_});
      prev_cursor_ = s.cursor_x;
      prev_goal_ = s.goal_x;
    }
    env_.resample_goal();
    return steps;
  }

  [[nodiscard]] const Environment& env() const { return env_; }

 private:
  Environment env_;
  double prev_cursor_ = 0.0;
  double prev_goal_ = 0.0;
};

inline Eigen::Vector2d step_key(const StepRecord& s, const EnvConfig& cfg) {
  return {s.action / cfg.v_max, s.td};
}

inline Eigen::VectorXd step_value(const StepRecord& s, const EnvConfig& cfg, bool goal_first) {
  const auto f = slot_features(s.cursor_x, s.cursor_dx, s.goal_x, s.goal_dx, cfg);
  Eigen::VectorXd v(kValueDim);
  const auto& a = goal_first ? f.goal : f.cursor;
  const auto& b = goal_first ? f.cursor : f.goal;
  for (int i = 0; i < kSlotFeatureDim; ++i) {
    v[i] = a[static_cast<std::size_t>(i)];
    v[kSlotFeatureDim + i] = b[static_cast<std::size_t>(i)];
  }
  return v;
}

/// Contingency evidence for one slot: 1 minus the prediction error between
/// commanded and observed displacement, normalised by the command and clipped.
inline double contingency_evidence(double commanded, double observed) {
  if (commanded == 0.0) return observed == 0.0 ? 1.0 : 0.0;
  return 1.0 - std::clamp(std::abs(observed - commanded) / std::abs(commanded), 0.0, 1.0);
}

/// Evidence consumed by the fixed-EMA ablation: the mean over both object
/// slots, because the fixed filter has no mechanism for selecting one.
inline double step_evidence(const StepRecord& s) {
  return 0.5 * (contingency_evidence(s.action, s.cursor_dx) + contingency_evidence(s.action, s.goal_dx));
}

/// Timeline of buffer entries spanning episodes for one task-demand cell.
class CellTimeline {
 public:
  CellTimeline(int k, int key_dim, int value_dim) : k_(k), key_dim_(key_dim), value_dim_(value_dim) {}

  /// Appends an episode and returns the batch of full windows it produces.
  /// `alt_values` receives the same timeline with slot order swapped.
  GateBatch build(const std::vector<StepRecord>& steps, const EnvConfig& cfg, GateBatch* alt_values) {
    const auto carry = static_cast<Eigen::Index>(keys_.size());
    const auto n = carry + static_cast<Eigen::Index>(steps.size());
    GateBatch b;
    b.keys.resize(n, key_dim_);
    b.values.resize(n, value_dim_);
    Eigen::MatrixXd alt(alt_values ? n : 0, value_dim_);
    for (Eigen::Index i = 0; i < carry; ++i) {
      b.keys.row(i) = keys_[static_cast<std::size_t>(i)].transpose();
      b.values.row(i) = values_[static_cast<std::size_t>(i)].transpose();
      if (alt_values) alt.row(i) = alt_[static_cast<std::size_t>(i)].transpose();
    }
    std::vector<Eigen::Index> query_rows;
    for (std::size_t s = 0; s < steps.size(); ++s) {
      const auto row = carry + static_cast<Eigen::Index>(s);
      b.keys.row(row) = step_key(steps[s], cfg).transpose();
      b.values.row(row) = step_value(steps[s], cfg, false).transpose();
      if (alt_values) alt.row(row) = step_value(steps[s], cfg, true).transpose();
      if (row >= k_ - 1) {
        b.end.push_back(static_cast<int>(row));
        query_rows.push_back(row);
      }
    }
    b.queries.resize(static_cast<Eigen::Index>(query_rows.size()), key_dim_);
    for (std::size_t i = 0; i < query_rows.size(); ++i)
      b.queries.row(static_cast<Eigen::Index>(i)) = b.keys.row(query_rows[i]);

    // Keep the most recent k-1 entries for the next episode.
    const Eigen::Index keep = std::min<Eigen::Index>(k_ - 1, n);
    keys_.clear();
    values_.clear();
    alt_.clear();
    for (Eigen::Index i = n - keep; i < n; ++i) {
      keys_.emplace_back(b.keys.row(i).transpose());
      values_.emplace_back(b.values.row(i).transpose());
      if (alt_values) alt_.emplace_back(alt.row(i).transpose());
    }
    if (alt_values) {
      alt_values->keys = b.keys;
      alt_values->values = std::move(alt);
      alt_values->queries = b.queries;
      alt_values->end = b.end;
    }
    return b;
  }

 private:
  int k_, key_dim_, value_dim_;
  std::vector<Eigen::VectorXd> keys_, values_, alt_;
};

inline double bce(double c, double y) {
  constexpr double eps = 1e-12;
  const double cc = std::clamp(c, eps, 1.0 - eps);
  return -(y * std::log(cc) + (1.0 - y) * std::log(1.0 - cc));
}

/// Arbitration loss: mean BCE(sigmoid(logit), y) over windows, with its
/// gradient with respect to each logit.
inline double arbitration_loss(const Eigen::VectorXd& logits, double y, Eigen::VectorXd* dlogits) {
  const auto T = logits.size();
  double loss = 0.0;
  if (dlogits) dlogits->resize(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double l = logits[t];
    // BCE with logits: softplus(l) - y*l, stable for large |l|.
    loss += std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l))) - y * l;
    if (dlogits) (*dlogits)[t] = (sigmoid(l) - y) / static_cast<double>(T);
  }
  return loss / static_cast<double>(T);
}

/// Controllability loss: cross-entropy of the relaxed Gumbel-softmax sample
/// over {cursor, goal} against the cursor label. The per-window logit pair is
/// (l, 0) with l = logit_cursor - logit_goal and `gumbel_diff` holds
/// g_cursor - g_goal, so the sample's cursor probability is sigmoid(x) with
/// x = (l + gumbel_diff) / tau. The hard selection is the argmax of the sample.
inline double controllability_loss(const Eigen::VectorXd& l, const Eigen::VectorXd& gumbel_diff, double tau,
                                   Eigen::VectorXd* dl, std::vector<int>* committed = nullptr) {
  if (!(tau > 0)) throw DomainError("temperature must be positive");
  const auto T = l.size();
  double loss = 0.0;
  if (dl) dl->resize(T);
  if (committed) committed->assign(static_cast<std::size_t>(T), 0);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double x = (l[t] + gumbel_diff[t]) / tau;
    // -log sigmoid(x) = softplus(-x)
    loss += std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    if (committed) (*committed)[static_cast<std::size_t>(t)] = x >= 0.0 ? 0 : 1;
    if (dl) (*dl)[t] = -sigmoid(-x) / (tau * static_cast<double>(T));
  }
  return loss / static_cast<double>(T);
}

namespace detail {

struct CellAccumulator {
  double conf_sum = 0.0;
  double loss_sum = 0.0;
  int episodes = 0;
  double prospective = 0.0;
  int evaluations = 0;
};

inline void check_finite(double v, const char* what, int epoch, double td) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "non-finite " << what << " at epoch " << epoch << ", td " << td;
    throw NumericError(os.str());
  }
}

}  // namespace detail

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs one training job. Cells (task-demand levels) are interleaved in a
/// freshly shuffled order on every round so that consecutive optimizer
/// steps never see a block of a single target.
inline RunResult train(const TrainRunConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  RunResult res;
  res.config = cfg;
  const Rng root(cfg.seed);
  Rng init_rng = root.split("init");
  Rng order_rng = root.split("order");
  Rng gumbel_rng = root.split("gumbel");

  const auto cells = cfg.cells();
  const auto C = cells.size();
  std::vector<EpisodeStream> streams;
  std::vector<CellTimeline> timelines;
  std::vector<double> ema_state(C, 0.5);
  for (std::size_t j = 0; j < C; ++j) {
    streams.emplace_back(cfg.env, cells[j], root.split("env", j).next_u64());
    timelines.emplace_back(cfg.gate.k, cfg.gate.key_dim, cfg.gate.value_dim);
  }

  ContingencyGate gate(cfg.gate);
  gate.init(init_rng, cfg.mode == TrainMode::arbitration);
  res.initial_params = gate.params();
  Adam adam(gate.params(), cfg.adam);
  ParamSet grad = gate.params().zeros_like();
  GateBatchCache cache, cache_alt;
  GateBatch alt;
  const bool ctrl = cfg.mode == TrainMode::controllability;

  std::vector<std::size_t> order(C);
  for (int epoch = 0; epoch < cfg.schedule.total_epochs; ++epoch) {
    if (epoch == cfg.schedule.warm_epochs) res.warm_end_params = gate.params();
    const bool warm = cfg.schedule.warm(epoch);
    const double tau = cfg.schedule.tau(epoch);
    std::vector<detail::CellAccumulator> acc(C);
    for (int ep = 0; ep < cfg.episodes_per_epoch; ++ep) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      order_rng.shuffle(order.begin(), order.end());
      for (std::size_t j : order) {
        const auto steps = streams[j].next_episode();
        auto& a = acc[j];
        if (cfg.mode == TrainMode::ema_ablation) {
          if (steps.empty()) continue;
          double sum = 0.0;
          int above = 0;
          const double rate = 1.0 / cfg.gate.k;
          for (std::size_t t = 0; t < steps.size(); ++t) {
            ema_state[j] = (1.0 - rate) * ema_state[j] + rate * step_evidence(steps[t]);
            sum += ema_state[j];
            above += ema_state[j] > 0.5;
            if (cfg.record_traces)
              res.traces.push_back({epoch, ep, static_cast<int>(t), cells[j], ema_state[j], {}, ema_state[j] > 0.5 ? 0 : 1});
          }
          const double mean_c = sum / static_cast<double>(steps.size());
          a.conf_sum += mean_c;
          res.episodes.push_back({epoch, ep, cells[j], mean_c});
          a.loss_sum += bce(mean_c, cfg.target.value(cells[j]));
          a.prospective += above;
          a.evaluations += static_cast<int>(steps.size());
          ++a.episodes;
          continue;
        }

        GateBatch batch = timelines[j].build(steps, cfg.env, ctrl ? &alt : nullptr);
        const auto T = static_cast<Eigen::Index>(batch.end.size());
        if (T == 0) continue;
        Eigen::VectorXd logits = gate.forward_batch(batch, cache);
        if (ctrl) logits -= gate.forward_batch(alt, cache_alt);

        Eigen::VectorXd dlogits;
        double loss;
        std::vector<int> committed;
        if (ctrl) {
          Eigen::VectorXd gd(T);
          for (Eigen::Index t = 0; t < T; ++t) gd[t] = gumbel_rng.gumbel() - gumbel_rng.gumbel();
          loss = controllability_loss(logits, gd, tau, &dlogits, &committed);
        } else {
          loss = arbitration_loss(logits, cfg.target.value(cells[j]), &dlogits);
        }
        detail::check_finite(loss, "loss", epoch, cells[j]);

        double csum = 0.0;
        for (Eigen::Index t = 0; t < T; ++t) {
          const double c = sigmoid(logits[t]);
          csum += c;
          a.prospective += ctrl ? (committed[static_cast<std::size_t>(t)] == 0) : (c > 0.5);
          if (cfg.record_traces) {
            const auto& al = cache.alpha.back();
            std::vector<double> alpha(al.cols());
            for (Eigen::Index i = 0; i < al.cols(); ++i) alpha[static_cast<std::size_t>(i)] = al(t, i);
            const int slot = ctrl ? committed[static_cast<std::size_t>(t)] : (c > 0.5 ? 0 : 1);
            res.traces.push_back({epoch, ep, static_cast<int>(t), cells[j], c, std::move(alpha), slot});
          }
        }
        a.conf_sum += csum / static_cast<double>(T);
        res.episodes.push_back({epoch, ep, cells[j], csum / static_cast<double>(T)});
        a.loss_sum += loss;
        a.evaluations += static_cast<int>(T);
        ++a.episodes;

        if (!warm) {
          grad.set_zero();
          gate.backward_batch(batch, cache, dlogits, grad);
          if (ctrl) gate.backward_batch(alt, cache_alt, -dlogits, grad);
          adam.step(gate.params(), grad);
        }
      }
    }
    for (std::size_t j = 0; j < C; ++j) {
      EpochRecord r;
      r.epoch = epoch;
      r.td = cells[j];
      r.k = cfg.gate.k;
      r.n_layers = cfg.gate.n_layers;
      r.seed = cfg.seed;
      r.tau = tau;
      const auto& a = acc[j];
      r.mean_confidence = a.episodes ? a.conf_sum / a.episodes : 0.5;
      r.loss = a.episodes ? a.loss_sum / a.episodes : 0.0;
      r.evaluations = a.evaluations;
      r.prospective_rate = a.evaluations ? a.prospective / a.evaluations : 0.0;
      detail::check_finite(r.mean_confidence, "confidence", epoch, cells[j]);
      res.records.push_back(r);
      if (on_epoch) on_epoch(r);
    }
  }
  if (cfg.schedule.warm_epochs == 0) res.warm_end_params = res.initial_params;
  res.final_params = gate.params();
  res.optimizer_steps = adam.steps();
  res.skipped_updates = adam.skipped();
  return res;
}

}  // namespace gatelab
