#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "gatelab/env.hpp"
#include "gatelab/gate.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/slots.hpp"

namespace gatelab {

using SteadyClock = std::chrono::steady_clock;
using ClockFn = std::function<SteadyClock::time_point()>;

/// Optional trained gate shared (read-only) by all sessions.
struct GateTemplate {
  GateConfig config;
  ParamSet params;
};

struct Session {
  std::string id;
  Environment env;
  std::uint64_t seed = 0;
  int resets = 0;
  std::optional<ContingencyGate> gate;
  std::optional<ContextBuffer> buffer;
  std::optional<double> confidence;
  double prev_cursor = 0.0;
  double prev_goal = 0.0;
  SteadyClock::time_point last_activity;
  std::mutex mu;

  explicit Session(EnvConfig cfg) : env(cfg) {}
};

/// Owns live sessions; each session is serialised by its own mutex and
/// idle sessions expire after `idle_timeout`.
class SessionManager {
 public:
  explicit SessionManager(EnvConfig cfg = {}, std::chrono::seconds idle_timeout = std::chrono::minutes(10),
                          ClockFn clock = [] { return SteadyClock::now(); },
                          std::optional<GateTemplate> gate = std::nullopt)
      : cfg_(cfg), timeout_(idle_timeout), clock_(std::move(clock)), gate_(std::move(gate)) {}

  std::shared_ptr<Session> create(double demand, std::uint64_t seed) {
    auto s = std::make_shared<Session>(cfg_);
    s->seed = seed;
    s->env.reset(std::clamp(demand, 0.0, 1.0), seed);
    if (gate_) {
      s->gate.emplace(gate_->config);
      s->gate->set_params(gate_->params);
      s->buffer.emplace(gate_->config.k);
    }
    s->prev_cursor = s->env.state().cursor_x;
    s->prev_goal = s->env.state().goal_x;
    s->last_activity = clock_();
    std::lock_guard lock(mu_);
    s->id = "s" + std::to_string(++counter_);
    sessions_[s->id] = s;
    return s;
  }

  /// Live session or nullptr. An idle session past the timeout is removed.
  std::shared_ptr<Session> find(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) return nullptr;
    if (clock_() - it->second->last_activity > timeout_) {
      sessions_.erase(it);
      return nullptr;
    }
    return it->second;
  }

  void remove(const std::string& id) {
    std::lock_guard lock(mu_);
    sessions_.erase(id);
  }

  std::size_t expire_idle() {
    std::lock_guard lock(mu_);
    const auto now = clock_();
    std::size_t n = 0;
    for (auto it = sessions_.begin(); it != sessions_.end();) {
      if (now - it->second->last_activity > timeout_) {
        it = sessions_.erase(it);
        ++n;
      } else {
        ++it;
      }
    }
    return n;
  }

  [[nodiscard]] std::size_t size() const {
    std::lock_guard lock(mu_);
    return sessions_.size();
  }

  [[nodiscard]] SteadyClock::time_point now() const { return clock_(); }
  [[nodiscard]] bool has_gate() const { return gate_.has_value(); }

 private:
  EnvConfig cfg_;
  std::chrono::seconds timeout_;
  ClockFn clock_;
  std::optional<GateTemplate> gate_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t counter_ = 0;
};

inline nlohmann::json error_message(const std::string& msg) { return {{"type", "error"}, {"message", msg}}; }

inline nlohmann::json state_message(const Session& s) {
  const auto& st = s.env.state();
  nlohmann::json j{{"type", "state"},
                   {"cursor_x", st.cursor_x},
                   {"goal_x", st.goal_x},
                   {"distance", st.distance()},
                   {"radius", st.tolerance_radius},
                   {"velocity", st.step_velocity},
                   {"demand", st.task_demand},
                   {"arrived", st.arrived},
                   {"confidence", nullptr},
                   {"step", st.step_count}};
  if (s.confidence) j["confidence"] = *s.confidence;
  return j;
}

/// Per-connection protocol state machine. Every input line yields exactly
/// one reply (state or error); errors never end the connection.
class ProtocolHandler {
 public:
  explicit ProtocolHandler(std::shared_ptr<SessionManager> mgr) : mgr_(std::move(mgr)) {}

  std::string handle(const std::string& text) { return handle_json(text).dump(); }

  nlohmann::json handle_json(const std::string& text) {
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception&) {
      return error_message("malformed JSON");
    }
    if (!msg.is_object() || !msg.contains("type") || !msg["type"].is_string())
      return error_message("message must be an object with a string 'type'");
    const auto type = msg["type"].get<std::string>();
    try {
      if (type == "init") return on_init(msg);
      if (type == "step" || type == "set_demand" || type == "reset") {
        auto s = session_id_.empty() ? nullptr : mgr_->find(session_id_);
        if (!s) {
          const bool had = !session_id_.empty();
          session_id_.clear();
          return error_message(had ? "session expired" : "no session; send init first");
        }
        std::lock_guard lock(s->mu);
        s->last_activity = mgr_->now();
        if (type == "step") return on_step(*s, msg);
        if (type == "set_demand") return on_set_demand(*s, msg);
        return on_reset(*s);
      }
      return error_message("unknown message type: " + type);
    } catch (const std::exception& e) {
      return error_message(e.what());
    }
  }

  [[nodiscard]] const std::string& session_id() const { return session_id_; }

  ~ProtocolHandler() {
    if (!session_id_.empty()) mgr_->remove(session_id_);
  }

 private:
  static std::optional<double> number(const nlohmann::json& msg, const char* key) {
    if (!msg.contains(key)) return std::nullopt;
    if (!msg[key].is_number()) throw ConfigError(std::string("field '") + key + "' must be a number");
    const double v = msg[key].get<double>();
    if (!std::isfinite(v)) throw ConfigError(std::string("field '") + key + "' must be finite");
    return v;
  }

  nlohmann::json on_init(const nlohmann::json& msg) {
    const double demand = number(msg, "demand").value_or(0.5);
    const double seed = number(msg, "seed").value_or(0.0);
    if (seed < 0) throw ConfigError("seed must be non-negative");
    if (!session_id_.empty()) mgr_->remove(session_id_);
    auto s = mgr_->create(demand, static_cast<std::uint64_t>(seed));
    session_id_ = s->id;
    std::lock_guard lock(s->mu);
    return state_message(*s);
  }

  static nlohmann::json on_step(Session& s, const nlohmann::json& msg) {
    const auto dir = number(msg, "dir");
    const auto disp = number(msg, "displacement");
    if (!dir && !disp) throw ConfigError("step needs 'dir' or 'displacement'");
    if (s.env.state().done()) {
      // Fresh goal after arrival, sampled from the current cursor position.
      s.env.resample_goal();
    }
    const double v = s.env.state().step_velocity;
    const double action = dir ? (*dir > 0 ? v : (*dir < 0 ? -v : 0.0)) : *disp;
    const double applied = s.env.applied_displacement(action);
    s.env.step(action);
    const auto& st = s.env.state();
    if (s.gate) {
      const auto f = slot_features(st.cursor_x, st.cursor_x - s.prev_cursor, st.goal_x, st.goal_x - s.prev_goal,
                                   s.env.config());
      Eigen::VectorXd key(2), value(kValueDim);
      key << applied / s.env.config().v_max, st.task_demand;
      for (int i = 0; i < kSlotFeatureDim; ++i) {
        value[i] = f.cursor[static_cast<std::size_t>(i)];
        value[kSlotFeatureDim + i] = f.goal[static_cast<std::size_t>(i)];
      }
      s.buffer->push(key, value);
      const auto out = s.gate->forward(*s.buffer, key);
      if (out)
        s.confidence = out->confidence;
      else
        s.confidence.reset();
    }
    s.prev_cursor = st.cursor_x;
    s.prev_goal = st.goal_x;
    return state_message(s);
  }

  static nlohmann::json on_set_demand(Session& s, const nlohmann::json& msg) {
    const auto delta = number(msg, "delta");
    const auto abs = number(msg, "demand");
    if (!delta && !abs) throw ConfigError("set_demand needs 'delta' or 'demand'");
    double d = abs ? *abs : s.env.state().task_demand + *delta;
    d = std::clamp(d, 0.0, 1.0);
    // Snap float drift from repeated increments onto a 1e-12 grid.
    d = std::round(d * 1e12) / 1e12;
    s.env.set_demand(d);
    return state_message(s);
  }

  static nlohmann::json on_reset(Session& s) {
    ++s.resets;
    s.env.reset(s.env.state().task_demand, mix64(s.seed + static_cast<std::uint64_t>(s.resets)));
    s.prev_cursor = s.env.state().cursor_x;
    s.prev_goal = s.env.state().goal_x;
    if (s.buffer) s.buffer->clear();
    s.confidence.reset();
    return state_message(s);
  }

  std::shared_ptr<SessionManager> mgr_;
  std::string session_id_;
};

}  // namespace gatelab
