#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gatelab/errors.hpp"
#include "gatelab/rng.hpp"

namespace gatelab {

enum class VelocityMode { bounded, fixed, free };
enum class RenderMode { sharp, antialiased };

inline std::string to_string(VelocityMode m) {
  switch (m) {
    case VelocityMode::bounded: return "bounded";
    case VelocityMode::fixed: return "fixed";
    case VelocityMode::free: return "free";
  }
  return "bounded";
}

inline VelocityMode velocity_mode_from_string(const std::string& s) {
  if (s == "bounded") return VelocityMode::bounded;
  if (s == "fixed") return VelocityMode::fixed;
  if (s == "free") return VelocityMode::free;
  throw ConfigError("unknown velocity mode: " + s);
}

struct EnvConfig {
  int width = 64;
  int height = 64;
  double d_max = 28.0;
  double r_max = 5.0;
  double g_min = 6.0;
  double g_max = 57.0;
  VelocityMode velocity_mode = VelocityMode::bounded;
  double v_min = 0.5;
  double v_max = 3.0;
  RenderMode render_mode = RenderMode::sharp;
  double tolerance_floor = 0.5;
  int max_steps = 200;
  int motion_row = 32;
  int cursor_resample_attempts = 100;

  void validate() const {
    if (width <= 0 || height <= 0) throw ConfigError("frame dimensions must be positive");
    if (!(g_min < g_max)) throw ConfigError("goal bounds must satisfy g_min < g_max");
    if (g_min < 0 || g_max >= width) throw ConfigError("goal bounds must lie inside the frame");
    if (!(v_min > 0) || v_min > v_max) throw ConfigError("velocity clip must satisfy 0 < v_min <= v_max");
    if (tolerance_floor < 0 || r_max < 0) throw ConfigError("radii must be non-negative");
    if (motion_row < 0 || motion_row >= height) throw ConfigError("motion row outside frame");
    if (max_steps <= 0) throw ConfigError("step cap must be positive");
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  [[nodiscard]] double width() const { return hi - lo; }
  [[nodiscard]] bool contains(double x, double eps = 0.0) const { return x >= lo - eps && x <= hi + eps; }
};

struct Geometry {
  Interval band;
  double tolerance = 0.0;
  double velocity = 0.0;
};

inline double tolerance_radius(double d, const EnvConfig& cfg) {
  return std::max(cfg.r_max * (1.0 - d), cfg.tolerance_floor);
}

inline double step_velocity(double radius, const EnvConfig& cfg) {
  return std::clamp(radius, cfg.v_min, cfg.v_max);
}

inline double available_distance(double cursor_x, const EnvConfig& cfg) {
  return std::max(cursor_x - cfg.g_min, cfg.g_max - cursor_x);
}

/// Distance band, tolerance and velocity for demand d at the given cursor.
/// Band edges interpolate linearly between the anchors
/// d=0: [24, d_avail], d=0.5: [11, 24], d=1: [1, 11].
inline Geometry demand_to_geometry(double d, double cursor_x, const EnvConfig& cfg) {
  if (!(d >= 0.0 && d <= 1.0)) throw DomainError("task demand must lie in [0, 1]");
  const double d_avail = available_distance(cursor_x, cfg);
  Geometry g;
  if (d <= 0.5) {
    const double f = d / 0.5;
    g.band.lo = 24.0 + (11.0 - 24.0) * f;
    g.band.hi = d_avail + (24.0 - d_avail) * f;
  } else {
    const double f = (d - 0.5) / 0.5;
    g.band.lo = 11.0 + (1.0 - 11.0) * f;
    g.band.hi = 24.0 + (11.0 - 24.0) * f;
  }
  g.tolerance = tolerance_radius(d, cfg);
  g.velocity = step_velocity(g.tolerance, cfg);
  return g;
}

struct EnvState {
  double cursor_x = 0.0;
  double goal_x = 0.0;
  double task_demand = 0.0;
  double tolerance_radius = 0.0;
  double step_velocity = 0.0;
  Interval goal_distance_band;
  int step_count = 0;
  bool arrived = false;
  bool truncated = false;  // step cap reached without arrival

  [[nodiscard]] double distance() const { return std::abs(cursor_x - goal_x); }
  [[nodiscard]] bool done() const { return arrived || truncated; }
};

/// RGB frame, row-major, 3 bytes per pixel.
struct Frame {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> rgb;

  Frame() = default;
  Frame(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w * h * 3), 0) {}

  std::uint8_t* px(int x, int y) { return &rgb[static_cast<std::size_t>((y * width + x) * 3)]; }
  [[nodiscard]] const std::uint8_t* px(int x, int y) const {
    return &rgb[static_cast<std::size_t>((y * width + x) * 3)];
  }
  bool operator==(const Frame& o) const = default;
};

using Observation = Frame;

inline constexpr std::array<std::uint8_t, 3> kCursorColor{255, 0, 0};
inline constexpr std::array<std::uint8_t, 3> kGoalColor{255, 255, 255};
inline constexpr int kMarkerHalfHeight = 1;  // markers are 1 px wide, 3 px tall

namespace detail {

inline void draw_marker(Frame& f, double x, int row, const std::array<std::uint8_t, 3>& color,
                        RenderMode mode) {
  auto paint = [&](int col, double weight) {
    if (col < 0 || col >= f.width || weight <= 0.0) return;
    for (int y = row - kMarkerHalfHeight; y <= row + kMarkerHalfHeight; ++y) {
      if (y < 0 || y >= f.height) continue;
      auto* p = f.px(col, y);
      for (int c = 0; c < 3; ++c) {
        const double blended = weight * color[c] + (1.0 - weight) * p[c];
        p[c] = static_cast<std::uint8_t>(std::lround(std::clamp(blended, 0.0, 255.0)));
      }
    }
  };
  if (mode == RenderMode::sharp) {
    paint(static_cast<int>(std::lround(x)), 1.0);
  } else {
    const double fl = std::floor(x);
    const double frac = x - fl;
    paint(static_cast<int>(fl), 1.0 - frac);
    paint(static_cast<int>(fl) + 1, frac);
  }
}

}  // namespace detail

/// Cursor-to-goal tracking environment. Positions are continuous; frames are
/// rendered by drawing the cursor over a goal-only frame cached per goal.
class Environment {
 public:
  explicit Environment(EnvConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  [[nodiscard]] const EnvConfig& config() const { return cfg_; }
  [[nodiscard]] const EnvState& state() const { return state_; }

  /// Full reset: samples a cursor position and a goal inside the demand band.
  const EnvState& reset(double d, std::uint64_t seed) {
    if (!(d >= 0.0 && d <= 1.0)) throw DomainError("task demand must lie in [0, 1]");
    rng_ = Rng(seed);
    state_ = EnvState{};
    state_.task_demand = d;
    bool placed = false;
    for (int attempt = 0; attempt < cfg_.cursor_resample_attempts && !placed; ++attempt) {
      state_.cursor_x = rng_.uniform(cfg_.g_min, cfg_.g_max);
      placed = try_place_goal(false);
    }
    if (!placed) try_place_goal(true);
    refresh_geometry();
    return state_;
  }

  /// Samples a new goal from the current cursor position (used after
  /// arrival; the cursor is not moved).
  const EnvState& resample_goal() {
    state_.step_count = 0;
    state_.arrived = false;
    state_.truncated = false;
    if (!try_place_goal(false)) try_place_goal(true);
    refresh_geometry();
    return state_;
  }

  /// Changes demand without moving the goal; tolerance and velocity update
  /// immediately and the band applies from the next goal placement.
  void set_demand(double d) {
    if (!(d >= 0.0 && d <= 1.0)) throw DomainError("task demand must lie in [0, 1]");
    state_.task_demand = d;
    refresh_geometry();
    state_.arrived = state_.distance() <= state_.tolerance_radius;
  }

  /// Displacement actually applied for a commanded action in the configured mode.
  [[nodiscard]] double applied_displacement(double action) const {
    const double v = state_.step_velocity;
    switch (cfg_.velocity_mode) {
      case VelocityMode::bounded: return std::clamp(action, -v, v);
      case VelocityMode::fixed: return action > 0 ? v : (action < 0 ? -v : 0.0);
      case VelocityMode::free: return action;
    }
    return 0.0;
  }

  const EnvState& step(double action) {
    if (state_.arrived) throw UsageError("step called on an episode that already arrived");
    if (state_.truncated) throw UsageError("step called on an episode that hit the step cap");
    if (!std::isfinite(action)) throw DomainError("action must be finite");
    state_.cursor_x = std::clamp(state_.cursor_x + applied_displacement(action), 0.0,
                                 static_cast<double>(cfg_.width - 1));
    ++state_.step_count;
    state_.arrived = state_.distance() <= state_.tolerance_radius;
    if (!state_.arrived && state_.step_count >= cfg_.max_steps) state_.truncated = true;
    return state_;
  }

  /// Overwrites positions directly; used by tests and the interactive service.
  void set_positions(double cursor_x, double goal_x) {
    state_.cursor_x = cursor_x;
    state_.goal_x = goal_x;
    refresh_geometry();
    cached_goal_.reset();
    state_.arrived = state_.distance() <= state_.tolerance_radius;
  }

  [[nodiscard]] Frame render() const {
    if (!cached_goal_ || cached_goal_x_ != state_.goal_x) {
      cached_goal_ = render_goal_only(state_.goal_x);
      cached_goal_x_ = state_.goal_x;
    }
    Frame f = *cached_goal_;
    detail::draw_marker(f, state_.cursor_x, cfg_.motion_row, kCursorColor, cfg_.render_mode);
    return f;
  }

  [[nodiscard]] Frame render_goal_only(double goal_x) const {
    Frame f(cfg_.width, cfg_.height);
    detail::draw_marker(f, goal_x, cfg_.motion_row, kGoalColor, cfg_.render_mode);
    return f;
  }

 private:
  void refresh_geometry() {
    const Geometry g = demand_to_geometry(state_.task_demand, state_.cursor_x, cfg_);
    state_.tolerance_radius = g.tolerance;
    state_.step_velocity = g.velocity;
  }

  // Uniform sample over {g in [g_min, g_max] : |g - cursor| in band}. With
  // `widen` the band upper edge becomes d_avail, which is always reachable.
  bool try_place_goal(bool widen) {
    Geometry g = demand_to_geometry(state_.task_demand, state_.cursor_x, cfg_);
    if (widen) {
      g.band.hi = available_distance(state_.cursor_x, cfg_);
      g.band.lo = std::min(g.band.lo, g.band.hi);
    }
    const double cx = state_.cursor_x;
    const Interval right{cx + g.band.lo, std::min(cx + g.band.hi, cfg_.g_max)};
    const Interval left{std::max(cx - g.band.hi, cfg_.g_min), cx - g.band.lo};
    const double wr = right.hi >= right.lo ? right.width() : -1.0;
    const double wl = left.hi >= left.lo ? left.width() : -1.0;
    if (wr < 0 && wl < 0) return false;
    double goal;
    if (wr < 0) {
      goal = rng_.uniform(left.lo, left.hi);
    } else if (wl < 0) {
      goal = rng_.uniform(right.lo, right.hi);
    } else if (wr + wl <= 0.0) {
      goal = rng_.uniform() < 0.5 ? left.lo : right.lo;
    } else {
      const double u = rng_.uniform() * (wr + wl);
      goal = u < wl ? left.lo + u : right.lo + (u - wl);
    }
    state_.goal_x = std::clamp(goal, cfg_.g_min, cfg_.g_max);
    state_.goal_distance_band = g.band;
    cached_goal_.reset();
    return true;
  }

  EnvConfig cfg_;
  EnvState state_;
  Rng rng_{0};
  mutable std::optional<Frame> cached_goal_;
  mutable double cached_goal_x_ = 0.0;
};

/// Scripted goal-directed action: sign of the gap times the coupled velocity.
inline double oracle_action(const EnvState& s) {
  if (s.arrived) throw UsageError("oracle action requested for an arrived episode");
  const double gap = s.goal_x - s.cursor_x;
  if (gap == 0.0) return 0.0;
  return gap > 0 ? s.step_velocity : -s.step_velocity;
}

}  // namespace gatelab
