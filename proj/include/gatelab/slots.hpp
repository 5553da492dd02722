#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "gatelab/env.hpp"

namespace gatelab {

struct Slot {
  double position = 0.0;  // pixel_x / width
  std::array<double, 3> appearance{0.0, 0.0, 0.0};
  double presence = 0.0;
};

enum SlotIndex : int { kCursorSlot = 0, kGoalSlot = 1, kBackgroundSlot = 2 };

struct SlotLatents {
  std::array<Slot, 3> slots;
  Slot& cursor() { return slots[kCursorSlot]; }
  Slot& goal() { return slots[kGoalSlot]; }
  [[nodiscard]] const Slot& cursor() const { return slots[kCursorSlot]; }
  [[nodiscard]] const Slot& goal() const { return slots[kGoalSlot]; }
  [[nodiscard]] const Slot& background() const { return slots[kBackgroundSlot]; }
};

/// Oracle slot extractor: colour-keyed centroids stand in for a trained
/// object-centric encoder. Red pixels (g = b = 0) form the cursor, grey
/// pixels (r = g = b) form the goal; intensity weights the centroid.
inline SlotLatents extract_slots(const Frame& f) {
  SlotLatents out;
  struct Acc {
    double w = 0, wx = 0;
    std::array<double, 3> col{0, 0, 0};
    int n = 0;
  } red, white;
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) {
      const auto* p = f.px(x, y);
      if (p[0] == 0 && p[1] == 0 && p[2] == 0) continue;
      Acc* acc = nullptr;
      double weight = 0;
      if (p[1] == 0 && p[2] == 0) {
        acc = &red;
        weight = p[0];
      } else if (p[0] == p[1] && p[1] == p[2]) {
        acc = &white;
        weight = p[0];
      }
      if (!acc) continue;
      acc->w += weight;
      acc->wx += weight * x;
      for (int c = 0; c < 3; ++c) acc->col[c] += p[c];
      ++acc->n;
    }
  }
  auto fill = [&](Slot& s, const Acc& a) {
    if (a.w <= 0) return;
    s.position = (a.wx / a.w) / f.width;
    for (int c = 0; c < 3; ++c) s.appearance[c] = a.col[c] / (255.0 * a.n);
    s.presence = 1.0;
  };
  fill(out.slots[kCursorSlot], red);
  fill(out.slots[kGoalSlot], white);
  out.slots[kBackgroundSlot].presence = 1.0;
  return out;
}

/// Per-slot feature vector fed to the gate as attention values:
/// [position / width, displacement / v_max, presence, onset]. Onset marks a
/// discontinuous jump of the slot (a goal resample).
inline constexpr int kSlotFeatureDim = 4;
inline constexpr int kValueDim = 2 * kSlotFeatureDim;

struct SlotFeatures {
  std::array<double, kSlotFeatureDim> cursor{};
  std::array<double, kSlotFeatureDim> goal{};
};

inline SlotFeatures slot_features(double cursor_x, double cursor_dx, double goal_x, double goal_dx,
                                  const EnvConfig& cfg) {
  SlotFeatures f;
  f.cursor = {cursor_x / cfg.width, cursor_dx / cfg.v_max, 1.0, 0.0};
  f.goal = {goal_x / cfg.width, goal_dx / cfg.v_max, 1.0, goal_dx != 0.0 ? 1.0 : 0.0};
  return f;
}

}  // namespace gatelab
