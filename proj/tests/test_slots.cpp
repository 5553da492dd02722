#include <gtest/gtest.h>

#include "gatelab/env.hpp"
#include "gatelab/slots.hpp"

using namespace gatelab;

TEST(ExtractSlots, CursorPositionIsNormalisedPixel) {
  Environment env;
  env.reset(0.0, 1);
  env.set_positions(20.0, 50.0);
  const auto s = extract_slots(env.render());
  EXPECT_DOUBLE_EQ(s.cursor().position, 0.3125);
  EXPECT_DOUBLE_EQ(s.goal().position, 50.0 / 64.0);
  EXPECT_EQ(s.cursor().presence, 1.0);
  EXPECT_EQ(s.goal().presence, 1.0);
  EXPECT_DOUBLE_EQ(s.cursor().appearance[0], 1.0);
  EXPECT_DOUBLE_EQ(s.cursor().appearance[1], 0.0);
  EXPECT_DOUBLE_EQ(s.goal().appearance[2], 1.0);
}

TEST(ExtractSlots, OverlapOccludesGoal) {
  Environment env;
  env.reset(0.0, 1);
  env.set_positions(30.0, 30.2);
  const auto s = extract_slots(env.render());
  EXPECT_EQ(s.cursor().presence, 1.0);
  EXPECT_EQ(s.goal().presence, 0.0);
}

TEST(ExtractSlots, BlackFrameHasNoObjects) {
  const auto s = extract_slots(Frame(64, 64));
  EXPECT_EQ(s.cursor().presence, 0.0);
  EXPECT_EQ(s.goal().presence, 0.0);
  EXPECT_EQ(s.background().presence, 1.0);
  EXPECT_EQ(s.background().position, 0.0);
}

TEST(ExtractSlots, RecoversEveryIntegerCursorPosition) {
  Environment env;
  env.reset(0.0, 1);
  for (int x = 0; x < 64; ++x) {
    env.set_positions(x, x < 32 ? 57.0 : 6.0);
    const auto s = extract_slots(env.render());
    EXPECT_LE(std::abs(s.cursor().position * 64.0 - x), 0.5) << x;
  }
}

TEST(ExtractSlots, AntialiasedCentroidWithinHalfPixel) {
  EnvConfig cfg;
  cfg.render_mode = RenderMode::antialiased;
  Environment env(cfg);
  env.reset(0.0, 1);
  for (double x = 1.0; x < 62.0; x += 0.37) {
    env.set_positions(x, x < 32 ? 57.0 : 6.0);
    const auto s = extract_slots(env.render());
    EXPECT_LE(std::abs(s.cursor().position * 64.0 - x), 0.5) << x;
  }
}

TEST(SlotFeatures, Layout) {
  const EnvConfig cfg;
  const auto f = slot_features(32.0, -1.5, 16.0, 0.0, cfg);
  EXPECT_DOUBLE_EQ(f.cursor[0], 0.5);
  EXPECT_DOUBLE_EQ(f.cursor[1], -0.5);
  EXPECT_DOUBLE_EQ(f.cursor[2], 1.0);
  EXPECT_DOUBLE_EQ(f.cursor[3], 0.0);
  EXPECT_DOUBLE_EQ(f.goal[0], 0.25);
  EXPECT_DOUBLE_EQ(f.goal[3], 0.0);
  const auto g = slot_features(32.0, 0.0, 16.0, 12.0, cfg);
  EXPECT_DOUBLE_EQ(g.goal[1], 4.0);
  EXPECT_DOUBLE_EQ(g.goal[3], 1.0);
  EXPECT_EQ(kValueDim, 8);
}
