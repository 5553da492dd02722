#include <gtest/gtest.h>

#include "gatelab/body_schema.hpp"
#include "gatelab/rng.hpp"

using namespace gatelab;

TEST(BodySchema, ZeroActionLeavesProximalNodeUnchanged) {
  BodySchema s;
  s.nodes[0] = {1.5, -2.0};
  const auto out = schema_apply_action(s, 0.0);
  EXPECT_EQ(out.nodes[0].mean, 1.5);
  EXPECT_EQ(out.nodes[0].log_var, -2.0);
}

TEST(BodySchema, ActionShiftsMeanAndVariance) {
  BodySchema s;
  const auto out = schema_apply_action(s, 2.0);
  EXPECT_DOUBLE_EQ(out.nodes[0].mean, 2.0);
  EXPECT_NEAR(out.nodes[0].log_var, 0.2, 1e-15);
}

TEST(BodySchema, UnitActionsAccumulateLinearly) {
  BodySchema s;
  for (int i = 0; i < 10; ++i) s = schema_apply_action(s, i % 2 ? 1.0 : -1.0);
  EXPECT_NEAR(s.nodes[0].log_var, 10 * s.phi0, 1e-12);
}

TEST(BodySchema, IdentityAndScaledEdges) {
  BodySchema s;
  s.nodes[0].mean = 3.0;
  EXPECT_EQ(schema_propagate(s).nodes[1].mean, 3.0);
  s.link_gain[0] = 2.0;
  EXPECT_EQ(schema_propagate(s).nodes[1].mean, 6.0);
}

TEST(BodySchema, DistalVarianceNeverBelowProximal) {
  Rng rng(11);
  for (int i = 0; i < 1000; ++i) {
    BodySchema s;
    s.nodes[0] = {rng.uniform(-5, 5), rng.uniform(-8, 3)};
    s.nodes[1] = {rng.uniform(-5, 5), rng.uniform(-8, 3)};
    s.link_gain[0] = rng.uniform(-3, 3);
    s.link_log_var[0] = rng.uniform(-10, 2);
    const auto out = schema_propagate(s);
    ASSERT_GE(out.nodes[1].log_var - out.nodes[0].log_var, 0.0);
  }
}

TEST(BodySchema, UncertaintyNonDecreasingOverNonzeroActions) {
  Rng rng(3);
  BodySchema s;
  for (int t = 0; t < 200; ++t) {
    double a = rng.uniform(-3, 3);
    if (a == 0.0) a = 1.0;
    const auto next = schema_apply_action(s, a);
    ASSERT_GE(next.nodes[0].log_var, s.nodes[0].log_var);
    ASSERT_GE(next.nodes[1].log_var, s.nodes[1].log_var);
    s = next;
  }
}

TEST(BodySchema, OppositeActionsRestoreMeansOnly) {
  BodySchema s;
  s.nodes[0] = {0.7, -1.0};
  s = schema_propagate(s);
  const auto back = schema_apply_action(schema_apply_action(s, 1.3), -1.3);
  EXPECT_NEAR(back.nodes[0].mean, s.nodes[0].mean, 1e-12);
  EXPECT_NEAR(back.nodes[1].mean, s.nodes[1].mean, 1e-12);
  EXPECT_GT(back.nodes[0].log_var, s.nodes[0].log_var);
  EXPECT_GT(back.nodes[1].log_var, s.nodes[1].log_var);
}

TEST(BodySchema, PhiNonNegative) {
  BodySchema s;
  for (double x = 0; x < 10; x += 0.1) EXPECT_GE(s.phi(x), 0.0);
}

TEST(BodySchema, RejectsMalformedChain) {
  BodySchema s;
  s.link_gain.push_back(1.0);
  EXPECT_THROW(schema_propagate(s), ConfigError);
  BodySchema n;
  n.phi0 = -1;
  EXPECT_THROW(schema_apply_action(n, 1.0), ConfigError);
}
