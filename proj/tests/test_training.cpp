#include <gtest/gtest.h>

#include <cmath>

#include "gatelab/adam.hpp"
#include "gatelab/analysis.hpp"
#include "gatelab/training.hpp"
#include "test_util.hpp"

using namespace gatelab;

namespace {

TrainRunConfig small_run(TrainMode mode, int k, std::uint64_t seed = 0) {
  TrainRunConfig c;
  c.mode = mode;
  c.gate.k = k;
  c.seed = seed;
  return c;
}

double mean_range(const std::vector<double>& v, std::size_t a, std::size_t b) {
  double s = 0;
  for (std::size_t i = a; i < b; ++i) s += v[i];
  return s / static_cast<double>(b - a);
}

}  // namespace

TEST(Schedule, WarmThenCold) {
  TemperatureSchedule s;
  EXPECT_EQ(s.tau(0), 10.0);
  EXPECT_EQ(s.tau(9), 10.0);
  EXPECT_EQ(s.tau(10), 0.001);
  EXPECT_TRUE(s.warm(9));
  EXPECT_FALSE(s.warm(10));
}

TEST(Schedule, Validation) {
  TemperatureSchedule s;
  s.tau_cold = 20;
  EXPECT_THROW(s.validate(), ConfigError);
  TemperatureSchedule w;
  w.warm_epochs = 60;
  EXPECT_THROW(w.validate(), ConfigError);
}

TEST(Target, CenteredAndLinear) {
  ArbitrationTarget t;
  EXPECT_NEAR(t.value(0.0), 0.599, 1e-12);
  EXPECT_NEAR(t.value(0.88), 0.401, 1e-12);
  EXPECT_NEAR(t.value(0.44), 0.5, 1e-12);
  t.kind = "linear";
  EXPECT_DOUBLE_EQ(t.value(0.0), 1.0);
  EXPECT_DOUBLE_EQ(t.value(0.88), 1.0 - 0.88);
  t.kind = "cubic";
  EXPECT_THROW(static_cast<void>(t.value(0.1)), ConfigError);
}

TEST(Target, MonotoneAndClamped) {
  ArbitrationTarget t;
  t.slope = 5;
  double prev = 2;
  for (int i = 0; i <= 100; ++i) {
    const double v = t.value(i / 100.0);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(TdGrid, NinePointsEndingAtHighDemandAnchor) {
  const auto g = default_td_grid();
  ASSERT_EQ(g.size(), 9u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g.back(), 0.88);
  EXPECT_NEAR(g[4], 0.44, 1e-15);
}

TEST(AdamTest, ZeroGradientLeavesParamsUnchanged) {
  ParamSet ps;
  ps.add("x", 2, 2);
  ps[0] << 1, 2, 3, 4;
  const ParamSet before = ps;
  Adam adam(ps, AdamConfig{});
  for (int i = 0; i < 10; ++i) adam.step(ps, ps.zeros_like());
  EXPECT_EQ(ps, before);
}

TEST(AdamTest, UnitGradientStepsByLearningRate) {
  ParamSet ps;
  ps.add("x", 1, 1);
  ParamSet g = ps.zeros_like();
  g[0](0, 0) = 1.0;
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam adam(ps, cfg);
  double prev = 0.0;
  for (int i = 0; i < 20; ++i) {
    adam.step(ps, g);
    const double step = prev - ps[0](0, 0);
    EXPECT_NEAR(step, cfg.lr, 1e-8);
    EXPECT_LE(step, cfg.lr * (1 + 1e-12));
    prev = ps[0](0, 0);
  }
}

TEST(AdamTest, QuadraticBowlConverges) {
  ParamSet ps;
  ps.add("x", 3, 1);
  ps[0] << 1.0, -0.5, 0.25;
  AdamConfig cfg;
  cfg.lr = 0.01;
  Adam adam(ps, cfg);
  for (int i = 0; i < 500; ++i) {
    ParamSet g = ps.zeros_like();
    g[0] = 2.0 * ps[0];  // d/dx of |x|^2
    adam.step(ps, g);
  }
  EXPECT_LT(ps[0].cwiseAbs().maxCoeff(), 1e-3);
}

TEST(AdamTest, NonFiniteGradientSkipsUpdate) {
  ParamSet ps;
  ps.add("x", 2, 1);
  ps[0] << 1, 1;
  const ParamSet before = ps;
  Adam adam(ps, AdamConfig{});
  ParamSet g = ps.zeros_like();
  g[0] << 1.0, std::nan("");
  EXPECT_FALSE(adam.step(ps, g));
  EXPECT_EQ(ps, before);
  EXPECT_EQ(adam.skipped(), 1);
  EXPECT_EQ(adam.steps(), 0);
}

TEST(AdamTest, FrozenBlocksUntouched) {
  ParamSet ps;
  ps.add("a", 1, 1);
  ps.add("b", 1, 1, false);
  ParamSet g = ps.zeros_like();
  g[0](0, 0) = g[1](0, 0) = 1.0;
  Adam adam(ps, AdamConfig{});
  adam.step(ps, g);
  EXPECT_NE(ps[0](0, 0), 0.0);
  EXPECT_EQ(ps[1](0, 0), 0.0);
}

TEST(Evidence, ContingencyExamples) {
  EXPECT_DOUBLE_EQ(contingency_evidence(3.0, 3.0), 1.0);
  EXPECT_DOUBLE_EQ(contingency_evidence(3.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(contingency_evidence(2.0, 1.5), 0.75);
  EXPECT_DOUBLE_EQ(contingency_evidence(2.0, -5.0), 0.0);
  EXPECT_DOUBLE_EQ(contingency_evidence(0.0, 0.0), 1.0);
  StepRecord s;
  s.action = 2.0;
  s.cursor_dx = 2.0;
  s.goal_dx = 0.0;
  EXPECT_DOUBLE_EQ(step_evidence(s), 0.5);
}

TEST(Stream, CursorPersistsAcrossEpisodes) {
  EpisodeStream stream(EnvConfig{}, 0.3, 4);
  double last_cursor = stream.env().state().cursor_x;
  for (int e = 0; e < 20; ++e) {
    const auto steps = stream.next_episode();
    ASSERT_FALSE(steps.empty());
    EXPECT_NEAR(steps.front().cursor_x - steps.front().cursor_dx, last_cursor, 1e-12);
    last_cursor = steps.back().cursor_x;
    for (std::size_t t = 1; t < steps.size(); ++t) EXPECT_EQ(steps[t].goal_dx, 0.0);
  }
}

TEST(Timeline, WindowsCarryAcrossEpisodes) {
  const int k = 4;
  CellTimeline tl(k, 2, kValueDim);
  EpisodeStream stream(EnvConfig{}, 0.5, 1);
  const EnvConfig env;
  std::vector<StepRecord> all;
  int windows = 0;
  for (int e = 0; e < 6; ++e) {
    const auto steps = stream.next_episode();
    GateBatch alt;
    const auto b = tl.build(steps, env, &alt);
    const int carry = static_cast<int>(std::min<std::size_t>(k - 1, all.size()));
    all.insert(all.end(), steps.begin(), steps.end());
    ASSERT_EQ(b.keys.rows(), carry + static_cast<Eigen::Index>(steps.size()));
    // The last row is the newest step, and every window ends at a new step.
    EXPECT_EQ(b.keys.row(b.keys.rows() - 1).transpose(), step_key(all.back(), env));
    for (std::size_t w = 0; w < b.end.size(); ++w) {
      EXPECT_GE(b.end[w], carry);
      EXPECT_EQ(b.queries.row(static_cast<Eigen::Index>(w)), b.keys.row(b.end[w]));
    }
    windows += static_cast<int>(b.end.size());
    // Alternate values swap the two slot halves.
    EXPECT_EQ(alt.values.leftCols(kSlotFeatureDim), b.values.rightCols(kSlotFeatureDim));
    EXPECT_EQ(alt.values.rightCols(kSlotFeatureDim), b.values.leftCols(kSlotFeatureDim));
  }
  EXPECT_EQ(windows, static_cast<int>(all.size()) - (k - 1));
}

TEST(Losses, ArbitrationMatchesFiniteDifferences) {
  Rng rng(3);
  for (int inst = 0; inst < 50; ++inst) {
    Eigen::VectorXd l(7);
    for (int i = 0; i < 7; ++i) l[i] = rng.uniform(-6, 6);
    const double y = rng.uniform();
    Eigen::VectorXd dl;
    arbitration_loss(l, y, &dl);
    for (int i = 0; i < 7; ++i) {
      Eigen::VectorXd p = l, m = l;
      p[i] += 1e-5;
      m[i] -= 1e-5;
      const double fd = (arbitration_loss(p, y, nullptr) - arbitration_loss(m, y, nullptr)) / 2e-5;
      EXPECT_LT(test_support::rel_err(dl[i], fd), 1e-4);
    }
  }
}

TEST(Losses, ArbitrationEqualsBinaryCrossEntropy) {
  Eigen::VectorXd l(2);
  l << 0.3, -1.2;
  const double expect = 0.5 * (bce(sigmoid(0.3), 0.7) + bce(sigmoid(-1.2), 0.7));
  EXPECT_NEAR(arbitration_loss(l, 0.7, nullptr), expect, 1e-12);
}

TEST(Losses, ControllabilityMatchesFiniteDifferences) {
  Rng rng(5);
  for (double tau : {10.0, 1.0, 0.1, 0.001}) {
    for (int inst = 0; inst < 50; ++inst) {
      Eigen::VectorXd l(5), g(5);
      for (int i = 0; i < 5; ++i) {
        l[i] = rng.uniform(-2, 2);
        g[i] = rng.gumbel() - rng.gumbel();
      }
      Eigen::VectorXd dl;
      controllability_loss(l, g, tau, &dl);
      const double h = 1e-5 * tau;
      for (int i = 0; i < 5; ++i) {
        Eigen::VectorXd p = l, m = l;
        p[i] += h;
        m[i] -= h;
        const double fd =
            (controllability_loss(p, g, tau, nullptr) - controllability_loss(m, g, tau, nullptr)) / (2 * h);
        // The loss scales as 1 / tau; compare on the tau-scaled objective so the
        // absolute floor means the same thing at every temperature.
        EXPECT_LT(test_support::rel_err(tau * dl[i], tau * fd), 1e-4) << "tau " << tau;
      }
    }
  }
}

TEST(Losses, ControllabilityCommitsToArgmaxOfSample) {
  Eigen::VectorXd l(3), g(3);
  l << 1.0, -1.0, 0.2;
  g << 0.0, 0.5, -0.5;
  std::vector<int> committed;
  controllability_loss(l, g, 0.001, nullptr, &committed);
  EXPECT_EQ(committed, (std::vector<int>{0, 1, 1}));
  EXPECT_THROW(controllability_loss(l, g, 0.0, nullptr), DomainError);
}

// End-to-end gradient of each loss through the gate on a frozen mini-batch.
TEST(Losses, GateChainMatchesFiniteDifferences) {
  for (int inst = 0; inst < 50; ++inst) {
    const bool ctrl = inst % 2 == 1;
    GateConfig gc;
    gc.k = 2 + inst % 3;
    gc.n_layers = 1 + inst % 3;
    gc.train_residual_gain = true;
    ContingencyGate gate(gc);
    Rng rng(900 + inst);
    gate.init(rng, false);
    EpisodeStream stream(EnvConfig{}, 0.3, 77 + inst);
    CellTimeline tl(gc.k, 2, kValueDim);
    GateBatch b, alt;
    do b = tl.build(stream.next_episode(), EnvConfig{}, &alt);
    while (b.end.empty());
    Eigen::VectorXd gd(static_cast<Eigen::Index>(b.end.size()));
    for (Eigen::Index t = 0; t < gd.size(); ++t) gd[t] = rng.gumbel() - rng.gumbel();
    const double tau = 0.7, y = 0.6;

    auto objective = [&] {
      GateBatchCache c1, c2;
      Eigen::VectorXd l = gate.forward_batch(b, c1);
      if (!ctrl) return arbitration_loss(l, y, nullptr);
      l -= gate.forward_batch(alt, c2);
      return controllability_loss(l, gd, tau, nullptr);
    };
    GateBatchCache c1, c2;
    Eigen::VectorXd l = gate.forward_batch(b, c1), dl;
    ParamSet grad = gate.params().zeros_like();
    if (ctrl) {
      l -= gate.forward_batch(alt, c2);
      controllability_loss(l, gd, tau, &dl);
      gate.backward_batch(b, c1, dl, grad);
      gate.backward_batch(alt, c2, -dl, grad);
    } else {
      arbitration_loss(l, y, &dl);
      gate.backward_batch(b, c1, dl, grad);
    }
    const auto check = test_support::check_gradients(gate.params(), grad, objective);
    EXPECT_LT(check.worst, 1e-4) << "instance " << inst << ": " << check.where;
  }
}

TEST(Train, WarmPhaseLeavesParametersBitwiseUnchanged) {
  for (auto mode : {TrainMode::arbitration, TrainMode::controllability}) {
    const auto r = train(small_run(mode, 8));
    EXPECT_EQ(r.initial_params, r.warm_end_params);
    EXPECT_FALSE(r.initial_params == r.final_params);
  }
}

TEST(Train, WarmPhaseConfidenceAtChance) {
  for (auto mode : {TrainMode::arbitration, TrainMode::controllability}) {
    for (int k : {1, 32}) {
      const auto r = train(small_run(mode, k));
      for (const auto& rec : r.records)
        if (rec.epoch < 10) {
          EXPECT_NEAR(rec.mean_confidence, 0.5, 0.02);
        }
    }
  }
}

TEST(Train, DeterministicForIdenticalConfig) {
  for (auto mode : {TrainMode::arbitration, TrainMode::controllability, TrainMode::ema_ablation}) {
    auto c = small_run(mode, 4, 17);
    c.schedule.total_epochs = 15;
    c.schedule.warm_epochs = 3;
    const auto a = train(c), b = train(c);
    ASSERT_EQ(a.records.size(), b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
      EXPECT_EQ(a.records[i].mean_confidence, b.records[i].mean_confidence);
      EXPECT_EQ(a.records[i].loss, b.records[i].loss);
    }
    EXPECT_EQ(a.final_params, b.final_params);
    c.seed = 18;
    if (mode != TrainMode::ema_ablation) {
      EXPECT_FALSE(train(c).final_params == a.final_params);
    }
  }
}

TEST(Train, RecordsOnePerEpochPerCell) {
  auto c = small_run(TrainMode::arbitration, 2);
  c.schedule.total_epochs = 5;
  c.schedule.warm_epochs = 1;
  const auto r = train(c);
  ASSERT_EQ(r.records.size(), 5u * 9u);
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    EXPECT_EQ(r.records[i].epoch, static_cast<int>(i / 9));
    EXPECT_EQ(r.records[i].td, c.td_grid[i % 9]);
    EXPECT_GE(r.records[i].mean_confidence, 0.0);
    EXPECT_LE(r.records[i].mean_confidence, 1.0);
    EXPECT_EQ(r.records[i].tau, r.records[i].epoch < 1 ? 10.0 : 0.001);
  }
}

TEST(Train, ColdPhaseLossDecreasesAtK32) {
  for (auto mode : {TrainMode::arbitration, TrainMode::controllability}) {
    const auto r = train(small_run(mode, 32));
    std::vector<double> per_epoch(60, 0.0);
    for (const auto& rec : r.records) per_epoch[static_cast<std::size_t>(rec.epoch)] += rec.loss;
    EXPECT_LT(mean_range(per_epoch, 50, 60), per_epoch[10]) << to_string(mode);
  }
}

TEST(Train, ArbitrationDirectionAtK32) {
  const auto r = train(small_run(TrainMode::arbitration, 32));
  const auto d = diagram_from_records(r.records);
  const auto m = trailing_means(d);
  EXPECT_GT(m.front(), 0.5);
  EXPECT_LT(m.back(), 0.5);
}

TEST(Train, ControllabilityCommitsToCursor) {
  const auto r = train(small_run(TrainMode::controllability, 32));
  EXPECT_GT(r.records.back().mean_confidence, 0.9);
  EXPECT_GT(r.records.back().prospective_rate, 0.9);
}

TEST(Train, SingleStepWindowFailsToStabilise) {
  // Epoch-to-epoch variance of the late cold-phase confidence.
  auto late_variance = [](int k, std::uint64_t seed) {
    const auto tr = train(small_run(TrainMode::controllability, k, seed)).confidence_trace(0.5);
    const double m = mean_range(tr, 40, 60);
    double v = 0;
    for (std::size_t i = 40; i < 60; ++i) v += (tr[i] - m) * (tr[i] - m);
    return v / 19.0;
  };
  for (std::uint64_t s = 0; s < 3; ++s) EXPECT_GT(late_variance(1, s), late_variance(32, s)) << "seed " << s;
}

TEST(Train, EpisodeTraceCoversColdPhase) {
  const auto r = train(small_run(TrainMode::controllability, 8));
  const auto cold = episode_trace(r.episodes, 0.5, 10);
  EXPECT_EQ(cold.size(), 50u * 20u);
  EXPECT_EQ(r.optimizer_steps, 1000);
}

TEST(Train, DivergenceRaisesNumericError) {
  auto c = small_run(TrainMode::arbitration, 2);
  c.adam.lr = 1e300;
  EXPECT_THROW(train(c), NumericError);
}

TEST(Config, JsonRoundTripAndSeedlessHash) {
  auto c = small_run(TrainMode::controllability, 16, 9);
  c.td = 0.3;
  c.adam.lr = 0.004;
  const auto back = TrainRunConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  auto other = c;
  other.seed = 10;
  EXPECT_EQ(other.hash(), c.hash());
  other.gate.k = 8;
  EXPECT_NE(other.hash(), c.hash());
}

TEST(Config, RejectsInvalidRuns) {
  auto c = small_run(TrainMode::arbitration, 0);
  EXPECT_THROW(train(c), ConfigError);
  auto d = small_run(TrainMode::arbitration, 4);
  d.td_grid = {0.0, 1.5};
  EXPECT_THROW(train(d), DomainError);
  auto e = small_run(TrainMode::arbitration, 4);
  e.adam.lr = 0;
  EXPECT_THROW(train(e), ConfigError);
  EXPECT_THROW(train_mode_from_string("other"), ConfigError);
}
