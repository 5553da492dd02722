#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "gatelab/analysis.hpp"
#include "gatelab/artifacts.hpp"
#include "gatelab/checkpoint.hpp"
#include "gatelab/env.hpp"
#include "gatelab/image_io.hpp"
#include "gatelab/server.hpp"
#include "gatelab/session.hpp"
#include "gatelab/sweep.hpp"
#include "gatelab/training.hpp"

namespace fs = std::filesystem;
using namespace gatelab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path output_root() {
  if (const char* env = std::getenv("GATELAB_OUT"); env && *env) return env;
  return "gatelab_out";
}

struct TrainFlags {
  std::string mode = "arbitration";
  int k = 32;
  int depth = 2;
  std::optional<double> td;
  std::vector<double> td_grid;
  int epochs = 60;
  int warm_epochs = 10;
  int episodes = 20;
  double lr = 1e-2;
  std::string target = "centered";
  double target_slope = 0.225;
  double target_center = 0.44;
  std::string velocity_mode = "bounded";
  bool traces = false;
  bool train_residual_gain = false;

  void add(CLI::App* app, bool with_k) {
    app->add_option("--mode", mode, "controllability | arbitration | ema_ablation")
        ->check(CLI::IsMember({"controllability", "arbitration", "ema_ablation"}));
    if (with_k) {
      app->add_option("--k", k, "context window length")->check(CLI::PositiveNumber);
      app->add_option("--depth", depth, "attention layers")->check(CLI::Range(1, 8));
    }
    app->add_option("--td", td, "fixed task demand (controllability)");
    app->add_option("--td-grid", td_grid, "task-demand grid (arbitration, ema_ablation)")->delimiter(',');
    app->add_option("--epochs", epochs, "total epochs")->check(CLI::PositiveNumber);
    app->add_option("--warm-epochs", warm_epochs, "epochs at the warm temperature")->check(CLI::NonNegativeNumber);
    app->add_option("--episodes", episodes, "episodes per epoch per task-demand cell")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    app->add_option("--target", target, "arbitration target: centered | linear")
        ->check(CLI::IsMember({"centered", "linear"}));
    app->add_option("--target-slope", target_slope, "slope of the centered target");
    app->add_option("--target-center", target_center, "task demand where the centered target is 0.5");
    app->add_option("--velocity-mode", velocity_mode, "bounded | fixed | free")
        ->check(CLI::IsMember({"bounded", "fixed", "free"}));
    app->add_flag("--traces", traces, "write per-step confidence traces (JSON lines)");
    app->add_flag("--train-residual-gain", train_residual_gain, "let Adam update the per-layer residual gain");
  }

  [[nodiscard]] TrainRunConfig to_config() const {
    TrainRunConfig c;
    c.mode = train_mode_from_string(mode);
    if (c.mode == TrainMode::controllability && !td_grid.empty())
      throw UsageFailure("--td-grid cannot be combined with controllability mode (use --td)");
    if (c.mode != TrainMode::controllability && td)
      throw UsageFailure("--td applies to controllability mode only (use --td-grid)");
    c.gate.k = k;
    c.gate.n_layers = depth;
    c.gate.train_residual_gain = train_residual_gain;
    if (td) c.td = *td;
    if (!td_grid.empty()) c.td_grid = td_grid;
    c.schedule.total_epochs = epochs;
    c.schedule.warm_epochs = warm_epochs;
    c.episodes_per_epoch = episodes;
    c.adam.lr = lr;
    c.target.kind = target;
    c.target.slope = target_slope;
    c.target.center = target_center;
    c.env.velocity_mode = velocity_mode_from_string(velocity_mode);
    c.record_traces = traces;
    return c;
  }
};

std::vector<std::uint64_t> seed_list(const std::vector<std::uint64_t>& explicit_seeds, int count) {
  if (!explicit_seeds.empty()) return explicit_seeds;
  std::vector<std::uint64_t> s;
  for (int i = 0; i < count; ++i) s.push_back(static_cast<std::uint64_t>(i));
  return s;
}

int cmd_run(const TrainFlags& flags, std::uint64_t seed, const std::string& out_flag, const std::string& manifest) {
  TrainRunConfig cfg;
  if (!manifest.empty()) {
    cfg = TrainRunConfig::from_json(Manifest::from_json(load_json_file(manifest)).config);
  } else {
    cfg = flags.to_config();
    cfg.seed = seed;
  }
  cfg.validate();
  const fs::path dir = out_flag.empty() ? output_root() / ("run-" + cfg.hash() + "-s" + std::to_string(cfg.seed))
                                        : fs::path(out_flag);
  Manifest m;
  m.command = "run";
  m.config = cfg.to_json();
  m.seeds = {cfg.seed};
  m.output_dir = dir.string();
  m.started = utc_timestamp();
  m.write(dir);
  const RunResult res = train(cfg);
  m.checksums = write_run_artifacts(dir, res);
  m.finished = utc_timestamp();
  m.write(dir);

  const auto d = diagram_from_records(res.records);
  std::cout << "run " << to_string(cfg.mode) << " k=" << cfg.gate.k << " depth=" << cfg.gate.n_layers
            << " seed=" << cfg.seed << " -> " << dir.string() << "\n";
  if (cfg.mode == TrainMode::controllability) {
    const auto cold = episode_trace(res.episodes, cfg.td, cfg.schedule.warm_epochs);
    const auto f = fit_ema(cold, cfg.gate.k);
    std::cout << "final confidence " << fmt(cold.back()) << ", EMA fit c_inf " << fmt(f.c_infinity) << " residual "
              << fmt(f.residual) << "\n";
  } else {
    if (d.grid.rows() >= 10)
      std::cout << "delta " << fmt(compute_delta(d)) << ", range " << fmt(range_delta(d)) << "\n";
    else
      std::cout << "delta needs at least 10 epochs; final-epoch range " << fmt(range_delta(d, 1)) << "\n";
  }
  if (res.skipped_updates) std::cout << "skipped optimizer updates (non-finite gradients): " << res.skipped_updates << "\n";
  return kExitOk;
}

int cmd_sweep(const TrainFlags& flags, const std::vector<int>& ks, const std::vector<int>& depths,
              const std::vector<std::uint64_t>& seeds, int workers, bool resume, const std::string& out_flag) {
  SweepSpec spec;
  spec.base = flags.to_config();
  spec.k_values = ks;
  spec.depths = depths;
  spec.seeds = seeds;
  spec.workers = workers;
  spec.resume = resume;
  for (const auto& c : spec.jobs()) c.validate();
  const fs::path root = out_flag.empty() ? output_root() / ("sweep-" + spec.base.hash()) : fs::path(out_flag);
  fs::create_directories(root);
  Manifest m;
  m.command = "sweep";
  m.config = spec.to_json();
  m.seeds = seeds;
  m.output_dir = root.string();
  m.started = utc_timestamp();
  m.write(root);
  write_text(root / "sweep.json", spec.to_json().dump(2) + "\n");

  std::cout << "sweep: " << spec.jobs().size() << " jobs (" << ks.size() << " k x " << depths.size() << " depth x "
            << seeds.size() << " seeds; " << spec.base.cells().size() << " task-demand cells each) -> "
            << root.string() << "\n";
  const auto outcome = run_sweep(spec, root, [](const JobOutcome& j) {
    const char* st = j.status == JobStatus::completed ? "done" : j.status == JobStatus::resumed ? "resumed" : "FAILED";
    std::cout << "  k=" << j.config.gate.k << " depth=" << j.config.gate.n_layers << " seed=" << j.config.seed << " "
              << st << (j.error.empty() ? "" : ": " + j.error) << std::endl;
  });
  const auto summary = write_sweep_report(spec, outcome.jobs, root);
  m.finished = utc_timestamp();
  m.checksums["report/report.md"] = file_checksum(root / "report" / "report.md");
  m.checksums["report/report.json"] = file_checksum(root / "report" / "report.json");
  m.write(root);
  std::cout << read_text(root / "report" / "report.md");
  if (outcome.failed) {
    std::cerr << outcome.failed << " job(s) failed; report written with gaps\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_report(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::exists(root / "sweep.json")) throw UsageFailure("no sweep.json in " + dir);
  const auto spec = sweep_spec_from_json(load_json_file((root / "sweep.json").string()));
  const auto jobs = load_sweep(spec, root);
  write_sweep_report(spec, jobs, root);
  std::cout << read_text(root / "report" / "report.md");
  int missing = 0;
  for (const auto& j : jobs) missing += j.status == JobStatus::failed;
  if (missing) {
    std::cerr << missing << " run(s) missing or incomplete\n";
    return kExitRuntime;
  }
  return kExitOk;
}

int cmd_env(double demand, int steps, std::uint64_t seed, const std::string& format, const std::string& velocity_mode,
            const std::string& out_flag) {
  if (!(demand >= 0.0 && demand <= 1.0)) throw UsageFailure("--demand must lie in [0, 1]");
  EnvConfig cfg;
  cfg.velocity_mode = velocity_mode_from_string(velocity_mode);
  Environment env(cfg);
  env.reset(demand, seed);
  const fs::path dir = out_flag.empty() ? output_root() / ("env-d" + fmt(demand, 2) + "-s" + std::to_string(seed))
                                        : fs::path(out_flag);
  fs::create_directories(dir);
  std::string log;
  auto dump = [&](int t, const Frame& f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d", t);
    if (format == "ppm" || format == "both") write_bytes((dir / (std::string(name) + ".ppm")).string(), encode_ppm(f));
    if (format == "png" || format == "both") write_bytes((dir / (std::string(name) + ".png")).string(), encode_png(f));
  };
  for (int t = 0; t < steps; ++t) {
    if (env.state().done()) env.resample_goal();
    const double a = oracle_action(env.state());
    const auto& s = env.step(a);
    dump(t, env.render());
    nlohmann::json rec{{"t", t},
                       {"cursor_x", s.cursor_x},
                       {"goal_x", s.goal_x},
                       {"d", s.task_demand},
                       {"r", s.tolerance_radius},
                       {"v", s.step_velocity},
                       {"action", a},
                       {"arrived", s.arrived}};
    log += rec.dump() + "\n";
  }
  write_text(dir / "trajectory.jsonl", log);
  std::cout << "wrote " << steps << " frames and trajectory.jsonl to " << dir.string() << "\n";
  return kExitOk;
}

SessionServer* g_server = nullptr;

int cmd_serve(unsigned short port, const std::string& address, const std::string& checkpoint, int idle_minutes) {
  std::optional<GateTemplate> gate;
  if (!checkpoint.empty()) {
    nlohmann::json meta;
    ParamSet ps = load_checkpoint(checkpoint, &meta);
    const auto cfg = TrainRunConfig::from_json(meta.at("config"));
    ContingencyGate probe(cfg.gate);
    probe.set_params(ps);
    gate = GateTemplate{cfg.gate, ps};
  }
  auto mgr = std::make_shared<SessionManager>(EnvConfig{}, std::chrono::minutes(idle_minutes),
                                              [] { return SteadyClock::now(); }, gate);
  SessionServer server(mgr, port, address);
  g_server = &server;
  std::signal(SIGINT, [](int) {
    if (g_server) g_server->stop();
  });
  std::cout << "serving on ws://" << address << ":" << server.port() << " (GET /health)" << std::endl;
  server.run();
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gatelab: contingency-gate laboratory"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key = value configuration file (flags override it)");

  TrainFlags run_flags;
  std::uint64_t run_seed = 0;
  std::string run_out, run_manifest;
  auto* run = app.add_subcommand("run", "train one configuration");
  run_flags.add(run, true);
  run->add_option("--seed", run_seed, "random seed");
  run->add_option("--out", run_out, "output directory");
  run->add_option("--manifest", run_manifest, "re-run the configuration recorded in a manifest.json");

  TrainFlags sweep_flags;
  std::vector<int> sweep_ks{1, 2, 4, 8, 16, 32}, sweep_depths{2};
  std::vector<std::uint64_t> sweep_seed_list;
  int sweep_seeds = 5, workers = 1;
  bool resume = false;
  std::string sweep_out;
  auto* sweep = app.add_subcommand("sweep", "train a grid of configurations and write reports");
  sweep_flags.add(sweep, false);
  sweep->add_option("--k-values", sweep_ks, "context windows")->delimiter(',');
  sweep->add_option("--depths", sweep_depths, "attention depths")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "number of seeds (0..n-1)")->check(CLI::PositiveNumber);
  sweep->add_option("--seed-list", sweep_seed_list, "explicit seeds")->delimiter(',');
  sweep->add_option("--workers", workers, "parallel workers")->check(CLI::PositiveNumber);
  sweep->add_flag("--resume", resume, "skip runs already completed in the output directory");
  sweep->add_option("--out", sweep_out, "output directory");

  double demand = 0.5;
  int env_steps = 20;
  std::uint64_t env_seed = 0;
  std::string env_format = "both", env_velocity = "bounded", env_out;
  auto* envc = app.add_subcommand("env", "step the oracle policy and dump frames and a trajectory log");
  envc->add_option("--demand", demand, "task demand in [0, 1]");
  envc->add_option("--steps", env_steps, "steps to simulate")->check(CLI::NonNegativeNumber);
  envc->add_option("--seed", env_seed, "reset seed");
  envc->add_option("--format", env_format, "ppm | png | both")->check(CLI::IsMember({"ppm", "png", "both"}));
  envc->add_option("--velocity-mode", env_velocity, "bounded | fixed | free")
      ->check(CLI::IsMember({"bounded", "fixed", "free"}));
  envc->add_option("--out", env_out, "output directory");

  std::string report_dir;
  auto* report = app.add_subcommand("report", "regenerate reports of a sweep directory");
  report->add_option("--dir", report_dir, "sweep output directory")->required();

  int port = 8090, idle = 10;
  std::string address = "127.0.0.1", checkpoint;
  auto* serve = app.add_subcommand("serve", "interactive WebSocket session service");
  serve->add_option("--port", port, "TCP port")->check(CLI::Range(0, 65535));
  serve->add_option("--address", address, "bind address");
  serve->add_option("--checkpoint", checkpoint, "gate checkpoint for live confidence readout");
  serve->add_option("--idle-minutes", idle, "session idle timeout")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(run_flags, run_seed, run_out, run_manifest);
    if (*sweep)
      return cmd_sweep(sweep_flags, sweep_ks, sweep_depths, seed_list(sweep_seed_list, sweep_seeds), workers, resume,
                       sweep_out);
    if (*envc) return cmd_env(demand, env_steps, env_seed, env_format, env_velocity, env_out);
    if (*report) return cmd_report(report_dir);
    if (*serve) return cmd_serve(static_cast<unsigned short>(port), address, checkpoint, idle);
  } catch (const UsageFailure& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DomainError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
