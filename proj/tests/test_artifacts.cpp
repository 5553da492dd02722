#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include "gatelab/artifacts.hpp"
#include "gatelab/checkpoint.hpp"
#include "gatelab/sweep.hpp"

using namespace gatelab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("gatelab_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

TrainRunConfig small_config(TrainMode mode) {
  TrainRunConfig c;
  c.mode = mode;
  c.gate.k = 4;
  c.schedule.total_epochs = 4;
  c.schedule.warm_epochs = 1;
  c.episodes_per_epoch = 2;
  return c;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(GATELAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Artifacts, RecordsCsvRoundTripsExactly) {
  const auto res = train(small_config(TrainMode::arbitration));
  const auto text = records_csv(res.records);
  const auto back = parse_records_csv(text);
  ASSERT_EQ(back.size(), res.records.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].epoch, res.records[i].epoch);
    EXPECT_EQ(back[i].td, res.records[i].td);
    EXPECT_EQ(back[i].mean_confidence, res.records[i].mean_confidence);
    EXPECT_EQ(back[i].loss, res.records[i].loss);
    EXPECT_EQ(back[i].tau, res.records[i].tau);
  }
  EXPECT_EQ(records_csv(back), text);
  EXPECT_THROW(parse_records_csv("bogus\n1,2\n"), ConfigError);
}

TEST(Artifacts, EpisodesCsvRoundTripsExactly) {
  const auto res = train(small_config(TrainMode::controllability));
  const auto text = episodes_csv(res.episodes);
  const auto back = parse_episodes_csv(text);
  ASSERT_EQ(back.size(), res.episodes.size());
  EXPECT_EQ(episodes_csv(back), text);
  EXPECT_THROW(parse_episodes_csv("epoch\n"), ConfigError);
}

TEST(Artifacts, CheckpointRoundTripsParameters) {
  const auto dir = scratch("ckpt");
  const auto res = train(small_config(TrainMode::arbitration));
  save_checkpoint((dir / "c.json").string(), res.final_params, {{"note", "x"}});
  nlohmann::json meta;
  const auto back = load_checkpoint((dir / "c.json").string(), &meta);
  EXPECT_EQ(back.flatten(), res.final_params.flatten());
  EXPECT_EQ(meta["note"], "x");
  fs::remove_all(dir);
}

TEST(Artifacts, RunDirectoryHasChecksummedFiles) {
  const auto dir = scratch("rundir");
  const auto res = train(small_config(TrainMode::arbitration));
  const auto sums = write_run_artifacts(dir, res);
  for (const char* f : {"records.csv", "episodes.csv", "checkpoint.json", "phase_diagram.csv"}) {
    ASSERT_TRUE(sums.contains(f)) << f;
    EXPECT_EQ(sums[f], file_checksum(dir / f)) << f;
  }
  fs::remove_all(dir);
}

TEST(Sweep, DefaultGridCounts) {
  SweepSpec spec;
  EXPECT_EQ(spec.jobs().size(), 30u);
  EXPECT_EQ(spec.jobs().size() * spec.base.cells().size(), 270u);
  spec.k_values = {32};
  spec.depths = {1, 2, 3};
  EXPECT_EQ(spec.jobs().size(), 15u);
}

TEST(Sweep, ResumeSkipsCompletedRunsAndRegeneratesReport) {
  const auto root = scratch("resume");
  SweepSpec spec;
  spec.base = small_config(TrainMode::arbitration);
  spec.base.schedule.total_epochs = 12;
  spec.k_values = {1, 2};
  spec.seeds = {0, 1};
  spec.workers = 2;
  const auto first = run_sweep(spec, root);
  EXPECT_EQ(first.failed, 0);
  EXPECT_EQ(first.resumed, 0);
  write_sweep_report(spec, first.jobs, root);
  const auto report = read_text(root / "report" / "report.md");
  const auto ckpt_time = fs::last_write_time(job_dir(root, first.jobs[0].config) / "checkpoint.json");

  spec.resume = true;
  fs::remove_all(root / "report");
  const auto second = run_sweep(spec, root);
  EXPECT_EQ(second.resumed, 4);
  for (const auto& j : second.jobs) EXPECT_EQ(j.status, JobStatus::resumed);
  EXPECT_EQ(fs::last_write_time(job_dir(root, first.jobs[0].config) / "checkpoint.json"), ckpt_time);
  for (std::size_t i = 0; i < first.jobs.size(); ++i)
    EXPECT_EQ(records_csv(second.jobs[i].records), records_csv(first.jobs[i].records));
  write_sweep_report(spec, second.jobs, root);
  EXPECT_EQ(read_text(root / "report" / "report.md"), report);
  fs::remove_all(root);
}

TEST(Sweep, TamperedRecordsForceRetraining) {
  const auto root = scratch("tamper");
  SweepSpec spec;
  spec.base = small_config(TrainMode::arbitration);
  spec.base.schedule.total_epochs = 12;
  spec.k_values = {2};
  spec.seeds = {0};
  run_sweep(spec, root);
  const auto dir = job_dir(root, spec.jobs()[0]);
  write_text(dir / "records.csv", read_text(dir / "records.csv") + "\n");
  spec.resume = true;
  const auto again = run_sweep(spec, root);
  EXPECT_EQ(again.jobs[0].status, JobStatus::completed);
  fs::remove_all(root);
}

TEST(Sweep, MissingRunsAreFlaggedInReport) {
  const auto root = scratch("gaps");
  SweepSpec spec;
  spec.base = small_config(TrainMode::arbitration);
  spec.base.schedule.total_epochs = 12;
  spec.k_values = {1, 2};
  spec.seeds = {0};
  run_sweep(spec, root);
  fs::remove_all(job_dir(root, spec.jobs()[1]));
  const auto jobs = load_sweep(spec, root);
  EXPECT_EQ(jobs[1].status, JobStatus::failed);
  write_sweep_report(spec, jobs, root);
  EXPECT_NE(read_text(root / "report" / "report.md").find("missing"), std::string::npos);
  fs::remove_all(root);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli_codes");
  EXPECT_EQ(cli("env --demand 0.5 --steps 20 --seed 1 --out " + (dir / "env").string()), 0);
  int frames = 0;
  for (const auto& e : fs::directory_iterator(dir / "env")) frames += e.path().extension() == ".png";
  EXPECT_EQ(frames, 20);
  EXPECT_TRUE(fs::exists(dir / "env" / "trajectory.jsonl"));
  EXPECT_EQ(cli("env --demand 1.5"), 2);
  EXPECT_EQ(cli("run --mode controllability --td-grid 0,0.5"), 2);
  EXPECT_EQ(cli("run --mode arbitration --td 0.3"), 2);
  EXPECT_EQ(cli("run --no-such-flag"), 2);
  EXPECT_EQ(cli("run --k 0"), 2);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("report --dir " + (dir / "nothing").string()), 2);
  EXPECT_EQ(cli("run --manifest " + (dir / "absent.json").string()), 1);
  fs::remove_all(dir);
}

TEST(Cli, EnvFramesAreStableAcrossRuns) {
  const auto dir = scratch("cli_env");
  ASSERT_EQ(cli("env --demand 0.5 --steps 5 --seed 3 --format png --out " + (dir / "a").string()), 0);
  ASSERT_EQ(cli("env --demand 0.5 --steps 5 --seed 3 --format png --out " + (dir / "b").string()), 0);
  for (const auto& e : fs::directory_iterator(dir / "a"))
    EXPECT_EQ(file_checksum(e.path()), file_checksum(dir / "b" / e.path().filename()));
  fs::remove_all(dir);
}

TEST(Cli, RunIsReproducibleFromManifestAlone) {
  const auto dir = scratch("cli_manifest");
  const std::string flags = "--mode arbitration --k 4 --epochs 4 --warm-epochs 1 --episodes 2 --seed 7";
  ASSERT_EQ(cli("run " + flags + " --out " + (dir / "a").string()), 0);
  ASSERT_EQ(cli("run " + flags + " --out " + (dir / "b").string()), 0);
  ASSERT_EQ(cli("run --manifest " + (dir / "a" / "manifest.json").string() + " --out " + (dir / "c").string()), 0);
  for (const char* f : {"records.csv", "episodes.csv", "checkpoint.json", "phase_diagram.csv"}) {
    EXPECT_EQ(read_text(dir / "a" / f), read_text(dir / "b" / f)) << f;
    EXPECT_EQ(read_text(dir / "a" / f), read_text(dir / "c" / f)) << f;
  }
  const auto m = Manifest::from_json(nlohmann::json::parse(read_text(dir / "a" / "manifest.json")));
  EXPECT_EQ(m.command, "run");
  EXPECT_EQ(m.seeds, std::vector<std::uint64_t>{7});
  EXPECT_EQ(m.checksums["records.csv"], file_checksum(dir / "a" / "records.csv"));
  fs::remove_all(dir);
}

TEST(Cli, FlagsOverrideConfigFile) {
  const auto dir = scratch("cli_config");
  write_text(dir / "run.ini", "[run]\nmode = arbitration\nk = 2\nepochs = 3\nwarm-epochs = 1\nepisodes = 1\nseed = 5\n");
  ASSERT_EQ(cli("--config " + (dir / "run.ini").string() + " run --k 4 --out " + (dir / "r").string()), 0);
  const auto cfg = TrainRunConfig::from_json(
      Manifest::from_json(nlohmann::json::parse(read_text(dir / "r" / "manifest.json"))).config);
  EXPECT_EQ(cfg.gate.k, 4);
  EXPECT_EQ(cfg.schedule.total_epochs, 3);
  EXPECT_EQ(cfg.seed, 5u);
  fs::remove_all(dir);
}

TEST(Cli, SweepThenReport) {
  const auto dir = scratch("cli_sweep");
  const std::string out = (dir / "s").string();
  ASSERT_EQ(cli("sweep --mode arbitration --k-values 1,2 --seeds 1 --epochs 12 --warm-epochs 1 --episodes 1 --out " + out), 0);
  EXPECT_TRUE(fs::exists(dir / "s" / "report" / "report.json"));
  const auto before = read_text(dir / "s" / "report" / "report.md");
  ASSERT_EQ(cli("sweep --mode arbitration --k-values 1,2 --seeds 1 --epochs 12 --warm-epochs 1 --episodes 1 --resume --out " + out), 0);
  ASSERT_EQ(cli("report --dir " + out), 0);
  EXPECT_EQ(read_text(dir / "s" / "report" / "report.md"), before);
  fs::remove_all(dir / "s" / "runs");
  EXPECT_EQ(cli("report --dir " + out), 1);
  fs::remove_all(dir);
}
