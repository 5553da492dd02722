#pragma once

#include <json.hpp>

#include <atomic>
#include <exception>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "gatelab/analysis.hpp"
#include "gatelab/artifacts.hpp"
#include "gatelab/training.hpp"

namespace gatelab {

struct SweepSpec {
  TrainRunConfig base;
  std::vector<int> k_values{1, 2, 4, 8, 16, 32};
  std::vector<int> depths{2};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int workers = 1;
  bool resume = false;

  [[nodiscard]] std::vector<TrainRunConfig> jobs() const {
    std::vector<TrainRunConfig> out;
    for (int nl : depths)
      for (int k : k_values)
        for (auto s : seeds) {
          TrainRunConfig c = base;
          c.gate.k = k;
          c.gate.n_layers = nl;
          c.seed = s;
          out.push_back(c);
        }
    return out;
  }

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"base", base.to_json(false)}, {"k_values", k_values}, {"depths", depths}, {"seeds", seeds}};
  }
};

enum class JobStatus { completed, resumed, failed };

struct JobOutcome {
  TrainRunConfig config;
  JobStatus status = JobStatus::failed;
  std::string error;
  std::vector<EpochRecord> records;
  std::vector<EpisodePoint> episodes;
  fs::path dir;
};

inline fs::path job_dir(const fs::path& root, const TrainRunConfig& c) {
  return root / "runs" / (c.hash() + "-s" + std::to_string(c.seed));
}

/// A run directory counts as complete when its completion marker names the
/// same configuration hash and the records file still has the recorded checksum.
inline bool job_complete(const fs::path& dir, const TrainRunConfig& c) {
  const auto marker = dir / "complete.json";
  if (!fs::exists(marker) || !fs::exists(dir / "records.csv") || !fs::exists(dir / "episodes.csv")) return false;
  try {
    const auto j = nlohmann::json::parse(read_text(marker));
    return j.value("config_hash", std::string()) == c.hash() && j.value("seed", std::uint64_t{~0ULL}) == c.seed &&
           j.value("records_checksum", std::string()) == file_checksum(dir / "records.csv");
  } catch (const std::exception&) {
    return false;
  }
}

/// Trains one job into its directory: manifest first, then artifacts, then
/// the completion marker.
inline JobOutcome run_job(const fs::path& root, const TrainRunConfig& c, bool resume) {
  JobOutcome out;
  out.config = c;
  out.dir = job_dir(root, c);
  if (resume && job_complete(out.dir, c)) {
    out.records = parse_records_csv(read_text(out.dir / "records.csv"));
    out.episodes = parse_episodes_csv(read_text(out.dir / "episodes.csv"));
    out.status = JobStatus::resumed;
    return out;
  }
  fs::remove(out.dir / "complete.json");
  Manifest m;
  m.command = "run";
  m.config = c.to_json();
  m.seeds = {c.seed};
  m.output_dir = out.dir.string();
  m.started = utc_timestamp();
  m.write(out.dir);
  const RunResult res = train(c);
  m.checksums = write_run_artifacts(out.dir, res);
  m.finished = utc_timestamp();
  m.write(out.dir);
  write_text(out.dir / "complete.json",
             nlohmann::json{{"config_hash", c.hash()},
                            {"seed", c.seed},
                            {"records_checksum", m.checksums["records.csv"]}}
                     .dump() +
                 "\n");
  out.records = res.records;
  out.episodes = res.episodes;
  out.status = JobStatus::completed;
  return out;
}

/// Runs `fn(i)` for i in [0, n) on a pool of worker threads.
inline void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  const int w = std::max(1, std::min<int>(workers, static_cast<int>(n)));
  std::vector<std::thread> pool;
  for (int t = 1; t < w; ++t) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
}

struct SweepOutcome {
  std::vector<JobOutcome> jobs;
  int failed = 0;
  int resumed = 0;
};

inline SweepOutcome run_sweep(const SweepSpec& spec, const fs::path& root,
                              const std::function<void(const JobOutcome&)>& on_done = {}) {
  const auto cfgs = spec.jobs();
  for (const auto& c : cfgs) c.validate();
  SweepOutcome out;
  out.jobs.resize(cfgs.size());
  std::mutex mu;
  parallel_for(cfgs.size(), spec.workers, [&](std::size_t i) {
    JobOutcome o;
    try {
      o = run_job(root, cfgs[i], spec.resume);
    } catch (const std::exception& e) {
      o.config = cfgs[i];
      o.status = JobStatus::failed;
      o.error = e.what();
      o.dir = job_dir(root, cfgs[i]);
    }
    std::lock_guard lock(mu);
    out.jobs[i] = std::move(o);
    if (on_done) on_done(out.jobs[i]);
  });
  for (const auto& j : out.jobs) {
    out.failed += j.status == JobStatus::failed;
    out.resumed += j.status == JobStatus::resumed;
  }
  return out;
}

/// Aggregated products of a sweep.
struct SweepAggregate {
  std::map<std::pair<int, int>, PhaseDiagram> mean_diagrams;  // (k, depth)
  std::map<std::pair<int, int>, std::vector<double>> deltas;
  std::map<std::pair<int, int>, std::vector<double>> ranges;
  std::map<std::pair<int, int>, std::vector<double>> residuals;  // EMA-fit residuals per seed
  std::map<std::pair<int, int>, std::vector<double>> c_infinity;
  std::map<std::pair<int, int>, std::vector<double>> grand_means;
};

inline SweepAggregate aggregate(const std::vector<JobOutcome>& jobs, int warm_epochs) {
  SweepAggregate agg;
  std::map<std::pair<int, int>, std::vector<PhaseDiagram>> per;
  for (const auto& j : jobs) {
    if (j.status == JobStatus::failed) continue;
    const auto key = std::make_pair(j.config.gate.k, j.config.gate.n_layers);
    const auto d = diagram_from_records(j.records);
    per[key].push_back(d);
    agg.grand_means[key].push_back(d.grid.mean());
    if (j.config.mode == TrainMode::controllability) {
      const auto f = fit_ema(episode_trace(j.episodes, j.config.td, warm_epochs), j.config.gate.k);
      agg.residuals[key].push_back(f.residual);
      agg.c_infinity[key].push_back(f.c_infinity);
    } else {
      agg.deltas[key].push_back(compute_delta(d));
      agg.ranges[key].push_back(range_delta(d));
    }
  }
  for (auto& [key, ds] : per) agg.mean_diagrams[key] = mean_diagram(ds);
  return agg;
}

/// Writes phase diagrams and reports under `root/report`. Returns the
/// machine-readable summary.
inline nlohmann::json write_sweep_report(const SweepSpec& spec, const std::vector<JobOutcome>& jobs,
                                         const fs::path& root) {
  const auto agg = aggregate(jobs, spec.base.schedule.warm_epochs);
  const fs::path rep = root / "report";
  fs::create_directories(rep);
  nlohmann::json summary;
  summary["mode"] = to_string(spec.base.mode);
  summary["diagrams"] = nlohmann::json::array();
  for (const auto& [key, d] : agg.mean_diagrams) {
    const std::string stem = "phase_k" + std::to_string(key.first) + "_L" + std::to_string(key.second);
    write_text(rep / (stem + ".csv"), diagram_csv(d));
    write_text(rep / (stem + ".json"), diagram_json(d).dump() + "\n");
    summary["diagrams"].push_back(stem);
  }
  std::string md;
  if (spec.base.mode == TrainMode::controllability) {
    md += "| k | depth | EMA residual (seed mean) | c_inf (seed mean) | seeds |\n|---|---|---|---|---|\n";
    summary["ema_fits"] = nlohmann::json::array();
    for (const auto& [key, rs] : agg.residuals) {
      const auto& ci = agg.c_infinity.at(key);
      md += "| " + std::to_string(key.first) + " | " + std::to_string(key.second) + " | " + fmt(mean_of(rs)) + " | " +
            fmt(mean_of(ci)) + " | " + std::to_string(rs.size()) + " |\n";
      summary["ema_fits"].push_back(
          {{"k", key.first}, {"n_layers", key.second}, {"residual", mean_of(rs)}, {"c_infinity", mean_of(ci)}});
    }
  } else {
    for (int nl : spec.depths) {
      std::vector<SweepInput> in;
      for (int k : spec.k_values) {
        const auto key = std::make_pair(k, nl);
        if (!agg.deltas.count(key)) continue;
        in.push_back({k, agg.deltas.at(key), agg.ranges.at(key)});
      }
      const auto sr = sweep_report(in, spec.k_values);
      md += "## depth " + std::to_string(nl) + "\n\n" + report_markdown(sr) + "\n";
      summary["k_sweep"][std::to_string(nl)] = report_json(sr);
    }
    for (int k : spec.k_values) {
      std::map<int, std::vector<double>> by_depth;
      for (int nl : spec.depths)
        if (agg.deltas.count({k, nl})) by_depth[nl] = agg.deltas.at({k, nl});
      if (by_depth.size() < 2) continue;
      const auto dr = depth_report(by_depth);
      md += "## depth ablation at k = " + std::to_string(k) + "\n\n" + depth_markdown(dr) + "\n";
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& r : dr.rows)
        rows.push_back({{"n_layers", r.n_layers}, {"delta", r.delta}, {"delta_sd", r.delta_sd}});
      summary["depth"][std::to_string(k)] = {{"rows", rows}, {"plateau", dr.plateau}, {"depth_helps", dr.depth_helps}};
    }
    if (spec.base.mode == TrainMode::ema_ablation) {
      for (const auto& [key, gm] : agg.grand_means)
        summary["grand_mean"][std::to_string(key.first)] = mean_of(gm);
    }
  }
  int failed = 0;
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& j : jobs)
    if (j.status == JobStatus::failed) {
      ++failed;
      gaps.push_back({{"k", j.config.gate.k}, {"n_layers", j.config.gate.n_layers}, {"seed", j.config.seed},
                      {"error", j.error}});
    }
  if (failed) {
    md += "\n## gaps\n\n";
    for (const auto& g : gaps)
      md += "- k=" + std::to_string(g["k"].get<int>()) + " depth=" + std::to_string(g["n_layers"].get<int>()) +
            " seed=" + std::to_string(g["seed"].get<std::uint64_t>()) + ": " + g["error"].get<std::string>() + "\n";
  }
  summary["failed_jobs"] = gaps;
  write_text(rep / "report.md", md);
  write_text(rep / "report.json", summary.dump(2) + "\n");
  return summary;
}

/// Reloads every job of a sweep from disk (used by `report`).
inline std::vector<JobOutcome> load_sweep(const SweepSpec& spec, const fs::path& root) {
  std::vector<JobOutcome> out;
  for (const auto& c : spec.jobs()) {
    JobOutcome o;
    o.config = c;
    o.dir = job_dir(root, c);
    if (job_complete(o.dir, c)) {
      o.records = parse_records_csv(read_text(o.dir / "records.csv"));
      o.episodes = parse_episodes_csv(read_text(o.dir / "episodes.csv"));
      o.status = JobStatus::resumed;
    } else {
      o.status = JobStatus::failed;
      o.error = "run missing or incomplete";
    }
    out.push_back(std::move(o));
  }
  return out;
}

inline SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  SweepSpec s;
  s.base = TrainRunConfig::from_json(j.at("base"));
  s.k_values = j.at("k_values").get<std::vector<int>>();
  s.depths = j.at("depths").get<std::vector<int>>();
  s.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  return s;
}

}  // namespace gatelab
