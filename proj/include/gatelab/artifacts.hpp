#pragma once

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "gatelab/analysis.hpp"
#include "gatelab/checkpoint.hpp"
#include "gatelab/errors.hpp"
#include "gatelab/rng.hpp"
#include "gatelab/training.hpp"

#ifndef GATELAB_GIT_DESCRIBE
#define GATELAB_GIT_DESCRIBE "unknown"
#endif

namespace gatelab {

namespace fs = std::filesystem;

inline constexpr const char* kRecordsHeader = "epoch,td,k,n_layers,seed,mean_confidence,loss,tau";

/// Shortest round-trip representation, so CSV values re-read exactly.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string records_csv(const std::vector<EpochRecord>& recs) {
  std::string out = std::string(kRecordsHeader) + "\n";
  for (const auto& r : recs) {
    out += std::to_string(r.epoch) + "," + num(r.td) + "," + std::to_string(r.k) + "," + std::to_string(r.n_layers) +
           "," + std::to_string(r.seed) + "," + num(r.mean_confidence) + "," + num(r.loss) + "," + num(r.tau) + "\n";
  }
  return out;
}

inline std::vector<EpochRecord> parse_records_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kRecordsHeader) throw ConfigError("unexpected records CSV header");
  std::vector<EpochRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[8];
    for (auto& s : f)
      if (!std::getline(ls, s, ',')) throw ConfigError("malformed records CSV line: " + line);
    EpochRecord r;
    r.epoch = std::stoi(f[0]);
    r.td = std::stod(f[1]);
    r.k = std::stoi(f[2]);
    r.n_layers = std::stoi(f[3]);
    r.seed = std::stoull(f[4]);
    r.mean_confidence = std::stod(f[5]);
    r.loss = std::stod(f[6]);
    r.tau = std::stod(f[7]);
    out.push_back(r);
  }
  return out;
}

inline constexpr const char* kEpisodesHeader = "epoch,episode,td,mean_confidence";

inline std::string episodes_csv(const std::vector<EpisodePoint>& pts) {
  std::string out = std::string(kEpisodesHeader) + "\n";
  for (const auto& p : pts)
    out += std::to_string(p.epoch) + "," + std::to_string(p.episode) + "," + num(p.td) + "," +
           num(p.mean_confidence) + "\n";
  return out;
}

inline std::vector<EpisodePoint> parse_episodes_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kEpisodesHeader) throw ConfigError("unexpected episodes CSV header");
  std::vector<EpisodePoint> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& x : f)
      if (!std::getline(ls, x, ',')) throw ConfigError("malformed episodes CSV line: " + line);
    out.push_back({std::stoi(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return out;
}

inline std::string read_text(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read: " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write: " + p.string());
  os << text;
  if (!os) throw std::runtime_error("write failed: " + p.string());
}

inline std::string checksum(const std::string& bytes) {
  std::ostringstream os;
  os << "fnv1a64:" << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return os.str();
}

inline std::string file_checksum(const fs::path& p) { return checksum(read_text(p)); }

inline std::string traces_jsonl(const std::vector<TraceRecord>& traces) {
  std::string out;
  for (const auto& t : traces) {
    nlohmann::json j{{"epoch", t.epoch}, {"episode", t.episode}, {"t", t.t},       {"td", t.td},
                     {"c_t", t.c},       {"alpha", t.alpha},     {"committed_slot", t.committed_slot == 0 ? "cursor" : "goal"}};
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

/// Run manifest. Written before training (without end time and checksums)
/// and rewritten when artifacts are complete.
struct Manifest {
  std::string command;
  nlohmann::json config;
  std::vector<std::uint64_t> seeds;
  std::string output_dir;
  std::string code_version = GATELAB_GIT_DESCRIBE;
  std::string started;
  std::string finished;
  nlohmann::json checksums = nlohmann::json::object();

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"command", command},       {"config", config},   {"seeds", seeds},     {"output_dir", output_dir},
            {"code_version", code_version}, {"started", started}, {"finished", finished}, {"checksums", checksums}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    m.command = j.value("command", std::string());
    m.config = j.value("config", nlohmann::json::object());
    m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    m.output_dir = j.value("output_dir", std::string());
    m.code_version = j.value("code_version", std::string());
    m.started = j.value("started", std::string());
    m.finished = j.value("finished", std::string());
    m.checksums = j.value("checksums", nlohmann::json::object());
    return m;
  }

  void write(const fs::path& dir) const { write_text(dir / "manifest.json", to_json().dump(2) + "\n"); }
};

/// Phase-diagram export rows: epoch,td,mean_confidence.
inline std::string diagram_csv(const PhaseDiagram& d) {
  std::string out = "epoch,td,mean_confidence\n";
  for (Eigen::Index e = 0; e < d.grid.rows(); ++e)
    for (Eigen::Index c = 0; c < d.grid.cols(); ++c)
      out += std::to_string(e) + "," + num(d.td[static_cast<std::size_t>(c)]) + "," + num(d.grid(e, c)) + "\n";
  return out;
}

/// Writes records, traces and checkpoints of one finished run into `dir`
/// and returns their checksums.
inline nlohmann::json write_run_artifacts(const fs::path& dir, const RunResult& res) {
  fs::create_directories(dir);
  nlohmann::json sums = nlohmann::json::object();
  const auto csv = records_csv(res.records);
  write_text(dir / "records.csv", csv);
  sums["records.csv"] = checksum(csv);
  const auto eps = episodes_csv(res.episodes);
  write_text(dir / "episodes.csv", eps);
  sums["episodes.csv"] = checksum(eps);
  const nlohmann::json meta{{"config", res.config.to_json()}};
  const auto ckpt = params_to_json(res.final_params, meta).dump() + "\n";
  write_text(dir / "checkpoint.json", ckpt);
  sums["checkpoint.json"] = checksum(ckpt);
  if (res.config.record_traces) {
    const auto tr = traces_jsonl(res.traces);
    write_text(dir / "traces.jsonl", tr);
    sums["traces.jsonl"] = checksum(tr);
  }
  const auto pd = diagram_csv(diagram_from_records(res.records));
  write_text(dir / "phase_diagram.csv", pd);
  sums["phase_diagram.csv"] = checksum(pd);
  return sums;
}

}  // namespace gatelab
