#pragma once

// Synthetic dataset generation, the self-hosted mini facility and the
// legacy-versus-new benchmark scenarios.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "colflow/cluster.hpp"
#include "colflow/colstore.hpp"
#include "colflow/data_server.hpp"
#include "colflow/graph.hpp"
#include "colflow/legacy.hpp"
#include "colflow/metrics.hpp"

namespace colflow {

struct GenConfig {
  std::size_t n_files = 8;
  std::uint64_t events_per_file = 100000;
  std::uint64_t cluster_size = 10000;
  std::uint64_t seed = 42;
};

struct Manifest {
  std::vector<std::string> files;  // relative to the manifest's directory
  std::vector<std::uint64_t> entries;
  std::uint64_t total_entries = 0;
  GenConfig config;
};

// event_weight F64, MET_pt F64, nJet I64, Jet_pt/Jet_eta/Jet_phi VEC_F64.
std::vector<ColumnSchema> bench_schema();

// Writes data_NNN.col files and manifest.json into out_dir. Output bytes
// depend only on the config.
Manifest gen(const GenConfig& config, const std::filesystem::path& out_dir);
Manifest read_manifest(const std::filesystem::path& dir);

// The shipped specs (also in specs/*.json).
const std::string& default_preselection_json();
const std::string& default_postselection_json();
PipelineSpec default_preselection_spec();
PipelineSpec default_postselection_spec();

// Writes `bytes` deterministic filler bytes to path unless it already has
// that size.
void ensure_payload(const std::filesystem::path& path, std::uint64_t bytes);

// Largest relative difference between two results over every universe,
// histogram bin (sumw and sumw2) and scalar. Infinity when the universe or
// result sets differ.
double max_relative_difference(const PartialResult& a, const PartialResult& b);

struct FacilityOptions {
  std::size_t workers = 4;
  std::uint32_t slots = 1;
  // Spawn `exe worker ...` child processes instead of worker threads.
  bool processes = false;
  std::filesystem::path exe;
  std::chrono::milliseconds heartbeat{2000};
  std::chrono::milliseconds loss_timeout{6000};
  std::uint32_t max_retries = 2;
  std::chrono::milliseconds task_delay{0};
};

// A data server over `root`, a scheduler and workers on localhost. Workers
// write snapshot parts under `root`, so skims are served like inputs.
class Facility {
 public:
  Facility(std::filesystem::path root, FacilityOptions opts);
  Facility(const Facility&) = delete;
  Facility& operator=(const Facility&) = delete;
  ~Facility();

  const std::filesystem::path& root() const { return root_; }
  DataServer& data() { return *data_; }
  Scheduler& scheduler() { return *scheduler_; }
  std::string data_address() const { return data_->address().str(); }
  net::Address scheduler_address() const { return scheduler_->address(); }
  // Child process ids when workers are processes.
  const std::vector<int>& worker_pids() const { return pids_; }
  // Stops the scheduler (which shuts the workers down) and the data server.
  void shutdown();

 private:
  std::filesystem::path root_;
  FacilityOptions opts_;
  std::unique_ptr<DataServer> data_;
  std::unique_ptr<Scheduler> scheduler_;
  std::vector<std::thread> threads_;
  std::vector<int> pids_;
  bool down_ = false;
};

struct BenchConfig {
  std::filesystem::path data_dir;  // generated here when no manifest exists
  std::filesystem::path out_dir;
  GenConfig gen;
  FacilityOptions facility;
  std::size_t factor = 3;
  std::size_t repeats = 3;
  std::uint64_t payload_bytes = 1 << 20;
  std::size_t parallel_jobs = 0;
  std::optional<PipelineSpec> pre;
  std::optional<PipelineSpec> post;
};

struct ScenarioRun {
  std::size_t repeat = 0;
  std::string mode;   // legacy / new
  std::string phase;  // pre / post
  RunMetrics metrics;
  std::vector<JobRecord> jobs;
  PartialResult merged;
  std::vector<std::string> skim_files;
  std::uint64_t chunk_bytes = 0;
  std::uint64_t client_bytes = 0;  // jobs plus planner
  std::uint64_t served_bytes = 0;  // data-server delta
  std::size_t passes = 1;
};

struct BenchResult {
  std::vector<ScenarioRun> runs;
  Report report;
  std::string rendered;
  // Worst legacy/new difference over repeats, per phase.
  double max_diff_pre = 0.0;
  double max_diff_post = 0.0;
  bool byte_closure = true;
};

BenchResult bench(const BenchConfig& config);

}  // namespace colflow
