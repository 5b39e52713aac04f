#pragma once

// The batch baseline: one job per file, a payload download before each
// job, one full read per topology variation, per-job result files and a
// separate merge step.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "colflow/executor.hpp"
#include "colflow/graph.hpp"
#include "colflow/metrics.hpp"

namespace colflow {

enum class Phase { Preselection, Postselection };
std::string_view phase_name(Phase p);  // "pre" / "post"

struct LegacyOptions {
  std::filesystem::path out_dir;
  // Relative to the data root when the workers use a data server.
  std::string payload_uri = "payload.bin";
  std::uint64_t payload_bytes = 0;
  // 0 means every job may run at once.
  std::size_t parallel_jobs = 0;
};

struct LegacyRunReport {
  Phase phase = Phase::Preselection;
  std::vector<TaskOutcome> jobs;
  std::vector<std::filesystem::path> result_files;
  // Skim part files in job order (preselection only), relative to the
  // workers' write root.
  std::vector<std::string> skim_files;
  std::size_t passes = 1;  // reads per job
  double jobs_seconds = 0.0;
  double merge_seconds = 0.0;
  double wall_seconds = 0.0;  // jobs + result files + merge
  PartialResult merged;
};

// Reads per postselection job: nominal plus one per topology variation.
std::size_t legacy_pass_count(const PipelineSpec& spec);

// One task per file, ids 1..n.
std::vector<TaskSpec> legacy_jobs(const PipelineSpec& spec, std::span<const std::string> files, Phase phase,
                                  const LegacyOptions& opts);

LegacyRunReport run_legacy(Executor& exec, const PipelineSpec& spec, std::span<const std::string> files,
                           Phase phase, const LegacyOptions& opts);

LegacyRunReport run_legacy_preselection(Executor& exec, const PipelineSpec& spec,
                                        std::span<const std::string> files, const LegacyOptions& opts);
LegacyRunReport run_legacy_postselection(Executor& exec, const PipelineSpec& spec,
                                         std::span<const std::string> skims, const LegacyOptions& opts);

// Result file: "CFRS", u16 version, u32-prefixed graph identity, PartialResult.
void write_result_file(const std::filesystem::path& path, const std::string& identity, const PartialResult& p);
PartialResult read_result_file(const std::filesystem::path& path, std::string* identity = nullptr);
// Histogram-merges every file; all must carry the same graph identity.
PartialResult merge_outputs(std::span<const std::filesystem::path> files);

}  // namespace colflow
