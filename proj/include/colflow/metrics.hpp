#pragma once

// Job records, the throughput formulas, and the metrics/report files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "colflow/executor.hpp"

namespace colflow {

struct JobRecord {
  std::uint64_t id = 0;
  std::string worker;
  std::uint64_t events = 0;
  double t = 0.0;       // whole job, seconds
  double t_loop = 0.0;  // event loop only
  std::uint64_t bytes_read = 0;
  std::uint32_t attempt = 1;
  std::uint64_t peak_buffer_bytes = 0;
};

JobRecord to_record(const TaskOutcome& o);
std::vector<JobRecord> to_records(const ExecutionReport& r);

// sum(events) / sum(t), or sum(t_loop) when use_loop_time.
double job_rate(std::span<const JobRecord> records, bool use_loop_time = false);
double overall_rate(std::uint64_t total_events, double wall_seconds);

struct RunMetrics {
  std::string run_id;
  std::string mode;   // "legacy" or "new"
  std::string phase;  // "pre", "post" or "total"
  double overall_time_s = 0.0;
  double overall_rate_hz = 0.0;
  double job_rate_hz = 0.0;
  double job_loop_rate_hz = 0.0;
  std::uint64_t network_read_bytes = 0;
  std::uint64_t total_events = 0;
  std::size_t n_jobs = 0;
  // Largest engine batch buffer of any job; a memory proxy, not RSS.
  std::uint64_t peak_buffer_bytes = 0;
};

// network_read adds `extra_bytes` (reads made outside the jobs, such as the
// planner opening files) to the jobs' bytes.
RunMetrics aggregate(std::string run_id, std::string mode, std::string phase, std::span<const JobRecord> records,
                     double wall_seconds, std::uint64_t extra_bytes = 0);

// The header is written when the file is new or empty.
void append_metrics_csv(const std::filesystem::path& path, std::span<const RunMetrics> rows);
std::vector<RunMetrics> read_metrics_csv(const std::filesystem::path& path);

struct JobCsvExtra {
  std::string phase;
  std::size_t passes = 1;
};
// tasks.csv columns, plus phase and passes when `extra` is given.
void append_jobs_csv(const std::filesystem::path& path, std::span<const JobRecord> records,
                     const std::optional<JobCsvExtra>& extra = std::nullopt);

// Mean with the maximum semi-dispersion (max - min) / 2 as its error.
struct Estimate {
  double mean = 0.0;
  double error = 0.0;
  std::size_t n = 0;
};
Estimate estimate(std::span<const double> values);

double speedup(double t_legacy, double t_new);
double time_reduction(double t_legacy, double t_new);

struct ScenarioSummary {
  std::string mode;
  std::string phase;
  Estimate overall_time_s;
  Estimate overall_rate_hz;
  Estimate job_rate_hz;
  Estimate job_loop_rate_hz;
  Estimate network_read_bytes;
  Estimate total_events;
  Estimate n_jobs;
  Estimate peak_buffer_bytes;
};

struct Ratio {
  std::string phase;
  Estimate speedup;
  Estimate reduction;      // fraction, 0.84 = 84 %
  std::optional<double> network_ratio;  // legacy / new
};

struct Report {
  std::vector<ScenarioSummary> scenarios;  // legacy before new, pre, post, total
  std::vector<Ratio> ratios;               // per phase present in both modes, then total
};

// Groups rows by (mode, phase) over repeats. When a mode has no "total"
// rows but has both pre and post, its total time is the sum of the phases.
Report build_report(std::span<const RunMetrics> rows);
std::string render_report(const Report& report);

}  // namespace colflow
