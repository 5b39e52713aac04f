#pragma once

// Task execution shared by workers and the in-process driver, and the
// Executor interface the drivers submit through.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "colflow/engine.hpp"
#include "colflow/graph.hpp"
#include "colflow/proto.hpp"

namespace colflow {

using TaskSpec = proto::Task;

struct TaskEnv {
  // host:port of a data server. Relative URIs resolve against it; empty
  // means relative URIs are local paths.
  std::string data_address;
  std::filesystem::path write_root = ".";
  std::string worker_name = "local";
};

// Rewrites a relative URI to colsrv://<data_address>/<uri>.
std::string resolve_uri(const std::string& uri, const std::string& data_address);

// Downloads the payload, opens the range's file, builds the graph against
// its schema and runs. Payload bytes count in bytes_read and t_total.
PartialResult execute_task(const PipelineSpec& spec, const TaskSpec& task, const TaskEnv& env);

struct TaskOutcome {
  TaskSpec task;
  std::string worker;
  std::uint32_t attempt = 1;
  PartialResult partial;
};

struct ExecuteOptions {
  // Upper bound on concurrently submitted tasks; 0 means no bound.
  std::size_t parallel_jobs = 0;
};

struct ExecutionReport {
  std::vector<TaskOutcome> outcomes;  // sorted by task id
  PartialResult merged;
  double wall_seconds = 0.0;
};

class Executor {
 public:
  virtual ~Executor() = default;
  // Runs every task; throws when any task fails for good.
  virtual ExecutionReport execute(const PipelineSpec& spec, const std::vector<TaskSpec>& tasks,
                                  const ExecuteOptions& opts = {}) = 0;
  // Number of workers (or threads) tasks are spread over.
  virtual std::size_t workers() = 0;
};

// Thread pool in this process.
class LocalExecutor final : public Executor {
 public:
  LocalExecutor(std::size_t nthreads, TaskEnv env);
  ExecutionReport execute(const PipelineSpec& spec, const std::vector<TaskSpec>& tasks,
                          const ExecuteOptions& opts = {}) override;
  std::size_t workers() override { return nthreads_; }

 private:
  std::size_t nthreads_;
  TaskEnv env_;
};

}  // namespace colflow
