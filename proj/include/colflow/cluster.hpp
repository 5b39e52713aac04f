#pragma once

// Distributed runtime: a push scheduler, the worker daemon and the client
// side executor that submits a run to the scheduler.
//
// Client session on the scheduler port:
//   REGISTER{name, slots=0}  -> REGISTER{"scheduler", live worker count}
//   GRAPH, TASK...           -> one RESULT per finished task (task ids as sent)
//   SHUTDOWN (no more tasks) -> RESULT{task_id=0} carrying the merged result
// A FAIL ends the run: task_id names the task that ran out of attempts, or
// is 0 when the run could not start.

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "colflow/executor.hpp"
#include "colflow/net.hpp"

namespace colflow {

struct SchedulerOptions {
  net::Address listen{"127.0.0.1", 0};
  // Workers silent for longer than this are dropped and their tasks requeued.
  std::chrono::milliseconds loss_timeout{6000};
  std::uint32_t max_retries = 2;
  // How long a run waits with no registered workers before failing.
  std::chrono::milliseconds startup_timeout{30000};
};

struct SchedulerEvent {
  enum class Kind { Dispatch, Result, Duplicate, Fail, WorkerLost };
  Kind kind;
  double t = 0.0;  // seconds since scheduler start
  std::uint64_t task_id = 0;  // client-side id
  std::string worker;
  std::uint32_t attempt = 0;
};

class Scheduler {
 public:
  explicit Scheduler(SchedulerOptions opts);
  Scheduler(const Scheduler&) = delete;
  Scheduler& operator=(const Scheduler&) = delete;
  ~Scheduler();

  std::uint16_t port() const;
  net::Address address() const;
  std::size_t worker_count() const;
  bool wait_for_workers(std::size_t n, std::chrono::milliseconds timeout) const;
  std::vector<SchedulerEvent> events() const;
  // Sends SHUTDOWN to every worker and stops serving.
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct WorkerOptions {
  net::Address scheduler;
  std::uint32_t slots = 1;
  std::string name;  // defaults to worker-<pid>-<n>
  TaskEnv env;
  std::chrono::milliseconds heartbeat{2000};
  // Sleep before each task; lets tests catch tasks in flight.
  std::chrono::milliseconds task_delay{0};
  std::chrono::milliseconds connect_timeout{10000};
};

// Serves tasks until SHUTDOWN (returns 0) or until the scheduler connection
// is lost (returns 1).
int run_worker(const WorkerOptions& opts);

class ClusterExecutor final : public Executor {
 public:
  explicit ClusterExecutor(net::Address scheduler) : scheduler_(std::move(scheduler)) {}
  ExecutionReport execute(const PipelineSpec& spec, const std::vector<TaskSpec>& tasks,
                          const ExecuteOptions& opts = {}) override;
  std::size_t workers() override;

 private:
  net::Address scheduler_;
};

struct DistributedRun {
  ExecutionReport report;
  // Metadata the planner read to open the files.
  std::uint64_t planner_bytes = 0;
  // From submission (planning included) to the merged result.
  double wall_seconds = 0.0;
};

// Plans spec.dataset into factor x workers ranges and runs them single-pass.
// Relative dataset URIs resolve against `data_address`.
DistributedRun run_distributed(Executor& exec, const PipelineSpec& spec, const std::string& data_address,
                               std::size_t factor = 3);

}  // namespace colflow
