#include "colflow/executor.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

#include "colflow/colstore.hpp"
#include "colflow/data_server.hpp"
#include "colflow/error.hpp"

namespace colflow {

using Clock = std::chrono::steady_clock;

std::string resolve_uri(const std::string& uri, const std::string& data_address) {
  if (data_address.empty() || uri.rfind("colsrv://", 0) == 0 || std::filesystem::path(uri).is_absolute()) {
    return uri;
  }
  return "colsrv://" + data_address + "/" + uri;
}

PartialResult execute_task(const PipelineSpec& spec, const TaskSpec& task, const TaskEnv& env) {
  auto t0 = Clock::now();
  std::uint64_t payload = 0;
  if (task.payload_bytes > 0) {
    if (task.payload_uri.empty()) throw ValidationError("task has payload_bytes but no payload_uri");
    payload = download(resolve_uri(task.payload_uri, env.data_address), task.payload_bytes);
  }
  auto ds = Dataset::open(resolve_uri(task.range.uri, env.data_address));
  const auto opened = ds.account();
  auto graph = build(spec, ds.info().schema);
  RangeOptions opts{env.write_root, std::to_string(task.task_id)};
  const auto end = task.range.end == kToEnd ? ds.info().total_entries : task.range.end;
  auto out = run_range(graph, ds, task.range.begin, end, task.mode, opts);
  out.bytes_read += opened.bytes_read + payload;
  out.read_calls += opened.read_calls;
  out.t_total = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

LocalExecutor::LocalExecutor(std::size_t nthreads, TaskEnv env) : nthreads_(nthreads), env_(std::move(env)) {
  if (nthreads_ < 1) throw ValidationError("LocalExecutor needs at least one thread");
}

ExecutionReport LocalExecutor::execute(const PipelineSpec& spec, const std::vector<TaskSpec>& tasks,
                                       const ExecuteOptions& opts) {
  auto t0 = Clock::now();
  std::size_t nthreads = nthreads_;
  if (opts.parallel_jobs > 0) nthreads = std::min(nthreads, opts.parallel_jobs);
  nthreads = std::max<std::size_t>(1, std::min(nthreads, tasks.size()));

  std::vector<TaskOutcome> outcomes(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size() && !failed; i = next++) {
      try {
        outcomes[i] = TaskOutcome{tasks[i], env_.worker_name, tasks[i].attempt, execute_task(spec, tasks[i], env_)};
      } catch (...) {
        errors[i] = std::current_exception();
        failed = true;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < nthreads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const ValidationError&) {
      throw;
    } catch (const std::exception& e) {
      throw Error("task " + std::to_string(tasks[i].task_id) + " failed: " + e.what());
    }
  }

  ExecutionReport report;
  std::sort(outcomes.begin(), outcomes.end(),
            [](const TaskOutcome& a, const TaskOutcome& b) { return a.task.task_id < b.task.task_id; });
  for (const auto& o : outcomes) report.merged.merge(o.partial);
  report.outcomes = std::move(outcomes);
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

}  // namespace colflow
