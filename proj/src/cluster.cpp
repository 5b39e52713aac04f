#include "colflow/cluster.hpp"

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <thread>

#include "colflow/error.hpp"
#include "colflow/proto.hpp"

namespace colflow {

using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Scheduler

struct Scheduler::Impl {
  struct Conn {
    std::uint64_t id = 0;
    net::Socket sock;
    std::thread reader;
  };
  struct Event {
    std::uint64_t conn = 0;
    std::optional<proto::Message> msg;  // empty: connection closed
    std::string error;
  };
  struct WorkerState {
    std::string name;
    std::uint32_t slots = 1;
    std::set<std::uint64_t> inflight;  // scheduler-wide task ids
    Clock::time_point last_seen;
    std::set<std::uint64_t> graphs;
  };
  struct TaskState {
    proto::Task task;  // task_id rewritten to the scheduler-wide id
    std::uint64_t client_id = 0;
    std::size_t order = 0;
    bool done = false;
  };
  struct Run {
    std::uint64_t client = 0;
    std::uint64_t graph_id = 0;
    std::string document;
    std::map<std::uint64_t, TaskState> tasks;
    std::set<std::pair<std::size_t, std::uint64_t>> pending;
    std::size_t remaining = 0;
    bool closed = false;
    PartialResult merged;
    Clock::time_point waiting_since;
  };

  SchedulerOptions opts;
  net::Listener listener;
  Clock::time_point started = Clock::now();

  mutable std::mutex conns_mu;
  std::map<std::uint64_t, std::shared_ptr<Conn>> conns;
  std::uint64_t next_conn = 1;

  std::mutex queue_mu;
  std::condition_variable queue_cv;
  std::deque<Event> queue;

  std::atomic<bool> stopping{false};
  std::thread accept_thread;
  std::thread loop_thread;

  // Owned by the control loop.
  std::map<std::uint64_t, WorkerState> workers;
  std::optional<Run> run;
  std::uint64_t next_task = 1;
  std::uint64_t next_graph = 1;

  std::atomic<std::size_t> nworkers{0};
  mutable std::mutex wait_mu;
  mutable std::condition_variable wait_cv;

  mutable std::mutex log_mu;
  std::vector<SchedulerEvent> log;

  explicit Impl(SchedulerOptions o) : opts(std::move(o)), listener(opts.listen) {}

  void push(Event ev) {
    {
      std::lock_guard lk(queue_mu);
      queue.push_back(std::move(ev));
    }
    queue_cv.notify_one();
  }

  void record(SchedulerEvent::Kind kind, std::uint64_t task, const std::string& worker, std::uint32_t attempt) {
    std::lock_guard lk(log_mu);
    log.push_back({kind, std::chrono::duration<double>(Clock::now() - started).count(), task, worker, attempt});
  }

  std::shared_ptr<Conn> conn(std::uint64_t id) {
    std::lock_guard lk(conns_mu);
    auto it = conns.find(id);
    return it == conns.end() ? nullptr : it->second;
  }

  void accept_loop() {
    while (!stopping) {
      auto sock = listener.accept();
      if (!sock.valid()) break;
      auto c = std::make_shared<Conn>();
      c->sock = std::move(sock);
      std::lock_guard lk(conns_mu);
      if (stopping) break;
      c->id = next_conn++;
      c->reader = std::thread([this, c] { read_loop(c); });
      conns[c->id] = c;
    }
  }

  void read_loop(const std::shared_ptr<Conn>& c) {
    try {
      while (auto m = proto::recv_message(c->sock)) push(Event{c->id, std::move(m), {}});
      push(Event{c->id, std::nullopt, {}});
    } catch (const std::exception& e) {
      push(Event{c->id, std::nullopt, e.what()});
    }
  }

  // Returns false when the peer could not be written to.
  bool send(std::uint64_t id, const proto::Message& m) {
    auto c = conn(id);
    if (!c) return false;
    try {
      proto::send_message(c->sock, m);
      return true;
    } catch (const std::exception&) {
      c->sock.shutdown();
      return false;
    }
  }

  void drop_conn(std::uint64_t id) {
    std::shared_ptr<Conn> c;
    {
      std::lock_guard lk(conns_mu);
      auto it = conns.find(id);
      if (it == conns.end()) return;
      c = it->second;
      conns.erase(it);
    }
    c->sock.shutdown();
    if (c->reader.joinable()) c->reader.join();
  }

  void control_loop() {
    while (!stopping) {
      std::deque<Event> batch;
      {
        std::unique_lock lk(queue_mu);
        queue_cv.wait_for(lk, std::chrono::milliseconds(50), [&] { return !queue.empty() || stopping; });
        batch.swap(queue);
      }
      if (stopping) break;
      for (auto& ev : batch) handle(ev);
      check_timeouts();
      dispatch();
    }
  }

  void set_worker_count() {
    nworkers = workers.size();
    wait_cv.notify_all();
  }

  void handle(Event& ev) {
    if (!ev.msg) {
      if (workers.count(ev.conn)) {
        lose_worker(ev.conn, ev.error.empty() ? "disconnected" : ev.error);
      } else if (run && run->client == ev.conn) {
        run.reset();
      }
      drop_conn(ev.conn);
      return;
    }
    auto wit = workers.find(ev.conn);
    if (wit != workers.end()) wit->second.last_seen = Clock::now();

    std::visit(
        [&](auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, proto::Register>) {
            if (m.slots > 0) {
              workers[ev.conn] = WorkerState{m.name, m.slots, {}, Clock::now(), {}};
              set_worker_count();
            } else {
              send(ev.conn, proto::Register{"scheduler", static_cast<std::uint32_t>(workers.size())});
            }
          } else if constexpr (std::is_same_v<T, proto::Graph>) {
            if (run && run->client != ev.conn) {
              send(ev.conn, proto::Fail{0, "scheduler is busy with another run"});
              return;
            }
            run.emplace();
            run->client = ev.conn;
            run->graph_id = next_graph++;
            run->document = std::move(m.document);
            run->waiting_since = Clock::now();
          } else if constexpr (std::is_same_v<T, proto::Task>) {
            if (!run || run->client != ev.conn) return;
            TaskState ts;
            ts.client_id = m.task_id;
            ts.order = run->tasks.size();
            ts.task = std::move(m);
            ts.task.task_id = next_task++;
            ts.task.graph_id = run->graph_id;
            ts.task.attempt = 1;
            run->pending.insert({ts.order, ts.task.task_id});
            run->tasks.emplace(ts.task.task_id, std::move(ts));
            ++run->remaining;
          } else if constexpr (std::is_same_v<T, proto::Shutdown>) {
            if (run && run->client == ev.conn) {
              run->closed = true;
              maybe_finish();
            }
          } else if constexpr (std::is_same_v<T, proto::Result>) {
            on_result(ev.conn, m);
          } else if constexpr (std::is_same_v<T, proto::Fail>) {
            on_fail(ev.conn, m);
          }
        },
        *ev.msg);
  }

  TaskState* find_task(std::uint64_t id) {
    if (!run) return nullptr;
    auto it = run->tasks.find(id);
    return it == run->tasks.end() ? nullptr : &it->second;
  }

  void on_result(std::uint64_t from, proto::Result& m) {
    auto wit = workers.find(from);
    std::string wname = wit != workers.end() ? wit->second.name : m.worker;
    if (wit != workers.end()) wit->second.inflight.erase(m.task_id);
    auto* ts = find_task(m.task_id);
    if (!ts || ts->done) {
      record(SchedulerEvent::Kind::Duplicate, ts ? ts->client_id : 0, wname, m.attempt);
      return;
    }
    ts->done = true;
    run->pending.erase({ts->order, ts->task.task_id});
    for (auto& [id, w] : workers) w.inflight.erase(m.task_id);
    record(SchedulerEvent::Kind::Result, ts->client_id, wname, m.attempt);
    run->merged.merge(m.partial);
    --run->remaining;
    m.task_id = ts->client_id;
    if (!send(run->client, m)) {
      run.reset();
      return;
    }
    maybe_finish();
  }

  void on_fail(std::uint64_t from, const proto::Fail& m) {
    auto wit = workers.find(from);
    if (wit != workers.end()) wit->second.inflight.erase(m.task_id);
    auto* ts = find_task(m.task_id);
    if (!ts || ts->done) return;
    record(SchedulerEvent::Kind::Fail, ts->client_id, wit != workers.end() ? wit->second.name : "",
           ts->task.attempt);
    retry_or_fail(*ts, m.error);
  }

  void retry_or_fail(TaskState& ts, const std::string& why) {
    if (ts.task.attempt < opts.max_retries + 1) {
      ++ts.task.attempt;
      run->pending.insert({ts.order, ts.task.task_id});
      return;
    }
    send(run->client, proto::Fail{ts.client_id, "task " + std::to_string(ts.client_id) + " failed after " +
                                                    std::to_string(ts.task.attempt) + " attempts: " + why});
    run.reset();
  }

  void lose_worker(std::uint64_t id, const std::string& why) {
    auto it = workers.find(id);
    if (it == workers.end()) return;
    auto w = std::move(it->second);
    workers.erase(it);
    set_worker_count();
    record(SchedulerEvent::Kind::WorkerLost, 0, w.name, 0);
    if (auto c = conn(id)) c->sock.shutdown();
    for (auto tid : w.inflight) {
      auto* ts = find_task(tid);
      if (ts && !ts->done) retry_or_fail(*ts, "worker " + w.name + " lost: " + why);
    }
  }

  void maybe_finish() {
    if (!run || !run->closed || run->remaining > 0) return;
    send(run->client, proto::Result{0, "scheduler", 0, std::move(run->merged)});
    run.reset();
  }

  void check_timeouts() {
    auto now = Clock::now();
    std::vector<std::uint64_t> lost;
    for (const auto& [id, w] : workers) {
      if (now - w.last_seen > opts.loss_timeout) lost.push_back(id);
    }
    for (auto id : lost) lose_worker(id, "no heartbeat");
    if (!run) return;
    if (!workers.empty()) {
      run->waiting_since = now;
    } else if (run->remaining > 0 && now - run->waiting_since > opts.startup_timeout) {
      send(run->client, proto::Fail{0, "no workers registered within startup timeout"});
      run.reset();
    }
  }

  void dispatch() {
    while (run && !run->pending.empty()) {
      auto best = workers.end();
      std::int64_t best_free = 0;
      for (auto it = workers.begin(); it != workers.end(); ++it) {
        auto free = static_cast<std::int64_t>(it->second.slots) - static_cast<std::int64_t>(it->second.inflight.size());
        if (free > best_free) {
          best_free = free;
          best = it;
        }
      }
      if (best == workers.end()) return;
      auto [order, tid] = *run->pending.begin();
      run->pending.erase(run->pending.begin());
      auto& ts = run->tasks.at(tid);
      auto& w = best->second;
      bool ok = true;
      if (!w.graphs.count(run->graph_id)) {
        ok = send(best->first, proto::Graph{run->graph_id, run->document});
        if (ok) w.graphs.insert(run->graph_id);
      }
      ok = ok && send(best->first, ts.task);
      w.inflight.insert(tid);
      if (ok) {
        record(SchedulerEvent::Kind::Dispatch, ts.client_id, w.name, ts.task.attempt);
      } else {
        lose_worker(best->first, "send failed");
      }
    }
  }
};

Scheduler::Scheduler(SchedulerOptions opts) : impl_(std::make_unique<Impl>(std::move(opts))) {
  impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
  impl_->loop_thread = std::thread([this] { impl_->control_loop(); });
}

Scheduler::~Scheduler() { stop(); }

std::uint16_t Scheduler::port() const { return impl_->listener.port(); }

net::Address Scheduler::address() const { return {"127.0.0.1", port()}; }

std::size_t Scheduler::worker_count() const { return impl_->nworkers; }

bool Scheduler::wait_for_workers(std::size_t n, std::chrono::milliseconds timeout) const {
  std::unique_lock lk(impl_->wait_mu);
  return impl_->wait_cv.wait_for(lk, timeout, [&] { return impl_->nworkers >= n; });
}

std::vector<SchedulerEvent> Scheduler::events() const {
  std::lock_guard lk(impl_->log_mu);
  return impl_->log;
}

void Scheduler::stop() {
  auto& d = *impl_;
  if (d.stopping.exchange(true)) return;
  d.queue_cv.notify_all();
  if (d.loop_thread.joinable()) d.loop_thread.join();
  for (const auto& [id, w] : d.workers) d.send(id, proto::Shutdown{});
  d.listener.shutdown();
  if (d.accept_thread.joinable()) d.accept_thread.join();
  std::map<std::uint64_t, std::shared_ptr<Impl::Conn>> conns;
  {
    std::lock_guard lk(d.conns_mu);
    conns.swap(d.conns);
  }
  for (auto& [id, c] : conns) c->sock.shutdown();
  for (auto& [id, c] : conns) {
    if (c->reader.joinable()) c->reader.join();
  }
}

// ---------------------------------------------------------------------------
// Worker

namespace {

net::Socket connect_with_retry(const net::Address& addr, std::chrono::milliseconds timeout) {
  auto deadline = Clock::now() + timeout;
  while (true) {
    try {
      return net::Socket::connect(addr);
    } catch (const TransportError&) {
      if (Clock::now() >= deadline) throw;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  }
}

std::string default_worker_name() {
  static std::atomic<int> counter{0};
  return "worker-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
}

}  // namespace

int run_worker(const WorkerOptions& opts) {
  if (opts.slots < 1) throw ValidationError("worker needs at least one slot");
  const std::string name = opts.name.empty() ? default_worker_name() : opts.name;
  auto sock = connect_with_retry(opts.scheduler, opts.connect_timeout);

  std::mutex send_mu;
  auto send = [&](const proto::Message& m) {
    std::lock_guard lk(send_mu);
    try {
      proto::send_message(sock, m);
    } catch (const std::exception&) {
      sock.shutdown();
    }
  };
  send(proto::Register{name, opts.slots});

  std::mutex mu;
  std::condition_variable cv;
  bool stop = false;
  std::deque<proto::Task> tasks;
  std::map<std::uint64_t, std::string> documents;
  std::map<std::uint64_t, std::shared_ptr<const PipelineSpec>> specs;

  std::thread heartbeat([&] {
    std::unique_lock lk(mu);
    while (!cv.wait_for(lk, opts.heartbeat, [&] { return stop; })) {
      lk.unlock();
      send(proto::Heartbeat{name});
      lk.lock();
    }
  });

  auto spec_for = [&](std::uint64_t graph_id) -> std::shared_ptr<const PipelineSpec> {
    std::string doc;
    {
      std::lock_guard lk(mu);
      if (auto it = specs.find(graph_id); it != specs.end()) return it->second;
      auto d = documents.find(graph_id);
      if (d == documents.end()) throw ProtocolError("task references unknown graph " + std::to_string(graph_id));
      doc = d->second;
    }
    auto spec = std::make_shared<const PipelineSpec>(load_spec(doc));
    std::lock_guard lk(mu);
    specs.emplace(graph_id, spec);
    return spec;
  };

  std::vector<std::thread> slots;
  for (std::uint32_t s = 0; s < opts.slots; ++s) {
    slots.emplace_back([&] {
      while (true) {
        proto::Task task;
        {
          std::unique_lock lk(mu);
          cv.wait(lk, [&] { return stop || !tasks.empty(); });
          if (stop) return;
          task = std::move(tasks.front());
          tasks.pop_front();
        }
        if (opts.task_delay.count() > 0) std::this_thread::sleep_for(opts.task_delay);
        try {
          auto spec = spec_for(task.graph_id);
          auto partial = execute_task(*spec, task, opts.env);
          send(proto::Result{task.task_id, name, task.attempt, std::move(partial)});
        } catch (const std::exception& e) {
          send(proto::Fail{task.task_id, e.what()});
        }
      }
    });
  }

  int code = 1;
  try {
    while (auto m = proto::recv_message(sock)) {
      if (auto* g = std::get_if<proto::Graph>(&*m)) {
        std::lock_guard lk(mu);
        documents[g->graph_id] = std::move(g->document);
      } else if (auto* t = std::get_if<proto::Task>(&*m)) {
        {
          std::lock_guard lk(mu);
          tasks.push_back(std::move(*t));
        }
        cv.notify_all();
      } else if (std::holds_alternative<proto::Shutdown>(*m)) {
        code = 0;
        break;
      }
    }
  } catch (const std::exception&) {
    code = 1;
  }
  {
    std::lock_guard lk(mu);
    stop = true;
  }
  cv.notify_all();
  sock.shutdown();
  heartbeat.join();
  for (auto& t : slots) t.join();
  return code;
}

// ---------------------------------------------------------------------------
// Client

namespace {

proto::Message expect_message(net::Socket& sock) {
  auto m = proto::recv_message(sock);
  if (!m) throw TransportError("scheduler closed the connection");
  return std::move(*m);
}

std::uint32_t probe(net::Socket& sock) {
  proto::send_message(sock, proto::Register{"client", 0});
  auto m = expect_message(sock);
  auto* r = std::get_if<proto::Register>(&m);
  if (!r) throw ProtocolError("unexpected reply to client registration");
  return r->slots;
}

}  // namespace

std::size_t ClusterExecutor::workers() {
  auto sock = net::Socket::connect(scheduler_);
  return probe(sock);
}

ExecutionReport ClusterExecutor::execute(const PipelineSpec& spec, const std::vector<TaskSpec>& tasks,
                                         const ExecuteOptions& opts) {
  auto t0 = Clock::now();
  auto sock = net::Socket::connect(scheduler_);
  probe(sock);
  proto::send_message(sock, proto::Graph{0, dump_spec(spec)});

  const std::size_t window = opts.parallel_jobs > 0 ? opts.parallel_jobs : tasks.size();
  std::map<std::uint64_t, std::size_t> index;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (!index.emplace(tasks[i].task_id, i).second) {
      throw ValidationError("duplicate task id " + std::to_string(tasks[i].task_id));
    }
    if (tasks[i].task_id == 0) throw ValidationError("task id 0 is reserved");
  }
  std::size_t sent = 0;

  ExecutionReport report;
  std::size_t done = 0;
  auto fill = [&] {
    while (sent < tasks.size() && sent - done < window) proto::send_message(sock, tasks[sent++]);
    if (sent == tasks.size()) proto::send_message(sock, proto::Shutdown{});
  };
  fill();
  while (true) {
    auto m = expect_message(sock);
    if (auto* r = std::get_if<proto::Result>(&m)) {
      if (r->task_id == 0) {
        report.merged = std::move(r->partial);
        break;
      }
      auto it = index.find(r->task_id);
      if (it == index.end()) throw ProtocolError("result for unknown task " + std::to_string(r->task_id));
      report.outcomes.push_back(TaskOutcome{tasks[it->second], r->worker, r->attempt, std::move(r->partial)});
      ++done;
      if (sent < tasks.size()) fill();
    } else if (auto* f = std::get_if<proto::Fail>(&m)) {
      if (f->task_id == 0) throw Error("run failed: " + f->error);
      throw Error(f->error);
    } else {
      throw ProtocolError("unexpected " + std::string(proto::kind_name(proto::kind_of(m))) + " from scheduler");
    }
  }
  std::sort(report.outcomes.begin(), report.outcomes.end(),
            [](const TaskOutcome& a, const TaskOutcome& b) { return a.task.task_id < b.task.task_id; });
  report.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return report;
}

DistributedRun run_distributed(Executor& exec, const PipelineSpec& spec, const std::string& data_address,
                               std::size_t factor) {
  auto t0 = Clock::now();
  DistributedRun out;
  std::vector<DatasetInfo> infos;
  for (const auto& uri : spec.dataset) {
    auto ds = Dataset::open(resolve_uri(uri, data_address));
    out.planner_bytes += ds.account().bytes_read;
    auto info = ds.info();
    // Tasks carry the URI as written in the spec; workers resolve it.
    info.uri = uri;
    infos.push_back(std::move(info));
  }
  auto ranges = plan_partitions(infos, std::max<std::size_t>(1, exec.workers()), factor);
  std::vector<TaskSpec> tasks;
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    TaskSpec t;
    t.task_id = i + 1;
    t.range = ranges[i];
    t.mode = RunMode::single_pass();
    tasks.push_back(std::move(t));
  }
  out.report = exec.execute(spec, tasks);
  out.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return out;
}

}  // namespace colflow
