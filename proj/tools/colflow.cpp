// colflow command-line front end.

#include <pthread.h>
#include <signal.h>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "colflow/bench.hpp"
#include "colflow/cluster.hpp"
#include "colflow/data_server.hpp"
#include "colflow/error.hpp"
#include "colflow/legacy.hpp"
#include "colflow/metrics.hpp"

namespace fs = std::filesystem;
using namespace colflow;

namespace {

// Blocks SIGINT/SIGTERM in every thread started afterwards so the main
// thread can wait for them.
sigset_t block_termination() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  return set;
}

void wait_for_termination(const sigset_t& set) {
  int sig = 0;
  sigwait(&set, &sig);
}

std::vector<std::string> read_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_list(const fs::path& path, const std::vector<std::string>& items) {
  std::ofstream out(path);
  for (const auto& s : items) out << s << "\n";
  if (!out) throw Error("cannot write " + path.string());
}

void print_summary(const RunMetrics& m, const PartialResult& merged) {
  std::printf("jobs %zu, events %llu, wall %.3f s, overall %.1f Hz, job %.1f Hz, loop %.1f Hz, read %llu B\n",
              m.n_jobs, static_cast<unsigned long long>(m.total_events), m.overall_time_s, m.overall_rate_hz,
              m.job_rate_hz, m.job_loop_rate_hz, static_cast<unsigned long long>(m.network_read_bytes));
  if (const auto* nominal = merged.universe("nominal")) {
    for (const auto& r : nominal->results) {
      if (const auto* h = std::get_if<Histo1D>(&r.value)) {
        std::printf("  %-14s histo  entries %llu  sumw %.6g\n", r.name.c_str(),
                    static_cast<unsigned long long>(h->entries()), h->total_sumw());
      } else {
        std::printf("  %-14s scalar %.17g\n", r.name.c_str(), std::get<ScalarAccumulator>(r.value).value);
      }
    }
  }
  std::printf("universes: %zu\n", merged.universes.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"colflow: declarative columnar analysis on a small cluster"};
  app.require_subcommand(1);

  // gen
  GenConfig gen_cfg;
  fs::path gen_out;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--files", gen_cfg.n_files, "Number of files")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--events", gen_cfg.events_per_file, "Events per file");
  gen_cmd->add_option("--cluster-size", gen_cfg.cluster_size, "Entries per cluster")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen_cfg.seed, "Generator seed");

  // serve-data
  fs::path serve_root;
  std::string serve_listen = "127.0.0.1:7070";
  auto* serve_cmd = app.add_subcommand("serve-data", "Serve dataset files over TCP");
  serve_cmd->add_option("--root", serve_root, "Directory to serve")->required();
  serve_cmd->add_option("--listen", serve_listen, "host:port");

  // scheduler
  std::string sched_listen = "127.0.0.1:7071";
  int loss_ms = 6000;
  int startup_ms = 30000;
  std::uint32_t max_retries = 2;
  auto* sched_cmd = app.add_subcommand("scheduler", "Run the task scheduler");
  sched_cmd->add_option("--listen", sched_listen, "host:port");
  sched_cmd->add_option("--loss-ms", loss_ms, "Declare a silent worker lost after this long");
  sched_cmd->add_option("--startup-timeout-ms", startup_ms, "Fail a run that has no workers for this long");
  sched_cmd->add_option("--max-retries", max_retries, "Extra attempts per task");

  // worker
  std::string worker_sched;
  std::string worker_data;
  std::uint32_t worker_slots = 1;
  fs::path worker_root = ".";
  std::string worker_name;
  int heartbeat_ms = 2000;
  int task_delay_ms = 0;
  auto* worker_cmd = app.add_subcommand("worker", "Run a worker daemon");
  worker_cmd->add_option("--scheduler", worker_sched, "Scheduler host:port")->required();
  worker_cmd->add_option("--slots", worker_slots, "Concurrent tasks")->check(CLI::PositiveNumber);
  worker_cmd->add_option("--data", worker_data, "Data server host:port for relative URIs");
  worker_cmd->add_option("--write-root", worker_root, "Directory snapshot parts are written under");
  worker_cmd->add_option("--name", worker_name, "Worker name");
  worker_cmd->add_option("--heartbeat-ms", heartbeat_ms, "Heartbeat interval")->check(CLI::PositiveNumber);
  worker_cmd->add_option("--task-delay-ms", task_delay_ms, "Sleep before each task (testing)");

  // run
  fs::path run_spec;
  std::string run_sched;
  std::size_t factor = 3;
  fs::path run_out;
  std::string run_data;
  fs::path dataset_list;
  std::string run_id = "run";
  auto* run_cmd = app.add_subcommand("run", "Run a spec on the cluster in single-pass mode");
  run_cmd->add_option("--spec", run_spec, "Pipeline spec JSON")->required();
  run_cmd->add_option("--scheduler", run_sched, "Scheduler host:port")->required();
  run_cmd->add_option("--partition-factor", factor, "Tasks per worker")->check(CLI::PositiveNumber);
  run_cmd->add_option("--out", run_out, "Output directory")->required();
  run_cmd->add_option("--data", run_data, "Data server host:port used to plan relative URIs");
  run_cmd->add_option("--dataset-list", dataset_list, "File with one dataset URI per line (overrides the spec)");
  run_cmd->add_option("--run-id", run_id, "run_id column in metrics.csv");

  // legacy
  std::string legacy_phase;
  fs::path legacy_spec;
  std::string legacy_sched;
  fs::path legacy_out;
  LegacyOptions legacy_opts;
  auto* legacy_cmd = app.add_subcommand("legacy", "Run the per-file batch baseline");
  legacy_cmd->add_option("phase", legacy_phase, "pre or post")->required()->check(CLI::IsMember({"pre", "post"}));
  legacy_cmd->add_option("--spec", legacy_spec, "Pipeline spec JSON")->required();
  legacy_cmd->add_option("--scheduler", legacy_sched, "Scheduler host:port")->required();
  legacy_cmd->add_option("--payload-bytes", legacy_opts.payload_bytes, "Bytes each job downloads first");
  legacy_cmd->add_option("--payload-uri", legacy_opts.payload_uri, "Payload file on the data server");
  legacy_cmd->add_option("--parallel-jobs", legacy_opts.parallel_jobs, "Concurrent jobs (0 = unbounded)");
  legacy_cmd->add_option("--out", legacy_out, "Output directory")->required();
  legacy_cmd->add_option("--dataset-list", dataset_list, "File with one dataset URI per line (overrides the spec)");
  legacy_cmd->add_option("--run-id", run_id, "run_id column in metrics.csv");

  // bench
  BenchConfig bench_cfg;
  bench_cfg.facility.processes = true;
  bool bench_threads = false;
  fs::path pre_spec, post_spec;
  auto* bench_cmd = app.add_subcommand("bench", "Run legacy and new scenarios on a local mini facility");
  bench_cmd->add_option("--data", bench_cfg.data_dir, "Dataset directory (generated if it has no manifest)")->required();
  bench_cmd->add_option("--out", bench_cfg.out_dir, "Output directory")->required();
  bench_cmd->add_option("--files", bench_cfg.gen.n_files, "Files to generate")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--events", bench_cfg.gen.events_per_file, "Events per generated file");
  bench_cmd->add_option("--cluster-size", bench_cfg.gen.cluster_size, "Entries per cluster")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--seed", bench_cfg.gen.seed, "Generator seed");
  bench_cmd->add_option("--workers", bench_cfg.facility.workers, "Worker count")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--slots", bench_cfg.facility.slots, "Slots per worker")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--partition-factor", bench_cfg.factor, "Tasks per worker")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--repeats", bench_cfg.repeats, "Repetitions per scenario")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--payload-bytes", bench_cfg.payload_bytes, "Legacy per-job payload");
  bench_cmd->add_option("--parallel-jobs", bench_cfg.parallel_jobs, "Concurrent legacy jobs (0 = unbounded)");
  bench_cmd->add_option("--pre-spec", pre_spec, "Preselection spec (default: built in)");
  bench_cmd->add_option("--post-spec", post_spec, "Postselection spec (default: built in)");
  bench_cmd->add_flag("--threads", bench_threads, "Run workers as threads instead of processes");

  // report
  std::vector<fs::path> report_files;
  auto* report_cmd = app.add_subcommand("report", "Render metrics CSV files as a comparison table");
  report_cmd->add_option("metrics", report_files, "metrics.csv files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen_cmd) {
      auto m = gen(gen_cfg, gen_out);
      std::printf("wrote %zu files, %llu events to %s\n", m.files.size(),
                  static_cast<unsigned long long>(m.total_entries), gen_out.c_str());
      return 0;
    }

    if (*serve_cmd) {
      auto set = block_termination();
      DataServer server(serve_root, net::parse_address(serve_listen));
      std::printf("serving %s on %s\n", serve_root.c_str(), server.address().str().c_str());
      std::fflush(stdout);
      wait_for_termination(set);
      auto t = server.totals();
      server.stop();
      std::printf("served %llu bytes in %llu reads\n", static_cast<unsigned long long>(t.bytes_served),
                  static_cast<unsigned long long>(t.read_calls));
      return 0;
    }

    if (*sched_cmd) {
      auto set = block_termination();
      SchedulerOptions so;
      so.listen = net::parse_address(sched_listen);
      so.loss_timeout = std::chrono::milliseconds(loss_ms);
      so.startup_timeout = std::chrono::milliseconds(startup_ms);
      so.max_retries = max_retries;
      Scheduler sched(so);
      std::printf("scheduler listening on %s:%u\n", so.listen.host.c_str(), sched.port());
      std::fflush(stdout);
      wait_for_termination(set);
      sched.stop();
      return 0;
    }

    if (*worker_cmd) {
      WorkerOptions wo;
      wo.scheduler = net::parse_address(worker_sched);
      wo.slots = worker_slots;
      wo.name = worker_name;
      wo.env = TaskEnv{worker_data, worker_root, worker_name.empty() ? "worker" : worker_name};
      wo.heartbeat = std::chrono::milliseconds(heartbeat_ms);
      wo.task_delay = std::chrono::milliseconds(task_delay_ms);
      return run_worker(wo);
    }

    if (*run_cmd) {
      auto spec = load_spec_file(run_spec);
      if (!dataset_list.empty()) spec.dataset = read_list(dataset_list);
      fs::create_directories(run_out);
      ClusterExecutor exec(net::parse_address(run_sched));
      auto dr = run_distributed(exec, spec, run_data, factor);
      auto records = to_records(dr.report);
      append_jobs_csv(run_out / "tasks.csv", records);
      auto m = aggregate(run_id, "new", spec.has_snapshot() ? "pre" : "post", records, dr.wall_seconds,
                         dr.planner_bytes);
      append_metrics_csv(run_out / "metrics.csv", std::span(&m, 1));
      write_result_file(run_out / "result.res", dump_spec(spec), dr.report.merged);
      std::vector<std::string> parts;
      for (const auto& o : dr.report.outcomes) {
        parts.insert(parts.end(), o.partial.snapshot_parts.begin(), o.partial.snapshot_parts.end());
      }
      if (!parts.empty()) write_list(run_out / "snapshot_parts.txt", parts);
      print_summary(m, dr.report.merged);
      return 0;
    }

    if (*legacy_cmd) {
      auto spec = load_spec_file(legacy_spec);
      if (!dataset_list.empty()) spec.dataset = read_list(dataset_list);
      fs::create_directories(legacy_out);
      legacy_opts.out_dir = legacy_out;
      ClusterExecutor exec(net::parse_address(legacy_sched));
      Phase phase = legacy_phase == "pre" ? Phase::Preselection : Phase::Postselection;
      auto rep = run_legacy(exec, spec, spec.dataset, phase, legacy_opts);
      std::vector<JobRecord> records;
      for (const auto& o : rep.jobs) records.push_back(to_record(o));
      auto m = aggregate(run_id, "legacy", legacy_phase, records, rep.wall_seconds);
      append_metrics_csv(legacy_out / "metrics.csv", std::span(&m, 1));
      write_result_file(legacy_out / ("result-" + legacy_phase + ".res"), dump_spec(spec), rep.merged);
      if (!rep.skim_files.empty()) write_list(legacy_out / "snapshot_parts.txt", rep.skim_files);
      std::printf("merge step %.3f s, %zu read passes per job\n", rep.merge_seconds, rep.passes);
      print_summary(m, rep.merged);
      return 0;
    }

    if (*bench_cmd) {
      bench_cfg.facility.processes = !bench_threads;
      bench_cfg.facility.exe = fs::read_symlink("/proc/self/exe");
      if (!pre_spec.empty()) bench_cfg.pre = load_spec_file(pre_spec);
      if (!post_spec.empty()) bench_cfg.post = load_spec_file(post_spec);
      auto res = bench(bench_cfg);
      std::cout << res.rendered << "\n";
      std::printf("legacy/new max relative difference: pre %.3g, post %.3g\n", res.max_diff_pre, res.max_diff_post);
      std::printf("byte closure (client == served): %s\n", res.byte_closure ? "yes" : "NO");
      const bool ok = res.byte_closure && res.max_diff_pre <= 1e-9 && res.max_diff_post <= 1e-9;
      return ok ? 0 : 1;
    }

    if (*report_cmd) {
      std::vector<RunMetrics> rows;
      for (const auto& f : report_files) {
        auto r = read_metrics_csv(f);
        rows.insert(rows.end(), r.begin(), r.end());
      }
      std::cout << render_report(build_report(rows));
      return 0;
    }
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "colflow: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "colflow: %s\n", e.what());
    return 1;
  }
  return 0;
}
