#include "colflow/bench.hpp"

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <csignal>
#include <cstring>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <numbers>
#include <random>

#include "colflow/error.hpp"

extern char** environ;

namespace colflow {

std::vector<ColumnSchema> bench_schema() {
  return {{"event_weight", Dtype::F64}, {"MET_pt", Dtype::F64},   {"nJet", Dtype::I64},
          {"Jet_pt", Dtype::VEC_F64},   {"Jet_eta", Dtype::VEC_F64}, {"Jet_phi", Dtype::VEC_F64}};
}

namespace {

// Explicit transforms of the raw 64-bit stream; std distributions are not
// specified bit-for-bit across standard libraries.
class EventRng {
 public:
  explicit EventRng(std::uint64_t seed) : rng_(seed) {}
  double uniform() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double exponential(double mean) { return -mean * std::log1p(-uniform()); }

 private:
  std::mt19937_64 rng_;
};

std::uint64_t file_seed(std::uint64_t seed, std::size_t f) {
  return seed ^ (0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(f) + 1));
}

std::string file_name(std::size_t f) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "data_%03zu.col", f);
  return buf;
}

}  // namespace

Manifest gen(const GenConfig& config, const std::filesystem::path& out_dir) {
  if (config.cluster_size == 0) throw ValidationError("cluster size must be positive");
  if (config.n_files == 0) throw ValidationError("need at least one file");
  std::filesystem::create_directories(out_dir);
  Manifest m;
  m.config = config;
  for (std::size_t f = 0; f < config.n_files; ++f) {
    EventRng rng(file_seed(config.seed, f));
    DatasetWriter writer(out_dir / file_name(f), bench_schema());
    for (std::uint64_t start = 0; start < config.events_per_file; start += config.cluster_size) {
      const auto n = std::min(config.cluster_size, config.events_per_file - start);
      std::vector<double> weight, met;
      std::vector<std::int64_t> njet;
      VecColumn<double> pt, eta, phi;
      std::vector<double> row_pt, row_eta, row_phi;
      for (std::uint64_t i = 0; i < n; ++i) {
        weight.push_back(rng.uniform(0.5, 1.5));
        met.push_back(rng.exponential(40.0));
        auto nj = std::min<std::int64_t>(8, static_cast<std::int64_t>(rng.uniform() * 9.0));
        njet.push_back(nj);
        row_pt.clear();
        row_eta.clear();
        row_phi.clear();
        for (std::int64_t j = 0; j < nj; ++j) {
          row_pt.push_back(20.0 + rng.exponential(40.0));
          row_eta.push_back(rng.uniform(-3.0, 3.0));
          row_phi.push_back(rng.uniform(-std::numbers::pi, std::numbers::pi));
        }
        std::sort(row_pt.begin(), row_pt.end(), std::greater<>());
        pt.push_back(row_pt);
        eta.push_back(row_eta);
        phi.push_back(row_phi);
      }
      writer.write_cluster({{"event_weight", std::move(weight)},
                            {"MET_pt", std::move(met)},
                            {"nJet", std::move(njet)},
                            {"Jet_pt", std::move(pt)},
                            {"Jet_eta", std::move(eta)},
                            {"Jet_phi", std::move(phi)}});
    }
    auto info = writer.finish();
    m.files.push_back(file_name(f));
    m.entries.push_back(info.total_entries);
    m.total_entries += info.total_entries;
  }

  nlohmann::ordered_json doc;
  doc["files"] = nlohmann::ordered_json::array();
  for (std::size_t f = 0; f < m.files.size(); ++f) doc["files"].push_back({{"uri", m.files[f]}, {"entries", m.entries[f]}});
  doc["total_entries"] = m.total_entries;
  doc["events_per_file"] = config.events_per_file;
  doc["cluster_size"] = config.cluster_size;
  doc["seed"] = config.seed;
  std::ofstream out(out_dir / "manifest.json");
  out << doc.dump(2) << "\n";
  if (!out) throw Error("cannot write manifest in " + out_dir.string());
  return m;
}

Manifest read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw ValidationError("no manifest.json in " + dir.string());
  Manifest m;
  try {
    auto doc = nlohmann::json::parse(in);
    for (const auto& f : doc.at("files")) {
      m.files.push_back(f.at("uri").get<std::string>());
      m.entries.push_back(f.at("entries").get<std::uint64_t>());
    }
    m.total_entries = doc.at("total_entries").get<std::uint64_t>();
    m.config.n_files = m.files.size();
    m.config.events_per_file = doc.at("events_per_file").get<std::uint64_t>();
    m.config.cluster_size = doc.at("cluster_size").get<std::uint64_t>();
    m.config.seed = doc.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  return m;
}

PipelineSpec default_preselection_spec() { return load_spec(default_preselection_json()); }
PipelineSpec default_postselection_spec() { return load_spec(default_postselection_json()); }

void ensure_payload(const std::filesystem::path& path, std::uint64_t bytes) {
  std::error_code ec;
  if (std::filesystem::exists(path, ec) && std::filesystem::file_size(path, ec) == bytes) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  std::vector<char> block(1 << 16);
  std::uint64_t x = 0x243F6A8885A308D3ull;
  std::uint64_t left = bytes;
  while (left > 0) {
    for (auto& c : block) {
      x ^= x << 13;
      x ^= x >> 7;
      x ^= x << 17;
      c = static_cast<char>(x);
    }
    auto n = static_cast<std::size_t>(std::min<std::uint64_t>(left, block.size()));
    out.write(block.data(), static_cast<std::streamsize>(n));
    left -= n;
  }
  if (!out) throw Error("cannot write payload " + path.string());
}

double max_relative_difference(const PartialResult& a, const PartialResult& b) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  if (a.universes.size() != b.universes.size()) return kInf;
  double worst = 0.0;
  for (const auto& ua : a.universes) {
    const auto* ub = b.universe(ua.label);
    if (!ub || ub->results.size() != ua.results.size()) return kInf;
    for (const auto& ra : ua.results) {
      const auto* rb = ub->find(ra.name);
      if (!rb || rb->value.index() != ra.value.index()) return kInf;
      if (const auto* ha = std::get_if<Histo1D>(&ra.value)) {
        const auto& hb = std::get<Histo1D>(rb->value);
        if (!ha->same_axis(hb) || ha->entries() != hb.entries()) return kInf;
        worst = std::max(worst, max_relative_difference(*ha, hb));
      } else {
        double x = std::get<ScalarAccumulator>(ra.value).value;
        double y = std::get<ScalarAccumulator>(rb->value).value;
        double m = std::max(std::abs(x), std::abs(y));
        if (m > 0) worst = std::max(worst, std::abs(x - y) / m);
      }
    }
  }
  return worst;
}

// ---------------------------------------------------------------------------

Facility::Facility(std::filesystem::path root, FacilityOptions opts) : root_(std::move(root)), opts_(std::move(opts)) {
  data_ = std::make_unique<DataServer>(root_, net::Address{"127.0.0.1", 0});
  SchedulerOptions so;
  so.loss_timeout = opts_.loss_timeout;
  so.max_retries = opts_.max_retries;
  scheduler_ = std::make_unique<Scheduler>(so);
  const auto sched = scheduler_->address().str();
  const auto data = data_address();
  for (std::size_t i = 0; i < opts_.workers; ++i) {
    const std::string name = "w" + std::to_string(i);
    if (opts_.processes) {
      std::vector<std::string> args = {opts_.exe.string(),
                                       "worker",
                                       "--scheduler",
                                       sched,
                                       "--slots",
                                       std::to_string(opts_.slots),
                                       "--data",
                                       data,
                                       "--write-root",
                                       root_.string(),
                                       "--name",
                                       name,
                                       "--heartbeat-ms",
                                       std::to_string(opts_.heartbeat.count()),
                                       "--task-delay-ms",
                                       std::to_string(opts_.task_delay.count())};
      std::vector<char*> argv;
      for (auto& a : args) argv.push_back(a.data());
      argv.push_back(nullptr);
      pid_t pid = 0;
      int rc = posix_spawn(&pid, opts_.exe.c_str(), nullptr, nullptr, argv.data(), environ);
      if (rc != 0) {
        shutdown();
        throw Error("cannot spawn worker " + opts_.exe.string() + ": " + std::strerror(rc));
      }
      pids_.push_back(pid);
    } else {
      WorkerOptions wo;
      wo.scheduler = scheduler_->address();
      wo.slots = opts_.slots;
      wo.name = name;
      wo.env = TaskEnv{data, root_, name};
      wo.heartbeat = opts_.heartbeat;
      wo.task_delay = opts_.task_delay;
      threads_.emplace_back([wo] {
        try {
          run_worker(wo);
        } catch (const std::exception&) {
        }
      });
    }
  }
  if (!scheduler_->wait_for_workers(opts_.workers, std::chrono::seconds(30))) {
    shutdown();
    throw Error("workers did not register within 30 s");
  }
}

Facility::~Facility() { shutdown(); }

void Facility::shutdown() {
  if (down_) return;
  down_ = true;
  scheduler_->stop();
  for (auto& t : threads_) t.join();
  for (int pid : pids_) {
    int status = 0;
    // Workers exit on SHUTDOWN; a worker that never registered is killed.
    for (int i = 0; i < 100; ++i) {
      if (::waitpid(pid, &status, WNOHANG) != 0) goto reaped;
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
    ::kill(pid, SIGKILL);
    ::waitpid(pid, &status, 0);
  reaped:;
  }
  data_->stop();
}

// ---------------------------------------------------------------------------

namespace {

void set_snapshot_out(PipelineSpec& spec, const std::string& out) {
  for (auto& st : spec.stages) {
    if (st.kind == StageKind::Snapshot) st.out = out;
  }
}

std::uint64_t sum_chunk_bytes(const std::vector<TaskOutcome>& outcomes) {
  std::uint64_t n = 0;
  for (const auto& o : outcomes) n += o.partial.chunk_bytes;
  return n;
}

}  // namespace

BenchResult bench(const BenchConfig& cfg) {
  if (cfg.repeats < 1) throw ValidationError("repeats must be >= 1");
  Manifest m = std::filesystem::exists(cfg.data_dir / "manifest.json") ? read_manifest(cfg.data_dir)
                                                                        : gen(cfg.gen, cfg.data_dir);
  if (cfg.payload_bytes > 0) ensure_payload(cfg.data_dir / "payload.bin", cfg.payload_bytes);
  const PipelineSpec pre = cfg.pre ? *cfg.pre : default_preselection_spec();
  const PipelineSpec post = cfg.post ? *cfg.post : default_postselection_spec();
  std::filesystem::create_directories(cfg.out_dir);
  const auto metrics_csv = cfg.out_dir / "metrics.csv";
  std::filesystem::remove(metrics_csv);

  Facility fac(cfg.data_dir, cfg.facility);
  ClusterExecutor exec(fac.scheduler_address());
  BenchResult result;
  // Scenario pointers below stay valid only without reallocation.
  result.runs.reserve(4 * cfg.repeats);

  auto served = [&] { return fac.data().totals().bytes_served; };
  auto record = [&](ScenarioRun run) {
    append_metrics_csv(metrics_csv, std::span(&run.metrics, 1));
    result.byte_closure = result.byte_closure && run.client_bytes == run.served_bytes;
    result.runs.push_back(std::move(run));
    return &result.runs.back();
  };

  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const std::string tag = "r" + std::to_string(r);
    const std::string run_rel = "runs/" + tag;
    const auto run_out = cfg.out_dir / tag;

    auto legacy = [&](const PipelineSpec& base, const std::vector<std::string>& files, Phase phase) {
      PipelineSpec spec = base;
      spec.dataset = files;
      set_snapshot_out(spec, run_rel + "/legacy/skim-" + std::string(phase_name(phase)));
      LegacyOptions lo;
      lo.out_dir = run_out / "legacy";
      lo.payload_bytes = cfg.payload_bytes;
      lo.parallel_jobs = cfg.parallel_jobs;
      auto before = served();
      auto rep = run_legacy(exec, spec, files, phase, lo);
      ScenarioRun run;
      run.repeat = r;
      run.mode = "legacy";
      run.phase = std::string(phase_name(phase));
      for (const auto& o : rep.jobs) run.jobs.push_back(to_record(o));
      run.metrics = aggregate(tag, run.mode, run.phase, run.jobs, rep.wall_seconds);
      run.served_bytes = served() - before;
      run.client_bytes = run.metrics.network_read_bytes;
      run.chunk_bytes = sum_chunk_bytes(rep.jobs);
      run.merged = std::move(rep.merged);
      run.skim_files = std::move(rep.skim_files);
      run.passes = rep.passes;
      return record(std::move(run));
    };

    auto fresh = [&](const PipelineSpec& base, const std::vector<std::string>& files, const std::string& phase) {
      PipelineSpec spec = base;
      spec.dataset = files;
      set_snapshot_out(spec, run_rel + "/new/skim-" + phase);
      auto before = served();
      auto dr = run_distributed(exec, spec, fac.data_address(), cfg.factor);
      ScenarioRun run;
      run.repeat = r;
      run.mode = "new";
      run.phase = phase;
      run.jobs = to_records(dr.report);
      append_jobs_csv(run_out / ("new-" + phase) / "tasks.csv", run.jobs);
      run.metrics = aggregate(tag, run.mode, run.phase, run.jobs, dr.wall_seconds, dr.planner_bytes);
      run.served_bytes = served() - before;
      run.client_bytes = run.metrics.network_read_bytes;
      run.chunk_bytes = sum_chunk_bytes(dr.report.outcomes);
      for (const auto& o : dr.report.outcomes) {
        run.skim_files.insert(run.skim_files.end(), o.partial.snapshot_parts.begin(), o.partial.snapshot_parts.end());
      }
      run.merged = std::move(dr.report.merged);
      return record(std::move(run));
    };

    auto* lpre = legacy(pre, m.files, Phase::Preselection);
    auto* npre = fresh(pre, m.files, "pre");
    result.max_diff_pre = std::max(result.max_diff_pre, max_relative_difference(lpre->merged, npre->merged));
    auto legacy_skims = lpre->skim_files;
    auto new_skims = npre->skim_files;
    auto* lpost = legacy(post, legacy_skims, Phase::Postselection);
    auto* npost = fresh(post, new_skims, "post");
    result.max_diff_post = std::max(result.max_diff_post, max_relative_difference(lpost->merged, npost->merged));
  }
  fac.shutdown();

  std::vector<RunMetrics> rows;
  for (const auto& run : result.runs) rows.push_back(run.metrics);
  result.report = build_report(rows);
  result.rendered = render_report(result.report);
  std::ofstream(cfg.out_dir / "report.txt") << result.rendered;
  return result;
}

}  // namespace colflow
