// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <signal.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <map>
#include <sstream>
#include <thread>

#include "colflow/bench.hpp"
#include "colflow/cluster.hpp"
#include "colflow/legacy.hpp"
#include "colflow/metrics.hpp"
#include "support.hpp"

using namespace colflow;
using namespace std::chrono_literals;
using colflow::testing::TempDir;

namespace {

struct Check {
  bool ok = true;
  std::ostringstream detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Criterion = std::function<void(Check&)>;

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Integer-weight variant of the shipped postselection: the weight variations
// become exact integer multiples, topology variations are unchanged.
PipelineSpec integer_post_spec(std::vector<std::string> files) {
  auto spec = default_postselection_spec();
  spec.dataset = std::move(files);
  for (auto& st : spec.stages) {
    if (st.kind != StageKind::Vary || st.variation != VariationKind::Weight) continue;
    std::vector<std::string> exprs;
    for (std::size_t i = 0; i < st.tags.size(); ++i) exprs.push_back("w * " + std::to_string(2 + i % 3) + ".0");
    st.exprs = exprs;
  }
  return load_spec(dump_spec(spec));
}

PipelineSpec without_topology(PipelineSpec spec) {
  std::erase_if(spec.stages, [](const StageSpec& st) {
    return st.kind == StageKind::Vary && st.variation == VariationKind::Topology;
  });
  return spec;
}

std::vector<std::string> write_integer_files(const TempDir& dir, std::size_t nfiles, std::size_t events,
                                             std::uint64_t cluster) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < nfiles; ++i) {
    names.push_back("int" + std::to_string(i) + ".col");
    write_dataset(colflow::testing::physics_table(events, 500 + i, true), cluster, dir / names.back());
  }
  return names;
}

std::uint64_t sum_chunk_bytes(const std::vector<TaskOutcome>& v) {
  std::uint64_t n = 0;
  for (const auto& o : v) n += o.partial.chunk_bytes;
  return n;
}

std::uint64_t sum_bytes_read(const std::vector<TaskOutcome>& v) {
  std::uint64_t n = 0;
  for (const auto& o : v) n += o.partial.bytes_read;
  return n;
}

// Hand-written loop for the shipped postselection, independent of the
// engine, the expression evaluator and the graph.
std::map<std::string, colflow::testing::OracleUniverse> hand_postselection(const ColumnTable& t) {
  const auto& w0 = std::get<std::vector<double>>(t[0].data);
  const auto& met0 = std::get<std::vector<double>>(t[1].data);
  const auto& eta = std::get<VecColumn<double>>(t[4].data);
  const auto& corr0 = std::get<VecColumn<double>>(t[6].data);

  struct Universe {
    std::string label;
    std::function<double(double w, double met)> weight;
    std::function<double(double pt, double eta)> jet;
    std::function<double(double met)> met;
  };
  auto same_jet = [](double pt, double) { return pt; };
  auto same_met = [](double m) { return m; };
  std::vector<Universe> us{{"nominal", [](double w, double) { return w; }, same_jet, same_met}};
  const std::vector<std::pair<std::string, double>> consts{
      {"puUp", 0.03},          {"puDown", -0.03},     {"btagUp", 0.02},       {"btagDown", -0.02},
      {"leptonSFUp", 0.015},   {"leptonSFDown", -0.015}, {"triggerUp", 0.01}, {"triggerDown", -0.01},
      {"prefireUp", 0.005},    {"prefireDown", -0.005}, {"isrUp", 0.04},      {"isrDown", -0.04},
      {"fsrUp", 0.025},        {"fsrDown", -0.025}};
  for (const auto& [tag, c] : consts) {
    const double f = c > 0 ? 1.0 + c : 1.0 - (-c);
    us.push_back({tag, [f](double w, double) { return w * f; }, same_jet, same_met});
  }
  const double slopes[] = {-0.0070, -0.0050, -0.0030, -0.0010, 0.0010, 0.0030, 0.0050, 0.0070};
  for (int i = 0; i < 8; ++i) {
    const double s = slopes[i];
    us.push_back({"pdf_" + std::to_string(i), [s](double w, double m) { return w * (1.0 + s * m / 100.0); },
                  same_jet, same_met});
  }
  auto ident_w = [](double w, double) { return w; };
  us.push_back({"jesUp", ident_w, [](double p, double) { return p * 1.03; }, same_met});
  us.push_back({"jesDown", ident_w, [](double p, double) { return p * 0.97; }, same_met});
  us.push_back({"jerUp", ident_w, [](double p, double e) { return p * (1.0 + 0.02 * std::abs(e)); }, same_met});
  us.push_back({"jerDown", ident_w, [](double p, double e) { return p * (1.0 - 0.02 * std::abs(e)); }, same_met});
  us.push_back({"uesUp", ident_w, same_jet, [](double m) { return m + 5.0; }});
  us.push_back({"uesDown", ident_w, same_jet, [](double m) { return m - 5.0; }});
  us.push_back({"metScaleUp", ident_w, same_jet, [](double m) { return m * 1.05; }});
  us.push_back({"metScaleDown", ident_w, same_jet, [](double m) { return m * 0.95; }});

  std::map<std::string, colflow::testing::OracleUniverse> out;
  for (const auto& u : us) {
    auto& o = out[u.label];
    o.hists["HT"] = {40, 0.0, 1000.0};
    o.hists["lead_pt"] = {40, 0.0, 500.0};
    o.hists["MET_pt"] = {40, 100.0, 500.0};
    double n = 0.0, sumw = 0.0;
    for (std::size_t i = 0; i < w0.size(); ++i) {
      const double w = u.weight(w0[i], met0[i]);
      const double met = u.met(met0[i]);
      auto c = corr0.row(i);
      auto e = eta.row(i);
      std::size_t good = 0;
      double ht = 0.0;
      std::vector<double> jets;
      for (std::size_t j = 0; j < c.size(); ++j) {
        const double p = u.jet(c[j], e[j]);
        jets.push_back(p);
        if (p > 30.0 && std::abs(e[j]) < 2.4) ++good;
        if (p > 30.0) ht += p;
      }
      if (good < 2 || !(met > 120.0)) continue;
      o.hists["HT"].fill(ht, w);
      o.hists["lead_pt"].fill(jets[0], w);
      o.hists["MET_pt"].fill(met, w);
      n += 1.0;
      sumw += w;
    }
    o.scalars["n_selected"] = n;
    o.scalars["sumw"] = sumw;
  }
  return out;
}

// One benchmark at the default shape, shared by several criteria.
struct SharedBench {
  TempDir dir;
  BenchResult result;
  std::uint64_t payload = 1 << 20;
  double seconds = 0.0;
  std::string error;

  SharedBench() {
    try {
      BenchConfig cfg;
      cfg.data_dir = dir / "data";
      cfg.out_dir = dir / "out";
      cfg.gen = GenConfig{};  // 8 files x 100000 events
      cfg.facility.workers = 4;
      cfg.repeats = 1;
      cfg.payload_bytes = payload;
      auto t0 = std::chrono::steady_clock::now();
      result = bench(cfg);
      seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    } catch (const std::exception& e) {
      error = e.what();
    }
  }
  const ScenarioRun* find(const std::string& mode, const std::string& phase) const {
    for (const auto& r : result.runs) {
      if (r.mode == mode && r.phase == phase) return &r;
    }
    return nullptr;
  }
};

SharedBench& shared_bench() {
  static SharedBench b;
  return b;
}

void crit1(Check& c) {
  auto& b = shared_bench();
  c.expect(b.error.empty(), "bench ran: " + b.error);
  if (!b.error.empty()) return;
  auto* lpost = b.find("legacy", "post");
  auto* npost = b.find("new", "post");
  c.expect(lpost && npost, "post scenarios present");
  if (!lpost || !npost) return;
  c.expect(b.find("new", "pre")->metrics.total_events == 800000, "800000 input events");
  c.expect(npost->merged.universes.size() == 31, "31 universes");
  c.expect(b.result.max_diff_pre <= 1e-9, "pre diff <= 1e-9");
  c.expect(b.result.max_diff_post <= 1e-9, "post diff <= 1e-9");
  c.expect(b.seconds < 300.0, "bench under 5 min");
  c.detail << "8x100000 events, 31 universes, max rel diff pre " << fmt(b.result.max_diff_pre) << " post "
           << fmt(b.result.max_diff_post) << ", bench " << fmt(b.seconds) << " s; ";

  // Integer weights: legacy and distributed must agree bit for bit.
  TempDir dir;
  auto files = write_integer_files(dir, 4, 2500, 500);
  auto spec = integer_post_spec(files);
  FacilityOptions fo;
  fo.workers = 3;
  Facility fac(dir.path(), fo);
  ClusterExecutor exec(fac.scheduler_address());
  LegacyOptions lo;
  lo.out_dir = dir / "legacy";
  auto legacy = run_legacy_postselection(exec, spec, files, lo);
  auto dist = run_distributed(exec, spec, fac.data_address());
  fac.shutdown();
  const double d = max_relative_difference(legacy.merged, dist.report.merged);
  c.expect(d == 0.0 && same_results(legacy.merged, dist.report.merged), "integer weights bit-exact");
  c.detail << "integer weights diff " << fmt(d);
}

void crit2(Check& c) {
  TempDir dir;
  auto gm = gen(GenConfig{4, 5000, 1000, 3}, dir.path());
  FacilityOptions fo;
  fo.workers = 3;
  Facility fac(dir.path(), fo);
  ClusterExecutor exec(fac.scheduler_address());
  auto pre = default_preselection_spec();
  pre.dataset = gm.files;
  LegacyOptions lo;
  lo.out_dir = dir / "legacy";
  auto skim = run_legacy_preselection(exec, pre, gm.files, lo);

  for (bool topo : {true, false}) {
    auto post = default_postselection_spec();
    if (!topo) post = without_topology(post);
    post.dataset = skim.skim_files;
    auto legacy = run_legacy_postselection(exec, post, skim.skim_files, lo);
    auto dist = run_distributed(exec, post, fac.data_address());
    const auto lb = sum_chunk_bytes(legacy.jobs);
    const auto nb = sum_chunk_bytes(dist.report.outcomes);
    const std::uint64_t want = topo ? 9 : 1;
    c.expect(legacy.passes == want, "pass count " + std::to_string(want));
    c.expect(nb > 0 && lb == want * nb, std::to_string(want) + "x chunk bytes");
    c.detail << (topo ? "8 topology: " : "0 topology: ") << lb << " / " << nb << " = "
             << fmt(static_cast<double>(lb) / static_cast<double>(nb)) << "; ";
  }
  fac.shutdown();

  auto& b = shared_bench();
  if (b.error.empty()) {
    auto* l = b.find("legacy", "post");
    auto* n = b.find("new", "post");
    c.detail << "default bench chunk ratio " << fmt(static_cast<double>(l->chunk_bytes) / n->chunk_bytes);
  }
}

void crit3(Check& c) {
  auto& b = shared_bench();
  c.expect(b.error.empty(), "bench ran: " + b.error);
  if (!b.error.empty()) return;
  auto* l = b.find("legacy", "pre");
  auto* n = b.find("new", "pre");
  const double delta = static_cast<double>(l->metrics.network_read_bytes) - static_cast<double>(n->metrics.network_read_bytes);
  const double want = static_cast<double>(l->metrics.n_jobs) * static_cast<double>(b.payload);
  const double rel = std::abs(delta - want) / want;
  c.expect(l->metrics.n_jobs == 8, "8 legacy jobs");
  c.expect(rel <= 0.01, "delta within 1%");
  c.detail << "delta " << static_cast<std::uint64_t>(delta) << " B vs " << l->metrics.n_jobs << " x " << b.payload
           << " B, off by " << fmt(rel * 100.0) << "%";
}

void crit4(Check& c) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> t(0.001, 50.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<JobRecord> recs;
    long double ev = 0, tt = 0;
    for (int i = 0; i < 1 + static_cast<int>(rng() % 50); ++i) {
      JobRecord r;
      r.events = rng() % 1000000;
      r.t = t(rng);
      r.t_loop = r.t / 2;
      ev += r.events;
      tt += r.t;
      recs.push_back(r);
    }
    const double want = static_cast<double>(ev / tt);
    worst = std::max(worst, std::abs(job_rate(recs) - want) / want);
  }
  std::vector<JobRecord> fixed(2);
  fixed[0].events = 100;
  fixed[0].t = 2.0;
  fixed[1].events = 200;
  fixed[1].t = 3.0;
  c.expect(worst <= 1e-12, "hand-built records at 1e-12");
  c.expect(job_rate(fixed) == 60.0, "[100,200]/[2,3] = 60 Hz");
  c.detail << "hand-built worst rel err " << fmt(worst) << "; ";

  auto& b = shared_bench();
  c.expect(b.error.empty(), "bench ran: " + b.error);
  std::size_t runs = 0;
  for (const auto& r : b.result.runs) {
    const double jr = job_rate(r.jobs);
    const double lr = job_rate(r.jobs, true);
    c.expect(lr >= jr, r.mode + " " + r.phase + " loop rate >= job rate");
    c.detail << r.mode << "-" << r.phase << " job " << fmt(jr) << " Hz loop " << fmt(lr) << " Hz; ";
    ++runs;
  }
  c.expect(runs == 4, "four real runs");
}

void crit5(Check& c) {
  RunMetrics legacy, neu;
  legacy.mode = "legacy";
  legacy.phase = "total";
  legacy.overall_time_s = 210.88;
  neu.mode = "new";
  neu.phase = "total";
  neu.overall_time_s = 33.7;
  std::vector<RunMetrics> rows{legacy, neu};
  auto rep = build_report(rows);
  c.expect(rep.ratios.size() == 1, "one total ratio");
  if (rep.ratios.empty()) return;
  const double s = rep.ratios[0].speedup.mean;
  const double r = rep.ratios[0].reduction.mean * 100.0;
  c.expect(std::abs(s - 6.26) <= 0.01, "speedup 6.26 +- 0.01");
  c.expect(std::abs(r - 84.0) <= 0.1, "reduction 84.0% +- 0.1%");
  c.detail << "speedup " << fmt(s) << ", reduction " << fmt(r) << "%";
}

void crit6(Check& c) {
  TempDir dir;
  auto files = write_integer_files(dir, 3, 3000, 250);
  auto spec = integer_post_spec(files);
  std::vector<std::string> paths;
  for (const auto& f : files) paths.push_back((dir / f).string());
  auto g = build(spec, Dataset::open(paths[0]).info().schema);
  const auto ref = run_local(g, paths, 1, {}, {}, 1);
  std::size_t configs = 0;
  for (std::size_t threads : {1, 8}) {
    for (std::size_t factor : {1, 3, 10}) {
      auto got = run_local(g, paths, threads, {}, {}, factor);
      c.expect(got.universes == ref.universes,
               "threads " + std::to_string(threads) + " factor " + std::to_string(factor));
      ++configs;
    }
  }
  for (std::size_t workers : {1, 3}) {
    FacilityOptions fo;
    fo.workers = workers;
    Facility fac(dir.path(), fo);
    ClusterExecutor exec(fac.scheduler_address());
    for (std::size_t factor : {1, 3, 10}) {
      auto before = fac.data().totals().bytes_served;
      auto run = run_distributed(exec, spec, fac.data_address(), factor);
      auto served = fac.data().totals().bytes_served - before;
      c.expect(run.report.merged.universes == ref.universes,
               "workers " + std::to_string(workers) + " factor " + std::to_string(factor));
      c.expect(sum_bytes_read(run.report.outcomes) + run.planner_bytes == served, "byte closure");
      ++configs;
    }
    fac.shutdown();
  }
  c.detail << configs << " configurations bit-identical over " << ref.universes.size() << " universes";
}

void crit7(Check& c) {
  TempDir dir;
  auto table = colflow::testing::mixed_table(5000, 8);
  write_dataset(table, 700, dir / "six.col");
  auto ds = Dataset::open((dir / "six.col").string());
  const auto& info = ds.info();
  c.expect(info.schema.size() == 6, "six columns");
  std::vector<std::string> cols{table[1].name, table[4].name};
  auto s = ds.read_range(cols, 0, info.total_entries);
  std::uint64_t rows = 0;
  while (auto b = s.next()) {
    c.expect(b->columns.size() == 2, "two columns per batch");
    rows += b->entry_count;
  }
  const auto footer = info.chunk_bytes(cols, 0, info.total_entries);
  std::uint64_t by_hand = 0;
  for (const auto& cl : info.clusters) {
    by_hand += cl.chunks[1].length + cl.chunks[4].length;
  }
  c.expect(rows == 5000, "all rows");
  c.expect(ds.account().chunk_bytes == footer, "chunk bytes equal footer sum");
  c.expect(footer == by_hand, "footer sum equals hand sum");
  c.expect(ds.account().bytes_read == info.metadata_bytes + footer, "nothing else read");
  c.expect(footer < info.data_bytes(), "fewer than all data bytes");
  c.detail << "read " << ds.account().chunk_bytes << " of " << info.data_bytes() << " data bytes, footer sum " << footer;
}

void crit8(Check& c) {
  TempDir dir;
  auto files = write_integer_files(dir, 3, 1500, 100);
  auto spec = integer_post_spec(files);
  std::vector<std::string> paths;
  for (const auto& f : files) paths.push_back((dir / f).string());
  const auto want = run_local(build(spec, Dataset::open(paths[0]).info().schema), paths, 1);

  FacilityOptions fo;
  fo.workers = 3;
  fo.processes = true;
  fo.exe = COLFLOW_CLI_PATH;
  fo.heartbeat = 200ms;
  fo.loss_timeout = 1000ms;
  fo.task_delay = 100ms;
  Facility fac(dir.path(), fo);
  ClusterExecutor exec(fac.scheduler_address());
  auto fut = std::async(std::launch::async, [&] { return run_distributed(exec, spec, fac.data_address()); });
  bool killed = false;
  for (int i = 0; i < 1000 && !killed; ++i) {
    for (const auto& e : fac.scheduler().events()) {
      if (e.kind == SchedulerEvent::Kind::Dispatch && e.worker == "w1") {
        ::kill(fac.worker_pids()[1], SIGKILL);
        killed = true;
        break;
      }
    }
    std::this_thread::sleep_for(10ms);
  }
  c.expect(killed, "a worker was killed mid-run");
  auto run = fut.get();
  std::map<std::uint64_t, std::uint32_t> attempts;
  bool lost = false;
  for (const auto& e : fac.scheduler().events()) {
    if (e.kind == SchedulerEvent::Kind::Dispatch) attempts[e.task_id] = std::max(attempts[e.task_id], e.attempt);
    lost = lost || (e.kind == SchedulerEvent::Kind::WorkerLost && e.worker == "w1");
  }
  fac.shutdown();
  std::uint32_t worst = 0, retried = 0;
  for (auto [id, a] : attempts) {
    worst = std::max(worst, a);
    retried += a > 1;
  }
  c.expect(lost, "loss detected");
  c.expect(run.report.merged.universes == want.universes, "result equals reference");
  c.expect(run.report.merged.events_processed == 4500, "every event processed once");
  c.expect(worst <= 1 + fo.max_retries, "extra attempts <= max_retries");
  c.detail << attempts.size() << " tasks, " << retried << " retried, max attempt " << worst << ", result exact";
}

void crit9(Check& c) {
  auto& b = shared_bench();
  c.expect(b.error.empty(), "bench ran: " + b.error);
  for (const auto& r : b.result.runs) {
    c.expect(r.client_bytes == r.served_bytes, r.mode + " " + r.phase + " closure");
    c.detail << r.mode << "-" << r.phase << " " << r.client_bytes << "/" << r.served_bytes << "; ";
  }
  c.expect(b.result.runs.size() == 4, "four scenarios");
  c.expect(b.result.byte_closure, "bench closure flag");
}

void crit10(Check& c) {
  TempDir dir;
  auto table = colflow::testing::physics_table(1000, 2024);
  write_dataset(table, 128, dir / "f.col");
  auto spec = default_postselection_spec();
  auto g = build(spec, Dataset::open((dir / "f.col").string()).info().schema);
  auto got = run_range(g, EntryRange{(dir / "f.col").string(), 0, 1000}, RunMode::single_pass(), {dir.path(), "0"});
  const double hand = colflow::testing::oracle_difference(got, hand_postselection(table));
  const double generic = colflow::testing::oracle_difference(got, colflow::testing::oracle_run(spec, table));
  c.expect(hand <= 1e-12, "hand-written loop at 1e-12");
  c.expect(generic <= 1e-12, "generic oracle at 1e-12");
  c.expect(got.scalar("nominal", "n_selected").value > 0, "non-empty selection");

  // Every universe also equals its own isolated pass.
  double iso = 0.0;
  for (const auto& u : g.universe_list()) {
    auto one = run_range(g, EntryRange{(dir / "f.col").string(), 0, 1000}, RunMode::only(u.label), {dir.path(), "0"});
    PartialResult sub;
    sub.universes = {*got.universe(u.label)};
    iso = std::max(iso, max_relative_difference(one, sub));
  }
  c.expect(iso <= 1e-12, "isolated universes at 1e-12");
  c.detail << "1000 events, " << got.universes.size() << " universes, hand loop " << fmt(hand) << ", generic "
           << fmt(generic) << ", isolated " << fmt(iso);
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, Criterion>> criteria{
      {"cross-mode equivalence", crit1},   {"pass-count law", crit2},
      {"payload decomposition", crit3},    {"rate formula", crit4},
      {"derived ratios", crit5},           {"partition/thread/worker invariance", crit6},
      {"column pruning", crit7},           {"fault tolerance", crit8},
      {"byte-accounting closure", crit9},  {"oracle equivalence", crit10},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Check c;
    try {
      criteria[i].second(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.detail << "[exception: " << e.what() << "]";
    }
    failed += !c.ok;
    std::printf("criterion %zu: %s (%s): %s\n", i + 1, c.ok ? "PASS" : "FAIL", criteria[i].first.c_str(),
                c.detail.str().c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
