#include "colflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <tuple>
#include <sstream>

#include "colflow/error.hpp"

namespace colflow {

JobRecord to_record(const TaskOutcome& o) {
  return JobRecord{o.task.task_id,       o.worker,          o.partial.events_processed, o.partial.t_total,
                   o.partial.t_loop,     o.partial.bytes_read, o.attempt,              o.partial.peak_buffer_bytes};
}

std::vector<JobRecord> to_records(const ExecutionReport& r) {
  std::vector<JobRecord> out;
  for (const auto& o : r.outcomes) out.push_back(to_record(o));
  return out;
}

double job_rate(std::span<const JobRecord> records, bool use_loop_time) {
  if (records.empty()) throw ValidationError("job_rate: no job records");
  double events = 0.0;
  double t = 0.0;
  for (const auto& r : records) {
    events += static_cast<double>(r.events);
    t += use_loop_time ? r.t_loop : r.t;
  }
  if (!(t > 0.0)) throw ValidationError("job_rate: total job time is zero");
  return events / t;
}

double overall_rate(std::uint64_t total_events, double wall_seconds) {
  if (!(wall_seconds > 0.0)) throw ValidationError("overall_rate: wall time must be positive");
  return static_cast<double>(total_events) / wall_seconds;
}

RunMetrics aggregate(std::string run_id, std::string mode, std::string phase, std::span<const JobRecord> records,
                     double wall_seconds, std::uint64_t extra_bytes) {
  RunMetrics m;
  m.run_id = std::move(run_id);
  m.mode = std::move(mode);
  m.phase = std::move(phase);
  m.overall_time_s = wall_seconds;
  m.network_read_bytes = extra_bytes;
  for (const auto& r : records) {
    m.total_events += r.events;
    m.network_read_bytes += r.bytes_read;
    m.peak_buffer_bytes = std::max(m.peak_buffer_bytes, r.peak_buffer_bytes);
  }
  m.n_jobs = records.size();
  m.overall_rate_hz = m.total_events == 0 ? 0.0 : overall_rate(m.total_events, wall_seconds);
  if (!records.empty()) {
    double t = 0.0;
    double tl = 0.0;
    for (const auto& r : records) {
      t += r.t;
      tl += r.t_loop;
    }
    m.job_rate_hz = t > 0.0 ? job_rate(records, false) : 0.0;
    m.job_loop_rate_hz = tl > 0.0 ? job_rate(records, true) : 0.0;
  }
  return m;
}

namespace {

const char* kMetricsHeader =
    "run_id,mode,phase,overall_time_s,overall_rate_hz,job_rate_hz,job_loop_rate_hz,network_read_bytes,total_events,"
    "n_jobs,peak_buffer_bytes";

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool needs_header(const std::filesystem::path& path) {
  std::error_code ec;
  return !std::filesystem::exists(path, ec) || std::filesystem::file_size(path, ec) == 0;
}

std::ofstream open_append(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw Error("cannot write " + path.string());
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void check_cell(const std::string& s) {
  if (s.find_first_of(",\n\r") != std::string::npos) throw ValidationError("CSV field contains a separator: " + s);
}

}  // namespace

void append_metrics_csv(const std::filesystem::path& path, std::span<const RunMetrics> rows) {
  const bool header = needs_header(path);
  auto out = open_append(path);
  if (header) out << kMetricsHeader << "\n";
  for (const auto& r : rows) {
    check_cell(r.run_id);
    check_cell(r.mode);
    check_cell(r.phase);
    out << r.run_id << ',' << r.mode << ',' << r.phase << ',' << fmt_double(r.overall_time_s) << ','
        << fmt_double(r.overall_rate_hz) << ',' << fmt_double(r.job_rate_hz) << ',' << fmt_double(r.job_loop_rate_hz)
        << ',' << r.network_read_bytes << ',' << r.total_events << ',' << r.n_jobs << ',' << r.peak_buffer_bytes
        << "\n";
  }
  if (!out) throw Error("write failed: " + path.string());
}

std::vector<RunMetrics> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read metrics file " + path.string());
  std::string line;
  std::vector<RunMetrics> rows;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& why) {
    throw ValidationError(path.string() + ":" + std::to_string(lineno) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = split_csv(line);
    if (lineno == 1) {
      if (cells.empty() || cells[0] != "run_id") fail("missing metrics header");
      if (cells.size() != 10 && cells.size() != 11) fail("expected 10 or 11 columns in header");
      continue;
    }
    if (cells.size() != 10 && cells.size() != 11) fail("expected 10 or 11 columns, got " + std::to_string(cells.size()));
    RunMetrics r;
    try {
      std::size_t pos = 0;
      auto num = [&](const std::string& s) {
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
      };
      auto integer = [&](const std::string& s) {
        auto v = std::stoull(s, &pos);
        if (pos != s.size() || s.front() == '-') throw std::invalid_argument(s);
        return static_cast<std::uint64_t>(v);
      };
      r.run_id = cells[0];
      r.mode = cells[1];
      r.phase = cells[2];
      r.overall_time_s = num(cells[3]);
      r.overall_rate_hz = num(cells[4]);
      r.job_rate_hz = num(cells[5]);
      r.job_loop_rate_hz = num(cells[6]);
      r.network_read_bytes = integer(cells[7]);
      r.total_events = integer(cells[8]);
      r.n_jobs = integer(cells[9]);
      if (cells.size() == 11) r.peak_buffer_bytes = integer(cells[10]);
    } catch (const std::logic_error&) {
      fail("malformed number");
    }
    rows.push_back(std::move(r));
  }
  if (lineno == 0) fail("empty metrics file");
  return rows;
}

void append_jobs_csv(const std::filesystem::path& path, std::span<const JobRecord> records,
                     const std::optional<JobCsvExtra>& extra) {
  const bool header = needs_header(path);
  auto out = open_append(path);
  if (header) {
    out << "task_id,worker,events,t_total_s,t_loop_s,bytes_read,attempt";
    if (extra) out << ",phase,passes";
    out << "\n";
  }
  for (const auto& r : records) {
    check_cell(r.worker);
    out << r.id << ',' << r.worker << ',' << r.events << ',' << fmt_double(r.t) << ',' << fmt_double(r.t_loop) << ','
        << r.bytes_read << ',' << r.attempt;
    if (extra) out << ',' << extra->phase << ',' << extra->passes;
    out << "\n";
  }
  if (!out) throw Error("write failed: " + path.string());
}

Estimate estimate(std::span<const double> values) {
  Estimate e;
  e.n = values.size();
  if (values.empty()) return e;
  double sum = 0.0;
  for (double v : values) sum += v;
  e.mean = sum / static_cast<double>(values.size());
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  e.error = (*hi - *lo) / 2.0;
  return e;
}

double speedup(double t_legacy, double t_new) {
  if (!(t_new > 0.0)) throw ValidationError("speedup: new-mode time must be positive");
  return t_legacy / t_new;
}

double time_reduction(double t_legacy, double t_new) {
  if (!(t_legacy > 0.0)) throw ValidationError("time_reduction: legacy time must be positive");
  return 1.0 - t_new / t_legacy;
}

namespace {

int phase_rank(const std::string& p) {
  if (p == "pre") return 0;
  if (p == "post") return 1;
  if (p == "total") return 2;
  return 3;
}

int mode_rank(const std::string& m) { return m == "legacy" ? 0 : m == "new" ? 1 : 2; }

ScenarioSummary summarize(const std::string& mode, const std::string& phase, const std::vector<const RunMetrics*>& rows) {
  auto field = [&](auto get) {
    std::vector<double> v;
    for (const auto* r : rows) v.push_back(static_cast<double>(get(*r)));
    return estimate(v);
  };
  ScenarioSummary s;
  s.mode = mode;
  s.phase = phase;
  s.overall_time_s = field([](const RunMetrics& r) { return r.overall_time_s; });
  s.overall_rate_hz = field([](const RunMetrics& r) { return r.overall_rate_hz; });
  s.job_rate_hz = field([](const RunMetrics& r) { return r.job_rate_hz; });
  s.job_loop_rate_hz = field([](const RunMetrics& r) { return r.job_loop_rate_hz; });
  s.network_read_bytes = field([](const RunMetrics& r) { return r.network_read_bytes; });
  s.total_events = field([](const RunMetrics& r) { return r.total_events; });
  s.n_jobs = field([](const RunMetrics& r) { return r.n_jobs; });
  s.peak_buffer_bytes = field([](const RunMetrics& r) { return r.peak_buffer_bytes; });
  return s;
}

Estimate add(const Estimate& a, const Estimate& b) { return {a.mean + b.mean, a.error + b.error, std::min(a.n, b.n)}; }

Ratio ratio(const std::string& phase, const ScenarioSummary& legacy, const ScenarioSummary& neu) {
  Ratio r;
  r.phase = phase;
  const auto& tl = legacy.overall_time_s;
  const auto& tn = neu.overall_time_s;
  double s = speedup(tl.mean, tn.mean);
  double rel = (tl.mean > 0 ? tl.error / tl.mean : 0.0) + (tn.mean > 0 ? tn.error / tn.mean : 0.0);
  r.speedup = {s, s * rel, std::min(tl.n, tn.n)};
  double red = time_reduction(tl.mean, tn.mean);
  r.reduction = {red, (1.0 - red) * rel, std::min(tl.n, tn.n)};
  if (neu.network_read_bytes.mean > 0 && legacy.network_read_bytes.n > 0) {
    r.network_ratio = legacy.network_read_bytes.mean / neu.network_read_bytes.mean;
  }
  return r;
}

}  // namespace

Report build_report(std::span<const RunMetrics> rows) {
  if (rows.empty()) throw ValidationError("report: no metrics rows");
  std::map<std::pair<std::string, std::string>, std::vector<const RunMetrics*>> groups;
  for (const auto& r : rows) groups[{r.mode, r.phase}].push_back(&r);

  std::map<std::pair<std::string, std::string>, ScenarioSummary> by_key;
  for (const auto& [key, g] : groups) by_key[key] = summarize(key.first, key.second, g);

  std::set<std::string> modes;
  for (const auto& [key, s] : by_key) modes.insert(key.first);
  for (const auto& m : modes) {
    auto pre = by_key.find({m, "pre"});
    auto post = by_key.find({m, "post"});
    if (by_key.count({m, "total"}) || pre == by_key.end() || post == by_key.end()) continue;
    ScenarioSummary t;
    t.mode = m;
    t.phase = "total";
    t.overall_time_s = add(pre->second.overall_time_s, post->second.overall_time_s);
    t.network_read_bytes = add(pre->second.network_read_bytes, post->second.network_read_bytes);
    t.n_jobs = add(pre->second.n_jobs, post->second.n_jobs);
    t.peak_buffer_bytes = {std::max(pre->second.peak_buffer_bytes.mean, post->second.peak_buffer_bytes.mean), 0.0,
                           std::min(pre->second.peak_buffer_bytes.n, post->second.peak_buffer_bytes.n)};
    by_key[{m, "total"}] = t;
  }

  Report rep;
  for (auto& [key, s] : by_key) rep.scenarios.push_back(s);
  std::sort(rep.scenarios.begin(), rep.scenarios.end(), [](const auto& a, const auto& b) {
    return std::make_tuple(mode_rank(a.mode), a.mode, phase_rank(a.phase), a.phase) <
           std::make_tuple(mode_rank(b.mode), b.mode, phase_rank(b.phase), b.phase);
  });
  for (const char* phase : {"pre", "post", "total"}) {
    auto l = by_key.find({"legacy", phase});
    auto n = by_key.find({"new", phase});
    if (l == by_key.end() || n == by_key.end()) continue;
    if (!(n->second.overall_time_s.mean > 0.0) || !(l->second.overall_time_s.mean > 0.0)) continue;
    rep.ratios.push_back(ratio(phase, l->second, n->second));
  }
  return rep;
}

namespace {

std::string cell(const Estimate& e, int precision, double scale = 1.0) {
  if (e.n == 0) return "-";
  char buf[96];
  if (e.n > 1) {
    std::snprintf(buf, sizeof buf, "%.*f ± %.*f", precision, e.mean * scale, precision, e.error * scale);
  } else {
    std::snprintf(buf, sizeof buf, "%.*f", precision, e.mean * scale);
  }
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  // Count code points so the ± sign does not skew columns.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return cps >= width ? s + " " : s + std::string(width - cps, ' ');
}

}  // namespace

std::string render_report(const Report& report) {
  std::ostringstream out;
  const std::size_t label_w = 28;
  std::size_t col_w = 18;
  std::vector<std::vector<std::string>> cols;
  for (const auto& s : report.scenarios) {
    cols.push_back({s.mode + " " + s.phase, cell(s.overall_time_s, 2), cell(s.overall_rate_hz, 1),
                    cell(s.job_rate_hz, 1), cell(s.job_loop_rate_hz, 1), cell(s.network_read_bytes, 2, 1e-6),
                    cell(s.total_events, 0), cell(s.n_jobs, 0)});
    for (const auto& c : cols.back()) col_w = std::max(col_w, c.size() + 2);
  }
  const char* labels[] = {"",
                          "Overall time [s]",
                          "Overall rate [Hz]",
                          "Job rate [Hz]",
                          "Job event-loop rate [Hz]",
                          "Network read [MB]",
                          "Events",
                          "Jobs"};
  for (std::size_t row = 0; row < std::size(labels); ++row) {
    out << pad(labels[row], label_w);
    for (const auto& c : cols) out << pad(c[row], col_w);
    out << "\n";
  }
  if (!report.ratios.empty()) {
    out << "\n";
    for (const auto& r : report.ratios) {
      out << pad("Speedup (" + r.phase + ")", label_w) << cell(r.speedup, 2) << "\n";
      out << pad("Time reduction (" + r.phase + ")", label_w) << cell(r.reduction, 1, 100.0) << " %\n";
      if (r.network_ratio) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.3f", *r.network_ratio);
        out << pad("Network read ratio (" + r.phase + ")", label_w) << buf << "\n";
      }
    }
  }
  out << "\nMemory proxy: peak engine buffer per job [MB] (not process RSS; not comparable to node memory)\n";
  for (const auto& s : report.scenarios) {
    out << pad("  " + s.mode + " " + s.phase, label_w) << cell(s.peak_buffer_bytes, 3, 1e-6) << "\n";
  }
  return out.str();
}

}  // namespace colflow
