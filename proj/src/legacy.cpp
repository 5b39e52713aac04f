#include "colflow/legacy.hpp"

#include <chrono>
#include <fstream>
#include <iterator>

#include "colflow/error.hpp"
#include "colflow/proto.hpp"

namespace colflow {

using Clock = std::chrono::steady_clock;

namespace {

constexpr char kResultMagic[4] = {'C', 'F', 'R', 'S'};
constexpr std::uint16_t kResultVersion = 1;

}  // namespace

std::string_view phase_name(Phase p) { return p == Phase::Preselection ? "pre" : "post"; }

std::size_t legacy_pass_count(const PipelineSpec& spec) {
  std::size_t n = 1;
  for (const auto& st : spec.stages) {
    if (st.kind == StageKind::Vary && st.variation == VariationKind::Topology) n += st.tags.size();
  }
  return n;
}

std::vector<TaskSpec> legacy_jobs(const PipelineSpec& spec, std::span<const std::string> files, Phase phase,
                                  const LegacyOptions& opts) {
  if (phase == Phase::Preselection && !spec.has_snapshot()) {
    throw ValidationError("legacy preselection needs a snapshot stage");
  }
  std::vector<TaskSpec> jobs;
  for (std::size_t i = 0; i < files.size(); ++i) {
    TaskSpec t;
    t.task_id = i + 1;
    t.range = EntryRange{files[i], 0, kToEnd};
    t.mode = phase == Phase::Preselection ? RunMode::only("nominal") : RunMode::legacy_passes();
    t.payload_uri = opts.payload_bytes > 0 ? opts.payload_uri : "";
    t.payload_bytes = opts.payload_bytes;
    jobs.push_back(std::move(t));
  }
  return jobs;
}

void write_result_file(const std::filesystem::path& path, const std::string& identity, const PartialResult& p) {
  ByteWriter w;
  w.put_bytes(std::string_view(kResultMagic, 4));
  w.put<std::uint16_t>(kResultVersion);
  w.put_blob(identity);
  proto::serialize(w, p);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  const auto& buf = w.buf();
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("cannot write result file " + path.string());
}

PartialResult read_result_file(const std::filesystem::path& path, std::string* identity) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read result file " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    ByteReader r(bytes);
    auto magic = r.get_bytes(4);
    if (!std::equal(magic.begin(), magic.end(), kResultMagic)) throw FormatError("bad magic");
    auto version = r.get<std::uint16_t>();
    if (version != kResultVersion) throw FormatError("unsupported version " + std::to_string(version));
    auto id = r.get_blob();
    auto p = proto::deserialize_partial(r);
    if (!r.done()) throw FormatError("trailing bytes");
    if (identity) *identity = std::move(id);
    return p;
  } catch (const ProtocolError& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

PartialResult merge_outputs(std::span<const std::filesystem::path> files) {
  PartialResult merged;
  std::string first;
  for (std::size_t i = 0; i < files.size(); ++i) {
    std::string id;
    auto p = read_result_file(files[i], &id);
    if (i == 0) {
      first = std::move(id);
    } else if (id != first) {
      throw ValidationError("result file " + files[i].string() + " comes from a different graph");
    }
    merged.merge(p);
  }
  return merged;
}

LegacyRunReport run_legacy(Executor& exec, const PipelineSpec& spec, std::span<const std::string> files, Phase phase,
                           const LegacyOptions& opts) {
  auto jobs = legacy_jobs(spec, files, phase, opts);
  auto t0 = Clock::now();
  ExecuteOptions eo;
  eo.parallel_jobs = opts.parallel_jobs;
  auto exec_report = exec.execute(spec, jobs, eo);
  auto t_jobs = Clock::now();

  LegacyRunReport rep;
  rep.phase = phase;
  rep.passes = phase == Phase::Postselection ? legacy_pass_count(spec) : 1;
  const std::string identity = dump_spec(spec);
  const auto jobs_dir = opts.out_dir / ("jobs-" + std::string(phase_name(phase)));
  for (const auto& o : exec_report.outcomes) {
    auto path = jobs_dir / ("job" + std::to_string(o.task.task_id) + ".res");
    write_result_file(path, identity, o.partial);
    rep.result_files.push_back(path);
    for (const auto& s : o.partial.snapshot_parts) rep.skim_files.push_back(s);
  }
  auto t_merge = Clock::now();
  rep.merged = merge_outputs(rep.result_files);
  auto t_end = Clock::now();

  rep.jobs = std::move(exec_report.outcomes);
  rep.jobs_seconds = std::chrono::duration<double>(t_jobs - t0).count();
  rep.merge_seconds = std::chrono::duration<double>(t_end - t_merge).count();
  rep.wall_seconds = std::chrono::duration<double>(t_end - t0).count();

  std::vector<JobRecord> records;
  for (const auto& o : rep.jobs) records.push_back(to_record(o));
  append_jobs_csv(opts.out_dir / "jobs.csv", records, JobCsvExtra{std::string(phase_name(phase)), rep.passes});
  return rep;
}

LegacyRunReport run_legacy_preselection(Executor& exec, const PipelineSpec& spec, std::span<const std::string> files,
                                        const LegacyOptions& opts) {
  return run_legacy(exec, spec, files, Phase::Preselection, opts);
}

LegacyRunReport run_legacy_postselection(Executor& exec, const PipelineSpec& spec, std::span<const std::string> skims,
                                         const LegacyOptions& opts) {
  return run_legacy(exec, spec, skims, Phase::Postselection, opts);
}

}  // namespace colflow
