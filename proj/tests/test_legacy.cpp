#include <gtest/gtest.h>

#include <fstream>

#include "colflow/bench.hpp"
#include "colflow/legacy.hpp"
#include "support.hpp"

using namespace colflow;
using colflow::testing::TempDir;

namespace {

// Rows of every listed file, each row rendered as one comparable string.
std::vector<std::string> rows_of(const std::filesystem::path& root, const std::vector<std::string>& files) {
  std::vector<std::string> rows;
  for (const auto& f : files) {
    auto ds = Dataset::open((root / f).string());
    std::vector<std::string> cols;
    for (const auto& c : ds.info().schema) cols.push_back(c.name);
    auto s = ds.read_range(cols, 0, ds.info().total_entries);
    while (auto b = s.next()) {
      for (std::size_t i = 0; i < b->entry_count; ++i) {
        std::string row;
        for (const auto& c : b->columns) row += expr::to_string(expr::value_at(c.data, i)) + "|";
        rows.push_back(row);
      }
    }
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

struct LegacyRig {
  TempDir dir;
  Manifest manifest;
  std::unique_ptr<Facility> fac;

  explicit LegacyRig(std::size_t nfiles = 3, std::uint64_t events = 3000) {
    manifest = gen(GenConfig{nfiles, events, 500, 7}, dir.path());
    FacilityOptions fo;
    fo.workers = 2;
    fac = std::make_unique<Facility>(dir.path(), fo);
  }
  PipelineSpec pre(const std::string& out) const {
    auto s = default_preselection_spec();
    s.dataset = manifest.files;
    for (auto& st : s.stages) {
      if (st.kind == StageKind::Snapshot) st.out = out;
    }
    return s;
  }
  LegacyOptions opts(const std::string& sub, std::uint64_t payload = 0) const {
    LegacyOptions o;
    o.out_dir = dir / sub;
    o.payload_bytes = payload;
    if (payload > 0) ensure_payload(dir / o.payload_uri, payload);
    return o;
  }
};

}  // namespace

TEST(Legacy, PassCount) {
  EXPECT_EQ(legacy_pass_count(default_postselection_spec()), 9u);
  EXPECT_EQ(legacy_pass_count(default_preselection_spec()), 1u);
  auto s = default_postselection_spec();
  std::erase_if(s.stages, [](const StageSpec& st) {
    return st.kind == StageKind::Vary && st.variation == VariationKind::Topology;
  });
  EXPECT_EQ(legacy_pass_count(s), 1u);
}

TEST(Legacy, OneJobPerFile) {
  std::vector<std::string> files{"a.col", "b.col", "c.col", "d.col"};
  LegacyOptions o;
  o.payload_bytes = 123;
  auto pre = legacy_jobs(default_preselection_spec(), files, Phase::Preselection, o);
  ASSERT_EQ(pre.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(pre[i].task_id, i + 1);
    EXPECT_EQ(pre[i].range, (EntryRange{files[i], 0, kToEnd}));
    EXPECT_EQ(pre[i].mode, RunMode::only("nominal"));
    EXPECT_EQ(pre[i].payload_bytes, 123u);
    EXPECT_EQ(pre[i].payload_uri, "payload.bin");
  }
  auto post = legacy_jobs(default_postselection_spec(), files, Phase::Postselection, o);
  ASSERT_EQ(post.size(), 4u);
  EXPECT_EQ(post[0].mode, RunMode::legacy_passes());
  // preselection needs a snapshot stage
  EXPECT_THROW(legacy_jobs(default_postselection_spec(), files, Phase::Preselection, o), ValidationError);
}

TEST(ResultFile, RoundTripAndErrors) {
  TempDir dir;
  PartialResult p;
  Histo1D h("h", 3, 0.0, 3.0);
  h.fill(1.5, 2.0);
  p.universes = {{"nominal", {{"h", h}, {"n", ScalarAccumulator{ScalarAccumulator::Kind::Count, 1}}}}};
  p.events_processed = 10;
  write_result_file(dir / "a.res", "ident", p);
  std::string id;
  EXPECT_EQ(read_result_file(dir / "a.res", &id), p);
  EXPECT_EQ(id, "ident");

  std::ofstream(dir / "bad.res", std::ios::binary) << "XXXX";
  EXPECT_THROW(read_result_file(dir / "bad.res"), FormatError);
  EXPECT_THROW(read_result_file(dir / "missing.res"), Error);

  // truncation
  std::ifstream in(dir / "a.res", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  std::ofstream(dir / "trunc.res", std::ios::binary) << bytes.substr(0, bytes.size() - 5);
  EXPECT_THROW(read_result_file(dir / "trunc.res"), FormatError);
}

TEST(ResultFile, MergeOutputs) {
  TempDir dir;
  std::mt19937_64 rng(4);
  std::vector<std::filesystem::path> files;
  std::uint64_t entries = 0;
  for (int i = 0; i < 5; ++i) {
    Histo1D h("h", 10, 0.0, 10.0);
    for (int k = 0; k < 100; ++k) h.fill(static_cast<double>(rng() % 12), static_cast<double>(rng() % 3));
    entries += h.entries();
    PartialResult p;
    p.universes = {{"nominal", {{"h", h}}}, {"up", {{"h", h}}}};
    files.push_back(dir / ("j" + std::to_string(i) + ".res"));
    write_result_file(files.back(), "same", p);
  }
  auto merged = merge_outputs(files);
  EXPECT_EQ(merged.histo("nominal", "h").entries(), entries);

  auto shuffled = files;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  EXPECT_EQ(merge_outputs(shuffled).universes, merged.universes);

  std::vector<std::filesystem::path> one{files[0]};
  EXPECT_EQ(merge_outputs(one), read_result_file(files[0]));

  write_result_file(dir / "other.res", "different", read_result_file(files[0]));
  auto mixed = files;
  mixed.push_back(dir / "other.res");
  EXPECT_THROW(merge_outputs(mixed), ValidationError);
}

TEST(Legacy, ZeroPayloadReadsOnlyData) {
  LegacyRig s(4, 1000);
  ClusterExecutor exec(s.fac->scheduler_address());
  auto rep = run_legacy_preselection(exec, s.pre("legacy/skim"), s.manifest.files, s.opts("out"));
  ASSERT_EQ(rep.jobs.size(), 4u);
  for (const auto& j : rep.jobs) {
    auto info = Dataset::open((s.dir / j.task.range.uri).string()).info();
    EXPECT_EQ(j.partial.chunk_bytes, info.data_bytes());
    EXPECT_EQ(j.partial.bytes_read, info.data_bytes() + info.metadata_bytes);
    EXPECT_LE(j.partial.t_loop, j.partial.t_total);
  }
}

TEST(Legacy, PayloadAddsExactlyPerJob) {
  LegacyRig s(4, 1000);
  ClusterExecutor exec(s.fac->scheduler_address());
  auto without = run_legacy_preselection(exec, s.pre("a/skim"), s.manifest.files, s.opts("o1"));
  auto with = run_legacy_preselection(exec, s.pre("b/skim"), s.manifest.files, s.opts("o2", 100000));
  auto total = [](const LegacyRunReport& r) {
    std::uint64_t b = 0;
    for (const auto& j : r.jobs) b += j.partial.bytes_read;
    return b;
  };
  EXPECT_EQ(total(with) - total(without), 4u * 100000u);
}

TEST(Legacy, SkimMatchesDistributedSnapshot) {
  LegacyRig s;
  ClusterExecutor exec(s.fac->scheduler_address());
  auto legacy = run_legacy_preselection(exec, s.pre("legacy/skim"), s.manifest.files, s.opts("out"));
  auto dist = run_distributed(exec, s.pre("new/skim"), s.fac->data_address());
  EXPECT_EQ(legacy.skim_files.size(), 3u);
  EXPECT_GT(dist.report.merged.snapshot_parts.size(), 3u);
  auto a = rows_of(s.dir.path(), legacy.skim_files);
  auto b = rows_of(s.dir.path(), dist.report.merged.snapshot_parts);
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, b);
  EXPECT_EQ(static_cast<double>(a.size()), legacy.merged.scalar("nominal", "n_skimmed").value);
}

TEST(Legacy, PostselectionMatchesDistributedAndObeysPassLaw) {
  LegacyRig s;
  ClusterExecutor exec(s.fac->scheduler_address());
  auto pre = run_legacy_preselection(exec, s.pre("legacy/skim"), s.manifest.files, s.opts("out"));
  auto post = default_postselection_spec();
  post.dataset = pre.skim_files;
  auto legacy = run_legacy_postselection(exec, post, pre.skim_files, s.opts("out"));
  auto dist = run_distributed(exec, post, s.fac->data_address());
  EXPECT_EQ(legacy.passes, 9u);
  EXPECT_EQ(legacy.merged.universes.size(), 31u);
  EXPECT_LE(max_relative_difference(legacy.merged, dist.report.merged), 1e-9);
  EXPECT_EQ(legacy.merged.chunk_bytes, 9 * dist.report.merged.chunk_bytes);
  EXPECT_EQ(legacy.merged.events_processed, dist.report.merged.events_processed);
  // jobs.csv holds both phases with their pass counts
  std::ifstream csv(s.dir / "out/jobs.csv");
  std::string header, line;
  std::getline(csv, header);
  EXPECT_EQ(header, "task_id,worker,events,t_total_s,t_loop_s,bytes_read,attempt,phase,passes");
  std::size_t pre_rows = 0, post_rows = 0;
  while (std::getline(csv, line)) {
    pre_rows += line.ends_with(",pre,1");
    post_rows += line.ends_with(",post,9");
  }
  EXPECT_EQ(pre_rows, 3u);
  EXPECT_EQ(post_rows, 3u);
  EXPECT_EQ(legacy.result_files.size(), 3u);
  for (const auto& f : legacy.result_files) EXPECT_TRUE(std::filesystem::exists(f));
  EXPECT_GE(legacy.wall_seconds, legacy.jobs_seconds);
}

TEST(Legacy, NoTopologyMeansSameBytesAsNewMode) {
  LegacyRig s(2, 2000);
  ClusterExecutor exec(s.fac->scheduler_address());
  auto pre = run_legacy_preselection(exec, s.pre("legacy/skim"), s.manifest.files, s.opts("out"));
  auto post = default_postselection_spec();
  std::erase_if(post.stages, [](const StageSpec& st) {
    return st.kind == StageKind::Vary && st.variation == VariationKind::Topology;
  });
  post.dataset = pre.skim_files;
  auto legacy = run_legacy_postselection(exec, post, pre.skim_files, s.opts("out"));
  auto dist = run_distributed(exec, post, s.fac->data_address());
  EXPECT_EQ(legacy.passes, 1u);
  EXPECT_EQ(legacy.merged.chunk_bytes, dist.report.merged.chunk_bytes);
  EXPECT_LE(max_relative_difference(legacy.merged, dist.report.merged), 1e-9);
}
