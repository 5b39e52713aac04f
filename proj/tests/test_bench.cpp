#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "colflow/bench.hpp"
#include "support.hpp"

using namespace colflow;
using colflow::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

}  // namespace

TEST(Gen, ByteIdenticalForSameConfig) {
  TempDir a, b, c;
  GenConfig cfg{3, 1500, 400, 11};
  auto ma = gen(cfg, a.path());
  auto mb = gen(cfg, b.path());
  ASSERT_EQ(ma.files, mb.files);
  for (const auto& f : ma.files) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  cfg.seed = 12;
  auto mc = gen(cfg, c.path());
  EXPECT_NE(slurp(a / ma.files[0]), slurp(c / mc.files[0]));
}

TEST(Gen, ManifestAndSchema) {
  TempDir dir;
  auto m = gen(GenConfig{4, 1234, 500, 1}, dir.path());
  ASSERT_EQ(m.files.size(), 4u);
  EXPECT_EQ(m.files[0], "data_000.col");
  EXPECT_EQ(m.total_entries, 4u * 1234u);
  auto back = read_manifest(dir.path());
  EXPECT_EQ(back.files, m.files);
  EXPECT_EQ(back.entries, m.entries);
  EXPECT_EQ(back.total_entries, m.total_entries);
  EXPECT_EQ(back.config.cluster_size, 500u);
  for (const auto& f : m.files) {
    auto ds = Dataset::open((dir / f).string());
    EXPECT_EQ(ds.info().schema, bench_schema());
    EXPECT_EQ(ds.info().total_entries, 1234u);
    ASSERT_EQ(ds.info().clusters.size(), 3u);
    EXPECT_EQ(ds.info().clusters.back().entry_count, 234u);
  }
  // Generated events respect the schema's physical ranges.
  auto ds = Dataset::open((dir / m.files[0]).string());
  std::vector<std::string> cols{"nJet", "Jet_pt"};
  auto s = ds.read_range(cols, 0, 1234);
  while (auto batch = s.next()) {
    const auto& nj = std::get<std::vector<std::int64_t>>(batch->columns[0].data);
    const auto& pt = std::get<VecColumn<double>>(batch->columns[1].data);
    for (std::size_t i = 0; i < batch->entry_count; ++i) {
      auto row = pt.row(i);
      EXPECT_EQ(static_cast<std::int64_t>(row.size()), nj[i]);
      EXPECT_TRUE(std::is_sorted(row.begin(), row.end(), std::greater<>()));
    }
  }
}

TEST(Gen, ZeroEventsAndBadConfig) {
  TempDir dir;
  auto m = gen(GenConfig{2, 0, 100, 1}, dir.path());
  EXPECT_EQ(m.total_entries, 0u);
  for (const auto& f : m.files) EXPECT_EQ(Dataset::open((dir / f).string()).info().total_entries, 0u);
  EXPECT_THROW(gen(GenConfig{2, 10, 0, 1}, dir / "x"), ValidationError);
  EXPECT_THROW(gen(GenConfig{0, 10, 10, 1}, dir / "y"), ValidationError);
  EXPECT_THROW(read_manifest(dir / "nothing"), ValidationError);
  std::ofstream(dir / "manifest.json") << "{\"files\": 3}";
  EXPECT_THROW(read_manifest(dir.path()), ValidationError);
}

TEST(DefaultSpecs, ShapeOfTheWorkload) {
  auto post = default_postselection_spec();
  std::size_t histos = 0, variations = 0, topology = 0;
  for (const auto& st : post.stages) {
    histos += st.kind == StageKind::Histo1D;
    if (st.kind == StageKind::Vary) {
      variations += st.tags.size();
      if (st.variation == VariationKind::Topology) topology += st.tags.size();
    }
  }
  EXPECT_EQ(histos, 3u);
  EXPECT_EQ(variations, 30u);
  EXPECT_EQ(topology, 8u);
  auto skim_schema = bench_schema();
  skim_schema.push_back({"Jet_pt_corr", Dtype::VEC_F64});
  auto g = build(post, skim_schema);
  EXPECT_EQ(g.universe_list().size(), 31u);

  auto pre = default_preselection_spec();
  EXPECT_TRUE(pre.has_snapshot());
  EXPECT_FALSE(post.has_snapshot());
  EXPECT_NO_THROW(build(pre, bench_schema()));
}

TEST(DefaultSpecs, ShippedFilesMatchEmbeddedCopies) {
  const std::filesystem::path src = COLFLOW_SOURCE_DIR;
  EXPECT_EQ(dump_spec(load_spec_file(src / "specs/preselection.json")), dump_spec(default_preselection_spec()));
  EXPECT_EQ(dump_spec(load_spec_file(src / "specs/postselection.json")), dump_spec(default_postselection_spec()));
}

TEST(Payload, EnsureWritesOnce) {
  TempDir dir;
  ensure_payload(dir / "p.bin", 5000);
  EXPECT_EQ(std::filesystem::file_size(dir / "p.bin"), 5000u);
  auto first = slurp(dir / "p.bin");
  ensure_payload(dir / "p.bin", 5000);
  EXPECT_EQ(slurp(dir / "p.bin"), first);
  ensure_payload(dir / "p.bin", 100);
  EXPECT_EQ(std::filesystem::file_size(dir / "p.bin"), 100u);
}

TEST(Diff, MaxRelativeDifference) {
  PartialResult a;
  Histo1D h("h", 2, 0.0, 2.0);
  h.fill(0.5, 2.0);
  a.universes = {{"nominal", {{"h", h}, {"s", ScalarAccumulator{ScalarAccumulator::Kind::Sum, 4.0}}}}};
  auto b = a;
  EXPECT_EQ(max_relative_difference(a, b), 0.0);
  std::get<ScalarAccumulator>(b.universes[0].results[1].value).value = 5.0;
  EXPECT_DOUBLE_EQ(max_relative_difference(a, b), 0.2);
  auto c = a;
  c.universes[0].label = "other";
  EXPECT_TRUE(std::isinf(max_relative_difference(a, c)));
  auto d = a;
  d.universes[0].results.pop_back();
  EXPECT_TRUE(std::isinf(max_relative_difference(a, d)));
}

TEST(Bench, SmallEndToEnd) {
  TempDir dir;
  BenchConfig cfg;
  cfg.data_dir = dir / "data";
  cfg.out_dir = dir / "out";
  cfg.gen = GenConfig{2, 3000, 1000, 5};
  cfg.facility.workers = 2;
  cfg.repeats = 2;
  cfg.payload_bytes = 20000;
  auto r = bench(cfg);
  ASSERT_EQ(r.runs.size(), 8u);
  EXPECT_TRUE(r.byte_closure);
  EXPECT_LE(r.max_diff_pre, 1e-9);
  EXPECT_LE(r.max_diff_post, 1e-9);
  for (const auto& run : r.runs) {
    EXPECT_EQ(run.client_bytes, run.served_bytes) << run.mode << " " << run.phase;
    if (run.mode == "legacy") {
      EXPECT_EQ(run.metrics.n_jobs, 2u);
      EXPECT_EQ(run.passes, run.phase == "post" ? 9u : 1u);
    } else {
      EXPECT_EQ(run.metrics.n_jobs, 6u);
    }
  }
  EXPECT_EQ(r.runs[0].metrics.total_events, 6000u);
  EXPECT_EQ(r.runs[1].metrics.total_events, 6000u);
  // Same skim rows go into both postselections.
  EXPECT_EQ(r.runs[2].metrics.total_events, r.runs[3].metrics.total_events);

  auto rows = read_metrics_csv(cfg.out_dir / "metrics.csv");
  EXPECT_EQ(rows.size(), 8u);
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "report.txt"));
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "r0/new-pre/tasks.csv"));
  EXPECT_TRUE(std::filesystem::exists(cfg.out_dir / "r1/legacy/jobs.csv"));
  ASSERT_FALSE(r.report.ratios.empty());
  EXPECT_EQ(r.report.ratios.back().phase, "total");

  // Existing data is reused, not regenerated.
  auto before = std::filesystem::last_write_time(cfg.data_dir / "data_000.col");
  cfg.repeats = 1;
  cfg.out_dir = dir / "out2";
  bench(cfg);
  EXPECT_EQ(std::filesystem::last_write_time(cfg.data_dir / "data_000.col"), before);
}
