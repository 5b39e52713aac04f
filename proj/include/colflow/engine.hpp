#pragma once

// The event loop: one traversal of an entry range evaluates the nominal
// chain and every requested universe, recomputing only affected nodes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "colflow/colstore.hpp"
#include "colflow/graph.hpp"
#include "colflow/hist.hpp"
#include "colflow/planner.hpp"

namespace colflow {

enum class RunModeKind : std::uint8_t {
  SinglePass = 0,
  OnlyUniverse = 1,
  // Nominal and weight universes in one read, then one read per topology
  // universe. The baseline's multi-pass systematics.
  LegacyPasses = 2,
};

struct RunMode {
  RunModeKind kind = RunModeKind::SinglePass;
  std::string universe;  // OnlyUniverse

  static RunMode single_pass() { return {}; }
  static RunMode only(std::string u) { return {RunModeKind::OnlyUniverse, std::move(u)}; }
  static RunMode legacy_passes() { return {RunModeKind::LegacyPasses, {}}; }

  bool operator==(const RunMode&) const = default;
};

std::string to_string(const RunMode& m);

using ResultValue = std::variant<Histo1D, ScalarAccumulator>;

struct NamedResult {
  std::string name;
  ResultValue value;

  bool operator==(const NamedResult&) const = default;
};

struct UniverseResult {
  std::string label;
  std::vector<NamedResult> results;  // action declaration order

  const NamedResult* find(std::string_view name) const;
  bool operator==(const UniverseResult&) const = default;
};

struct PartialResult {
  std::vector<UniverseResult> universes;
  std::vector<std::string> snapshot_parts;  // relative to the write root
  std::uint64_t events_processed = 0;
  double t_loop = 0.0;
  double t_total = 0.0;
  std::uint64_t bytes_read = 0;
  std::uint64_t chunk_bytes = 0;
  std::uint64_t read_calls = 0;
  // Largest batch held in memory at once.
  std::uint64_t peak_buffer_bytes = 0;

  const UniverseResult* universe(std::string_view label) const;
  const Histo1D& histo(std::string_view universe, std::string_view name) const;
  const ScalarAccumulator& scalar(std::string_view universe, std::string_view name) const;

  // Universes are matched by label and results by name; counters add.
  void merge(const PartialResult& o);

  bool operator==(const PartialResult&) const = default;
};

// Same results per universe label, regardless of universe order.
bool same_results(const PartialResult& a, const PartialResult& b);

struct RangeOptions {
  std::filesystem::path write_root = ".";
  // Distinguishes snapshot part files of different ranges.
  std::string range_id = "0";
};

// Runs `range` of an open dataset. bytes_read and friends are the growth of
// the dataset's read account during the call.
PartialResult run_range(const ComputationGraph& g, Dataset& ds, std::uint64_t begin, std::uint64_t end,
                        const RunMode& mode, const RangeOptions& opts = {});

// Opens range.uri, runs, and includes the open's metadata reads.
PartialResult run_range(const ComputationGraph& g, const EntryRange& range, const RunMode& mode,
                        const RangeOptions& opts = {});

// Splits the files into cluster-aligned ranges and runs them on nthreads
// threads. Partial results merge in range order.
PartialResult run_local(const ComputationGraph& g, std::span<const std::string> files, std::size_t nthreads,
                        const RunMode& mode = {}, const RangeOptions& opts = {}, std::size_t factor = 3);

// Path of the part file a range writes for a snapshot with prefix `out`.
std::filesystem::path snapshot_part_name(const std::string& out, const std::string& range_id);

}  // namespace colflow
