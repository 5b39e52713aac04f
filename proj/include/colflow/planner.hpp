#pragma once

// Cluster-aligned partitioning of a dataset into entry ranges.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "colflow/colstore.hpp"

namespace colflow {

// EntryRange::end value meaning "through the last entry of the file".
inline constexpr std::uint64_t kToEnd = UINT64_MAX;

struct EntryRange {
  std::string uri;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;

  std::uint64_t size() const { return end - begin; }
  bool operator==(const EntryRange&) const = default;
};

// Splits the files into about factor * nworkers contiguous cluster groups.
// Each file gets at least one group and at most one group per cluster;
// within a file, group sizes differ by at most one cluster. Files without
// entries produce no ranges.
std::vector<EntryRange> plan_partitions(std::span<const DatasetInfo> files, std::size_t nworkers,
                                        std::size_t factor = 3);

// Validates `r` against the file layout: begin <= end <= total and both
// ends on cluster boundaries (or file edges).
void check_range(const DatasetInfo& info, const EntryRange& r);

}  // namespace colflow
