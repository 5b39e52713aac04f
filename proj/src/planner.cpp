#include "colflow/planner.hpp"

#include <algorithm>
#include <numeric>

#include "colflow/error.hpp"

namespace colflow {

namespace {

// Groups per file, summing to k where the per-file bounds allow it.
std::vector<std::size_t> allocate_groups(const std::vector<std::size_t>& clusters, std::size_t k) {
  const std::size_t total = std::accumulate(clusters.begin(), clusters.end(), std::size_t{0});
  std::vector<std::size_t> groups(clusters.size(), 0);
  std::vector<std::pair<std::size_t, std::size_t>> remainders;  // (numerator remainder, file)
  std::size_t used = 0;
  for (std::size_t f = 0; f < clusters.size(); ++f) {
    if (clusters[f] == 0) continue;
    std::size_t num = clusters[f] * k;
    groups[f] = std::clamp<std::size_t>(num / total, 1, clusters[f]);
    used += groups[f];
    remainders.emplace_back(num % total, f);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  while (used < k) {
    bool grew = false;
    for (const auto& [rem, f] : remainders) {
      if (used >= k) break;
      if (groups[f] < clusters[f]) {
        ++groups[f];
        ++used;
        grew = true;
      }
    }
    if (!grew) break;
  }
  return groups;
}

}  // namespace

std::vector<EntryRange> plan_partitions(std::span<const DatasetInfo> files, std::size_t nworkers, std::size_t factor) {
  if (nworkers < 1) throw ValidationError("plan_partitions: nworkers must be >= 1");
  if (factor < 1) throw ValidationError("plan_partitions: factor must be >= 1");
  if (files.empty()) throw ValidationError("plan_partitions: empty dataset");

  std::vector<std::size_t> clusters;
  for (const auto& f : files) {
    std::size_t n = 0;
    for (const auto& c : f.clusters) n += c.entry_count > 0 ? 1 : 0;
    clusters.push_back(n);
  }
  const std::size_t total = std::accumulate(clusters.begin(), clusters.end(), std::size_t{0});
  if (total == 0) return {};
  const std::size_t k = factor * nworkers;
  auto groups = total <= k ? clusters : allocate_groups(clusters, k);

  std::vector<EntryRange> out;
  for (std::size_t f = 0; f < files.size(); ++f) {
    if (groups[f] == 0) continue;
    std::vector<const ClusterInfo*> nonempty;
    for (const auto& c : files[f].clusters) {
      if (c.entry_count > 0) nonempty.push_back(&c);
    }
    const std::size_t g = groups[f];
    const std::size_t base = nonempty.size() / g;
    const std::size_t extra = nonempty.size() % g;
    std::size_t pos = 0;
    for (std::size_t i = 0; i < g; ++i) {
      std::size_t n = base + (i < extra ? 1 : 0);
      out.push_back(EntryRange{files[f].uri, nonempty[pos]->entry_start, nonempty[pos + n - 1]->entry_end()});
      pos += n;
    }
  }
  return out;
}

void check_range(const DatasetInfo& info, const EntryRange& r) {
  auto fail = [&](const std::string& why) {
    throw ValidationError("invalid entry range [" + std::to_string(r.begin) + ", " + std::to_string(r.end) + ") for " +
                          info.uri + ": " + why);
  };
  if (r.begin > r.end) fail("begin > end");
  if (r.end > info.total_entries) fail("end beyond " + std::to_string(info.total_entries) + " entries");
  auto on_boundary = [&](std::uint64_t e) {
    if (e == 0 || e == info.total_entries) return true;
    return std::any_of(info.clusters.begin(), info.clusters.end(),
                       [&](const ClusterInfo& c) { return c.entry_start == e; });
  };
  if (!on_boundary(r.begin) || !on_boundary(r.end)) fail("not on a cluster boundary");
}

}  // namespace colflow
