#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "colflow/bytes.hpp"

namespace colflow {

// Uniform-bin weighted histogram. sumw/sumw2 hold nbins+2 entries: index 0
// is the underflow, nbins+1 the overflow. The axis is half-open: x >= xmax
// lands in the overflow and NaN in the underflow.
class Histo1D {
 public:
  Histo1D() = default;
  Histo1D(std::string name, std::uint32_t nbins, double xmin, double xmax);

  void fill(double x, double w = 1.0);
  // Storage index for x (0 = underflow, nbins+1 = overflow).
  std::size_t find_bin(double x) const;

  // Adds b into this histogram; the axes and names must match.
  void merge(const Histo1D& b);

  const std::string& name() const { return name_; }
  std::uint32_t nbins() const { return nbins_; }
  double xmin() const { return xmin_; }
  double xmax() const { return xmax_; }
  std::uint64_t entries() const { return entries_; }
  const std::vector<double>& sumw() const { return sumw_; }
  const std::vector<double>& sumw2() const { return sumw2_; }
  double total_sumw() const;

  bool same_axis(const Histo1D& o) const;
  // Exact equality of every field, comparing doubles bitwise.
  bool operator==(const Histo1D& o) const;

  // name (u16 len + bytes), u32 nbins, f64 xmin, f64 xmax, u64 entries,
  // f64 sumw[nbins+2], f64 sumw2[nbins+2]
  void serialize(ByteWriter& w) const;
  static Histo1D deserialize(ByteReader& r);

 private:
  std::string name_;
  std::uint32_t nbins_ = 1;
  double xmin_ = 0.0;
  double xmax_ = 1.0;
  std::uint64_t entries_ = 0;
  std::vector<double> sumw_;
  std::vector<double> sumw2_;
};

Histo1D merge(const Histo1D& a, const Histo1D& b);

struct ScalarAccumulator {
  enum class Kind : std::uint8_t { Count = 0, Sum = 1 };

  Kind kind = Kind::Count;
  double value = 0.0;

  void merge(const ScalarAccumulator& o);
  bool operator==(const ScalarAccumulator& o) const;
};

// Largest per-bin relative difference |a-b| / max(|a|,|b|) over sumw and
// sumw2 (0 when both are zero). Axes must match.
double max_relative_difference(const Histo1D& a, const Histo1D& b);

}  // namespace colflow
