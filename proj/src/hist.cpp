#include "colflow/hist.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "colflow/error.hpp"

namespace colflow {

Histo1D::Histo1D(std::string name, std::uint32_t nbins, double xmin, double xmax)
    : name_(std::move(name)), nbins_(nbins), xmin_(xmin), xmax_(xmax) {
  if (nbins < 1) throw ValidationError("histogram '" + name_ + "' needs nbins >= 1");
  if (!(xmin < xmax) || !std::isfinite(xmin) || !std::isfinite(xmax)) {
    throw ValidationError("histogram '" + name_ + "' needs finite xmin < xmax");
  }
  sumw_.assign(nbins_ + 2, 0.0);
  sumw2_.assign(nbins_ + 2, 0.0);
}

std::size_t Histo1D::find_bin(double x) const {
  if (std::isnan(x) || x < xmin_) return 0;
  if (x >= xmax_) return nbins_ + 1;
  auto b = static_cast<std::int64_t>(std::floor((x - xmin_) / (xmax_ - xmin_) * nbins_));
  b = std::clamp<std::int64_t>(b, 0, static_cast<std::int64_t>(nbins_) - 1);
  return static_cast<std::size_t>(b) + 1;
}

void Histo1D::fill(double x, double w) {
  if (!std::isfinite(w)) throw EvalError("non-finite weight filling histogram '" + name_ + "'");
  auto b = find_bin(x);
  sumw_[b] += w;
  sumw2_[b] += w * w;
  ++entries_;
}

bool Histo1D::same_axis(const Histo1D& o) const {
  return name_ == o.name_ && nbins_ == o.nbins_ && xmin_ == o.xmin_ && xmax_ == o.xmax_;
}

void Histo1D::merge(const Histo1D& b) {
  if (!same_axis(b)) throw ValidationError("cannot merge histogram '" + b.name_ + "' into '" + name_ + "': axis mismatch");
  for (std::size_t i = 0; i < sumw_.size(); ++i) {
    sumw_[i] += b.sumw_[i];
    sumw2_[i] += b.sumw2_[i];
  }
  entries_ += b.entries_;
}

double Histo1D::total_sumw() const {
  double s = 0.0;
  for (double v : sumw_) s += v;
  return s;
}

bool Histo1D::operator==(const Histo1D& o) const {
  auto bits_equal = [](const std::vector<double>& a, const std::vector<double>& b) {
    return std::equal(a.begin(), a.end(), b.begin(), b.end(), [](double x, double y) {
      return std::bit_cast<std::uint64_t>(x) == std::bit_cast<std::uint64_t>(y);
    });
  };
  return same_axis(o) && entries_ == o.entries_ && bits_equal(sumw_, o.sumw_) && bits_equal(sumw2_, o.sumw2_);
}

void Histo1D::serialize(ByteWriter& w) const {
  w.put_string(name_);
  w.put<std::uint32_t>(nbins_);
  w.put<double>(xmin_);
  w.put<double>(xmax_);
  w.put<std::uint64_t>(entries_);
  w.put_array<double>(sumw_);
  w.put_array<double>(sumw2_);
}

Histo1D Histo1D::deserialize(ByteReader& r) {
  auto name = r.get_string();
  auto nbins = r.get<std::uint32_t>();
  auto xmin = r.get<double>();
  auto xmax = r.get<double>();
  Histo1D h;
  try {
    h = Histo1D(std::move(name), nbins, xmin, xmax);
  } catch (const ValidationError& e) {
    throw ProtocolError(std::string("bad histogram payload: ") + e.what());
  }
  h.entries_ = r.get<std::uint64_t>();
  r.get_array(std::size_t{nbins} + 2, h.sumw_);
  r.get_array(std::size_t{nbins} + 2, h.sumw2_);
  return h;
}

Histo1D merge(const Histo1D& a, const Histo1D& b) {
  Histo1D out = a;
  out.merge(b);
  return out;
}

void ScalarAccumulator::merge(const ScalarAccumulator& o) {
  if (kind != o.kind) throw ValidationError("cannot merge accumulators of different kinds");
  value += o.value;
}

bool ScalarAccumulator::operator==(const ScalarAccumulator& o) const {
  return kind == o.kind && std::bit_cast<std::uint64_t>(value) == std::bit_cast<std::uint64_t>(o.value);
}

double max_relative_difference(const Histo1D& a, const Histo1D& b) {
  if (!a.same_axis(b)) throw ValidationError("histograms '" + a.name() + "' and '" + b.name() + "' differ in axis");
  double worst = 0.0;
  auto scan = [&](const std::vector<double>& x, const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      double scale = std::max(std::fabs(x[i]), std::fabs(y[i]));
      if (scale == 0.0) continue;
      worst = std::max(worst, std::fabs(x[i] - y[i]) / scale);
    }
  };
  scan(a.sumw(), b.sumw());
  scan(a.sumw2(), b.sumw2());
  return worst;
}

}  // namespace colflow
