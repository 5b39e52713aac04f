#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "colflow/hist.hpp"

using namespace colflow;

TEST(Histo, BinFormula) {
  Histo1D h("h", 10, 0.0, 100.0);
  h.fill(50.0, 1.0);
  EXPECT_EQ(h.find_bin(50.0), 6u);
  EXPECT_EQ(h.sumw()[6], 1.0);
  EXPECT_EQ(h.find_bin(0.0), 1u);
  EXPECT_EQ(h.find_bin(99.999), 10u);
  EXPECT_EQ(h.find_bin(-1e-9), 0u);
}

TEST(Histo, HalfOpenAxisAndNaN) {
  Histo1D h("h", 10, 0.0, 100.0);
  h.fill(100.0, 1.0);
  EXPECT_EQ(h.sumw()[11], 1.0);
  h.fill(std::nan(""), 2.0);
  EXPECT_EQ(h.sumw()[0], 2.0);
  h.fill(-std::numeric_limits<double>::infinity(), 1.0);
  h.fill(std::numeric_limits<double>::infinity(), 1.0);
  EXPECT_EQ(h.sumw()[0], 3.0);
  EXPECT_EQ(h.sumw()[11], 2.0);
  EXPECT_EQ(h.entries(), 4u);
}

TEST(Histo, EdgeJustBelowMaxStaysInRange) {
  Histo1D h("h", 3, 0.0, 0.3);
  double x = std::nextafter(0.3, 0.0);
  auto b = h.find_bin(x);
  EXPECT_GE(b, 1u);
  EXPECT_LE(b, 3u);
}

TEST(Histo, Additive) {
  Histo1D h("h", 10, 0.0, 100.0);
  h.fill(42.0, 0.5);
  h.fill(42.0, 0.5);
  EXPECT_EQ(h.sumw()[5], 1.0);
  EXPECT_EQ(h.sumw2()[5], 0.5);
  EXPECT_EQ(h.entries(), 2u);
}

TEST(Histo, ZeroWeightCountsAsEntry) {
  Histo1D h("h", 2, 0.0, 1.0);
  h.fill(0.5, 0.0);
  EXPECT_EQ(h.entries(), 1u);
  EXPECT_EQ(h.total_sumw(), 0.0);
}

TEST(Histo, InvalidAxisAndWeight) {
  EXPECT_THROW(Histo1D("h", 0, 0.0, 1.0), ValidationError);
  EXPECT_THROW(Histo1D("h", 1, 1.0, 1.0), ValidationError);
  EXPECT_THROW(Histo1D("h", 1, 2.0, 1.0), ValidationError);
  Histo1D h("h", 1, 0.0, 1.0);
  EXPECT_THROW(h.fill(0.5, std::nan("")), EvalError);
  EXPECT_THROW(h.fill(0.5, std::numeric_limits<double>::infinity()), EvalError);
}

TEST(Histo, MergeIdentityAndCommutativity) {
  std::mt19937_64 rng(5);
  Histo1D a("h", 20, -5.0, 5.0), b("h", 20, -5.0, 5.0), empty("h", 20, -5.0, 5.0);
  std::normal_distribution<double> g(0.0, 3.0);
  for (int i = 0; i < 1000; ++i) {
    a.fill(g(rng), static_cast<double>(rng() % 4));
    b.fill(g(rng), static_cast<double>(rng() % 4));
  }
  EXPECT_EQ(merge(a, empty), a);
  EXPECT_EQ(merge(a, b), merge(b, a));
}

TEST(Histo, MergeAxisMismatch) {
  Histo1D a("h", 10, 0.0, 1.0);
  EXPECT_THROW(a.merge(Histo1D("h", 11, 0.0, 1.0)), ValidationError);
  EXPECT_THROW(a.merge(Histo1D("h", 10, 0.0, 2.0)), ValidationError);
  EXPECT_THROW(a.merge(Histo1D("g", 10, 0.0, 1.0)), ValidationError);
}

TEST(Histo, SplitStreamMergesToUnsplit) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> x(-10.0, 110.0), w(0.1, 2.0);
  std::vector<std::pair<double, double>> stream(5000);
  for (auto& p : stream) p = {x(rng), w(rng)};
  Histo1D whole("h", 37, 0.0, 100.0);
  for (auto [xv, wv] : stream) whole.fill(xv, wv);
  for (std::size_t split : {std::size_t{0}, std::size_t{1}, std::size_t{2499}, std::size_t{5000}}) {
    Histo1D a("h", 37, 0.0, 100.0), b("h", 37, 0.0, 100.0);
    for (std::size_t i = 0; i < stream.size(); ++i) (i < split ? a : b).fill(stream[i].first, stream[i].second);
    auto m = merge(a, b);
    EXPECT_LE(max_relative_difference(m, whole), 1e-12);
    EXPECT_EQ(m.entries(), whole.entries());
  }
}

TEST(Histo, ConservationAndNonNegativeSumw2) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x(-50.0, 150.0), w(-1.0, 3.0);
  Histo1D h("h", 13, 0.0, 100.0);
  double total = 0.0;
  for (int i = 0; i < 3000; ++i) {
    double wv = w(rng);
    total += wv;
    h.fill(x(rng), wv);
  }
  EXPECT_NEAR(h.total_sumw(), total, 1e-12 * 3000);
  for (double s : h.sumw2()) EXPECT_GE(s, 0.0);
  EXPECT_EQ(h.entries(), 3000u);
}

TEST(Histo, MergeAssociativeForIntegerWeights) {
  std::mt19937_64 rng(8);
  std::vector<Histo1D> hs(3, Histo1D("h", 8, 0.0, 8.0));
  for (auto& h : hs) {
    for (int i = 0; i < 200; ++i) h.fill(static_cast<double>(rng() % 10), static_cast<double>(rng() % 5));
  }
  EXPECT_EQ(merge(merge(hs[0], hs[1]), hs[2]), merge(hs[0], merge(hs[1], hs[2])));
}

TEST(Histo, SerializationRoundTrip) {
  Histo1D h("lead_pt", 40, 0.0, 500.0);
  h.fill(12.0, 0.3);
  h.fill(700.0, 1.7);
  h.fill(std::nan(""), 1.0);
  ByteWriter w;
  h.serialize(w);
  // name + nbins + axis + entries + 2 arrays
  EXPECT_EQ(w.size(), 2 + 7 + 4 + 8 + 8 + 8 + 2 * 8 * 42u);
  auto bytes = w.take();
  ByteReader r(bytes);
  auto back = Histo1D::deserialize(r);
  EXPECT_TRUE(r.done());
  EXPECT_EQ(back, h);
}

TEST(Histo, CanonicalByteLayout) {
  Histo1D h("h", 1, 0.0, 2.0);
  h.fill(1.0, 2.0);
  ByteWriter w;
  h.serialize(w);
  auto b = w.take();
  ASSERT_EQ(b.size(), 2 + 1 + 4 + 8 + 8 + 8 + 2 * 8 * 3u);
  EXPECT_EQ(b[0], 1);
  EXPECT_EQ(b[1], 0);
  EXPECT_EQ(b[2], 'h');
  EXPECT_EQ(b[3], 1);  // nbins, little-endian
  double x;
  std::memcpy(&x, b.data() + 2 + 1 + 4 + 8, 8);
  EXPECT_EQ(x, 2.0);
  std::uint64_t entries;
  std::memcpy(&entries, b.data() + 2 + 1 + 4 + 16, 8);
  EXPECT_EQ(entries, 1u);
  double bin1;
  std::memcpy(&bin1, b.data() + 2 + 1 + 4 + 24 + 8, 8);
  EXPECT_EQ(bin1, 2.0);
}

TEST(Histo, TruncatedPayload) {
  Histo1D h("h", 4, 0.0, 1.0);
  ByteWriter w;
  h.serialize(w);
  auto b = w.take();
  b.resize(b.size() - 1);
  ByteReader r(b);
  EXPECT_THROW(Histo1D::deserialize(r), ProtocolError);
}

TEST(Scalar, Merge) {
  ScalarAccumulator a{ScalarAccumulator::Kind::Count, 3};
  a.merge({ScalarAccumulator::Kind::Count, 4});
  EXPECT_EQ(a.value, 7.0);
  EXPECT_THROW(a.merge({ScalarAccumulator::Kind::Sum, 1}), ValidationError);
}
