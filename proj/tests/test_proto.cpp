#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "colflow/proto.hpp"

using namespace colflow;
using namespace colflow::proto;

namespace {

std::string random_string(std::mt19937_64& rng, std::size_t max_len) {
  std::string s(rng() % (max_len + 1), '\0');
  for (auto& c : s) c = static_cast<char>(rng() % 256);
  return s;
}

double random_double(std::mt19937_64& rng) {
  switch (rng() % 6) {
    case 0: return 0.0;
    case 1: return -0.0;
    case 2: return std::numeric_limits<double>::infinity();
    case 3: return std::numeric_limits<double>::denorm_min();
    default: return std::ldexp(static_cast<double>(rng() >> 11), static_cast<int>(rng() % 80) - 60);
  }
}

PartialResult random_partial(std::mt19937_64& rng, std::size_t nuniverses) {
  PartialResult p;
  for (std::size_t u = 0; u < nuniverses; ++u) {
    UniverseResult ur{u == 0 ? "nominal" : "var" + std::to_string(u), {}};
    std::uint32_t nb = 1 + rng() % 50;
    Histo1D h("h" + std::to_string(u), nb, -1.0, 1.0 + static_cast<double>(rng() % 100));
    for (int i = 0; i < 20; ++i) h.fill(random_double(rng) - 0.5, static_cast<double>(rng() % 1000) / 7.0);
    ur.results.push_back({h.name(), h});
    ur.results.push_back({"n", ScalarAccumulator{ScalarAccumulator::Kind::Count, static_cast<double>(rng() % 1000)}});
    ur.results.push_back({"s", ScalarAccumulator{ScalarAccumulator::Kind::Sum, random_double(rng)}});
    p.universes.push_back(std::move(ur));
  }
  for (std::size_t i = rng() % 3; i > 0; --i) p.snapshot_parts.push_back(random_string(rng, 40));
  p.events_processed = rng();
  p.t_loop = random_double(rng);
  p.t_total = random_double(rng);
  p.bytes_read = rng();
  p.chunk_bytes = rng();
  p.read_calls = rng();
  p.peak_buffer_bytes = rng();
  return p;
}

Message random_message(std::mt19937_64& rng) {
  switch (rng() % 7) {
    case 0: return Register{random_string(rng, 30), static_cast<std::uint32_t>(rng())};
    case 1: return Graph{rng(), random_string(rng, 5000)};
    case 2: {
      Task t;
      t.task_id = rng();
      t.graph_id = rng();
      t.range = EntryRange{random_string(rng, 60), rng(), rng()};
      t.mode = RunMode{static_cast<RunModeKind>(rng() % 3), random_string(rng, 10)};
      t.attempt = static_cast<std::uint32_t>(rng());
      t.payload_uri = random_string(rng, 20);
      t.payload_bytes = rng();
      return t;
    }
    case 3: return Result{rng(), random_string(rng, 20), static_cast<std::uint32_t>(rng()), random_partial(rng, rng() % 5)};
    case 4: return Fail{rng(), random_string(rng, 300)};
    case 5: return Heartbeat{random_string(rng, 20)};
    default: return Shutdown{};
  }
}

}  // namespace

TEST(Proto, HeartbeatRoundTrip) {
  Message m = Heartbeat{"w1"};
  auto bytes = encode(m);
  EXPECT_EQ(decode(bytes), m);
  std::uint32_t len;
  std::memcpy(&len, bytes.data(), 4);
  EXPECT_EQ(len, bytes.size() - 4);
  EXPECT_EQ(bytes[4], static_cast<std::uint8_t>(Kind::Heartbeat));
  EXPECT_EQ(bytes[6], kVersion);
  // length covers kind + version + payload: payload (2 + 2) + 4
  EXPECT_EQ(len, 4u + 4u);
}

TEST(Proto, ResultWith31UniversesIsBitExact) {
  std::mt19937_64 rng(31);
  Result r{42, "worker-a", 2, random_partial(rng, 31)};
  auto back = decode(encode(r));
  ASSERT_TRUE(std::holds_alternative<Result>(back));
  EXPECT_EQ(std::get<Result>(back), r);
  EXPECT_EQ(std::get<Result>(back).partial.universes.size(), 31u);
  EXPECT_EQ(encode(back), encode(r));
}

TEST(Proto, RandomRoundTrips) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 500; ++i) {
    auto m = random_message(rng);
    auto bytes = encode(m);
    auto back = decode(bytes);
    ASSERT_EQ(back, m) << "kind " << kind_name(kind_of(m));
    ASSERT_EQ(encode(back), bytes);
  }
}

TEST(Proto, ChunkedStreamDecodesSameSequence) {
  std::mt19937_64 rng(77);
  std::vector<Message> msgs;
  std::vector<std::uint8_t> stream;
  for (int i = 0; i < 60; ++i) {
    msgs.push_back(random_message(rng));
    auto b = encode(msgs.back());
    stream.insert(stream.end(), b.begin(), b.end());
  }
  for (std::size_t max_chunk : {std::size_t{1}, std::size_t{3}, std::size_t{17}, std::size_t{4096}, stream.size()}) {
    FrameDecoder dec;
    std::vector<Message> got;
    std::size_t pos = 0;
    while (pos < stream.size()) {
      std::size_t n = std::min(stream.size() - pos, 1 + rng() % max_chunk);
      dec.feed(std::span(stream).subspan(pos, n));
      pos += n;
      while (auto m = dec.next()) got.push_back(std::move(*m));
    }
    EXPECT_EQ(got, msgs);
    EXPECT_EQ(dec.buffered(), 0u);
  }
}

TEST(Proto, DecodeErrors) {
  auto good = encode(Heartbeat{"x"});
  // length < 4
  std::vector<std::uint8_t> short_len{3, 0, 0, 0, 6, 0, 1};
  EXPECT_THROW(decode(short_len), ProtocolError);
  FrameDecoder dec;
  dec.feed(short_len);
  EXPECT_THROW(dec.next(), ProtocolError);

  auto bad = good;
  bad[6] = 2;  // version
  EXPECT_THROW(decode(bad), ProtocolError);

  bad = good;
  bad[4] = 99;  // kind
  EXPECT_THROW(decode(bad), ProtocolError);

  bad = good;
  bad.push_back(0);  // length no longer matches
  EXPECT_THROW(decode(bad), ProtocolError);

  bad = good;
  bad.push_back(0);
  bad[0] += 1;  // trailing byte inside the frame
  EXPECT_THROW(decode(bad), ProtocolError);

  bad = good;
  bad.pop_back();
  bad[0] -= 1;  // truncated payload
  EXPECT_THROW(decode(bad), ProtocolError);

  std::vector<std::uint8_t> body{6, 0};
  EXPECT_THROW(decode_body(body), ProtocolError);
}

TEST(Proto, BadModeAndPartialContent) {
  Task t;
  t.mode = RunMode::only("x");
  auto bytes = encode(t);
  // mode byte follows task_id, graph_id, uri, begin, end
  std::size_t mode_at = 8 + 8 + 8 + 2 + 0 + 8 + 8;
  ASSERT_EQ(bytes[mode_at], 1);
  bytes[mode_at] = 9;
  EXPECT_THROW(decode(bytes), ProtocolError);
}

TEST(Proto, SocketSendRecv) {
  net::Listener listener({"127.0.0.1", 0});
  std::mt19937_64 rng(5);
  std::vector<Message> msgs;
  for (int i = 0; i < 20; ++i) msgs.push_back(random_message(rng));
  std::thread client([&] {
    auto s = net::Socket::connect({"127.0.0.1", listener.port()});
    for (const auto& m : msgs) send_message(s, m);
  });
  auto conn = listener.accept();
  std::vector<Message> got;
  while (auto m = recv_message(conn)) got.push_back(std::move(*m));
  client.join();
  EXPECT_EQ(got, msgs);
}

TEST(Proto, KindNames) {
  EXPECT_EQ(kind_name(Kind::Register), "REGISTER");
  EXPECT_EQ(kind_of(Shutdown{}), Kind::Shutdown);
  EXPECT_EQ(static_cast<int>(kind_of(Task{})), 3);
}
