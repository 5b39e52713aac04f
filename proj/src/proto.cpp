#include "colflow/proto.hpp"

#include "colflow/error.hpp"

namespace colflow::proto {

namespace {

constexpr std::uint32_t kMaxFrame = 1u << 30;

std::string clip(std::string s) {
  if (s.size() > 0xFFFF) s.resize(0xFFFF);
  return s;
}

void put_payload(ByteWriter& w, const Register& m) {
  w.put_string(m.name);
  w.put<std::uint32_t>(m.slots);
}
void put_payload(ByteWriter& w, const Graph& m) {
  w.put<std::uint64_t>(m.graph_id);
  w.put_blob(m.document);
}
void put_payload(ByteWriter& w, const Task& m) {
  w.put<std::uint64_t>(m.task_id);
  w.put<std::uint64_t>(m.graph_id);
  w.put_string(m.range.uri);
  w.put<std::uint64_t>(m.range.begin);
  w.put<std::uint64_t>(m.range.end);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(m.mode.kind));
  w.put_string(m.mode.universe);
  w.put<std::uint32_t>(m.attempt);
  w.put_string(m.payload_uri);
  w.put<std::uint64_t>(m.payload_bytes);
}
void put_payload(ByteWriter& w, const Result& m) {
  w.put<std::uint64_t>(m.task_id);
  w.put_string(m.worker);
  w.put<std::uint32_t>(m.attempt);
  serialize(w, m.partial);
}
void put_payload(ByteWriter& w, const Fail& m) {
  w.put<std::uint64_t>(m.task_id);
  w.put_string(clip(m.error));
}
void put_payload(ByteWriter& w, const Heartbeat& m) { w.put_string(m.name); }
void put_payload(ByteWriter&, const Shutdown&) {}

}  // namespace

Kind kind_of(const Message& m) { return static_cast<Kind>(m.index() + 1); }

std::string_view kind_name(Kind k) {
  switch (k) {
    case Kind::Register: return "REGISTER";
    case Kind::Graph: return "GRAPH";
    case Kind::Task: return "TASK";
    case Kind::Result: return "RESULT";
    case Kind::Fail: return "FAIL";
    case Kind::Heartbeat: return "HEARTBEAT";
    case Kind::Shutdown: return "SHUTDOWN";
  }
  return "?";
}

void serialize(ByteWriter& w, const PartialResult& p) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.universes.size()));
  for (const auto& u : p.universes) {
    w.put_string(u.label);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(u.results.size()));
    for (const auto& r : u.results) {
      w.put_string(r.name);
      if (const auto* h = std::get_if<Histo1D>(&r.value)) {
        w.put<std::uint8_t>(0);
        h->serialize(w);
      } else {
        const auto& s = std::get<ScalarAccumulator>(r.value);
        w.put<std::uint8_t>(1);
        w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
        w.put<double>(s.value);
      }
    }
  }
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.snapshot_parts.size()));
  for (const auto& s : p.snapshot_parts) w.put_string(s);
  w.put<std::uint64_t>(p.events_processed);
  w.put<double>(p.t_loop);
  w.put<double>(p.t_total);
  w.put<std::uint64_t>(p.bytes_read);
  w.put<std::uint64_t>(p.chunk_bytes);
  w.put<std::uint64_t>(p.read_calls);
  w.put<std::uint64_t>(p.peak_buffer_bytes);
}

PartialResult deserialize_partial(ByteReader& r) {
  PartialResult p;
  auto nu = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nu; ++i) {
    UniverseResult u;
    u.label = r.get_string();
    auto nr = r.get<std::uint32_t>();
    for (std::uint32_t j = 0; j < nr; ++j) {
      NamedResult nrs;
      nrs.name = r.get_string();
      auto tag = r.get<std::uint8_t>();
      if (tag == 0) {
        nrs.value = Histo1D::deserialize(r);
      } else if (tag == 1) {
        ScalarAccumulator s;
        auto k = r.get<std::uint8_t>();
        if (k > 1) throw ProtocolError("bad scalar kind " + std::to_string(k));
        s.kind = static_cast<ScalarAccumulator::Kind>(k);
        s.value = r.get<double>();
        nrs.value = s;
      } else {
        throw ProtocolError("bad result tag " + std::to_string(tag));
      }
      u.results.push_back(std::move(nrs));
    }
    p.universes.push_back(std::move(u));
  }
  auto np = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < np; ++i) p.snapshot_parts.push_back(r.get_string());
  p.events_processed = r.get<std::uint64_t>();
  p.t_loop = r.get<double>();
  p.t_total = r.get<double>();
  p.bytes_read = r.get<std::uint64_t>();
  p.chunk_bytes = r.get<std::uint64_t>();
  p.read_calls = r.get<std::uint64_t>();
  p.peak_buffer_bytes = r.get<std::uint64_t>();
  return p;
}

std::vector<std::uint8_t> encode(const Message& m) {
  ByteWriter w;
  w.put<std::uint32_t>(0);
  w.put<std::uint16_t>(static_cast<std::uint16_t>(kind_of(m)));
  w.put<std::uint16_t>(kVersion);
  std::visit([&](const auto& msg) { put_payload(w, msg); }, m);
  auto out = w.take();
  if (out.size() - 4 > kMaxFrame) throw ProtocolError("message too large");
  auto len = detail::to_little(static_cast<std::uint32_t>(out.size() - 4));
  std::memcpy(out.data(), &len, 4);
  return out;
}

Message decode_body(std::span<const std::uint8_t> body) {
  if (body.size() < 4) throw ProtocolError("frame length " + std::to_string(body.size()) + " < 4");
  ByteReader r(body);
  auto kind = r.get<std::uint16_t>();
  auto version = r.get<std::uint16_t>();
  if (version != kVersion) {
    throw ProtocolError("protocol version mismatch: got " + std::to_string(version) + ", expected " +
                        std::to_string(kVersion));
  }
  Message m;
  switch (static_cast<Kind>(kind)) {
    case Kind::Register: {
      Register x;
      x.name = r.get_string();
      x.slots = r.get<std::uint32_t>();
      m = std::move(x);
      break;
    }
    case Kind::Graph: {
      Graph x;
      x.graph_id = r.get<std::uint64_t>();
      x.document = r.get_blob();
      m = std::move(x);
      break;
    }
    case Kind::Task: {
      Task x;
      x.task_id = r.get<std::uint64_t>();
      x.graph_id = r.get<std::uint64_t>();
      x.range.uri = r.get_string();
      x.range.begin = r.get<std::uint64_t>();
      x.range.end = r.get<std::uint64_t>();
      auto mk = r.get<std::uint8_t>();
      if (mk > 2) throw ProtocolError("bad run mode " + std::to_string(mk));
      x.mode.kind = static_cast<RunModeKind>(mk);
      x.mode.universe = r.get_string();
      x.attempt = r.get<std::uint32_t>();
      x.payload_uri = r.get_string();
      x.payload_bytes = r.get<std::uint64_t>();
      m = std::move(x);
      break;
    }
    case Kind::Result: {
      Result x;
      x.task_id = r.get<std::uint64_t>();
      x.worker = r.get_string();
      x.attempt = r.get<std::uint32_t>();
      x.partial = deserialize_partial(r);
      m = std::move(x);
      break;
    }
    case Kind::Fail: {
      Fail x;
      x.task_id = r.get<std::uint64_t>();
      x.error = r.get_string();
      m = std::move(x);
      break;
    }
    case Kind::Heartbeat:
      m = Heartbeat{r.get_string()};
      break;
    case Kind::Shutdown:
      m = Shutdown{};
      break;
    default:
      throw ProtocolError("unknown message kind " + std::to_string(kind));
  }
  if (!r.done()) throw ProtocolError(std::to_string(r.remaining()) + " trailing bytes after message");
  return m;
}

Message decode(std::span<const std::uint8_t> frame) {
  ByteReader r(frame);
  auto len = r.get<std::uint32_t>();
  if (len != r.remaining()) {
    throw ProtocolError("frame length " + std::to_string(len) + " does not match " + std::to_string(r.remaining()) +
                        " bytes");
  }
  return decode_body(frame.subspan(4));
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (pos_ > 0 && pos_ == buf_.size()) {
    buf_.clear();
    pos_ = 0;
  }
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameDecoder::next() {
  if (buffered() < 4) return std::nullopt;
  std::uint32_t len;
  std::memcpy(&len, buf_.data() + pos_, 4);
  len = detail::to_little(len);
  if (len < 4) throw ProtocolError("frame length " + std::to_string(len) + " < 4");
  if (len > kMaxFrame) throw ProtocolError("frame length " + std::to_string(len) + " exceeds limit");
  if (buffered() < 4 + std::size_t{len}) return std::nullopt;
  auto body = std::span<const std::uint8_t>(buf_).subspan(pos_ + 4, len);
  auto m = decode_body(body);
  pos_ += 4 + len;
  if (pos_ > (1u << 20) && pos_ * 2 > buf_.size()) {
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(pos_));
    pos_ = 0;
  }
  return m;
}

void send_message(net::Socket& sock, const Message& m) {
  auto frame = encode(m);
  sock.send_all(frame);
}

std::optional<Message> recv_message(net::Socket& sock) {
  auto body = net::recv_frame(sock, kMaxFrame);
  if (!body) return std::nullopt;
  return decode_body(*body);
}

}  // namespace colflow::proto
