#pragma once

// Scheduler/worker wire protocol.
//
// Frame: u32 length (= payload size + 4), u16 kind, u16 version, payload.
// Integers are little-endian; strings carry a u16 length prefix.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "colflow/bytes.hpp"
#include "colflow/engine.hpp"
#include "colflow/net.hpp"
#include "colflow/planner.hpp"

namespace colflow::proto {

inline constexpr std::uint16_t kVersion = 1;

enum class Kind : std::uint16_t {
  Register = 1,
  Graph = 2,
  Task = 3,
  Result = 4,
  Fail = 5,
  Heartbeat = 6,
  Shutdown = 7,
};

struct Register {
  std::string name;
  std::uint32_t slots = 1;
  bool operator==(const Register&) const = default;
};

struct Graph {
  std::uint64_t graph_id = 0;
  std::string document;  // spec JSON; u32 length prefix
  bool operator==(const Graph&) const = default;
};

struct Task {
  std::uint64_t task_id = 0;
  std::uint64_t graph_id = 0;
  EntryRange range;
  RunMode mode;
  std::uint32_t attempt = 1;
  // Downloaded before the task starts when payload_bytes > 0.
  std::string payload_uri;
  std::uint64_t payload_bytes = 0;
  bool operator==(const Task&) const = default;
};

struct Result {
  std::uint64_t task_id = 0;
  std::string worker;
  std::uint32_t attempt = 1;
  PartialResult partial;
  bool operator==(const Result&) const = default;
};

struct Fail {
  std::uint64_t task_id = 0;
  std::string error;
  bool operator==(const Fail&) const = default;
};

struct Heartbeat {
  std::string name;
  bool operator==(const Heartbeat&) const = default;
};

struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

using Message = std::variant<Register, Graph, Task, Result, Fail, Heartbeat, Shutdown>;

Kind kind_of(const Message& m);
std::string_view kind_name(Kind k);

void serialize(ByteWriter& w, const PartialResult& p);
PartialResult deserialize_partial(ByteReader& r);

// Complete frame, length prefix included.
std::vector<std::uint8_t> encode(const Message& m);
// Decodes exactly one complete frame; trailing bytes are an error.
Message decode(std::span<const std::uint8_t> frame);
// Decodes the bytes after the length prefix (kind, version, payload).
Message decode_body(std::span<const std::uint8_t> body);

// Reassembles frames from arbitrarily chunked input.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  // Next complete message, if one is buffered.
  std::optional<Message> next();
  std::size_t buffered() const { return buf_.size() - pos_; }

 private:
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

void send_message(net::Socket& sock, const Message& m);
// nullopt on clean EOF.
std::optional<Message> recv_message(net::Socket& sock);

}  // namespace colflow::proto
