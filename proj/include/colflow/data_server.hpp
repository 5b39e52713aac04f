#pragma once

// Byte-range file server for columnar datasets.
//
// Frames: u32 length (bytes that follow), u16 opcode, payload.
//   1 OPEN    (string path)              -> u64 id, u64 size
//   2 READ    (u64 id, u64 off, u32 len) -> raw bytes (short at EOF)
//   3 STAT    (string path)              -> u64 size
//   4 METRICS ([u8 scope])               -> u64 bytes_served, u64 read_calls
//                                           scope 0/absent: this session, 1: whole server
//   5 CLOSE   (u64 id)                   -> empty
// Errors reply with opcode 0xFFFF: u16 code, string message.
// Strings are u16-length-prefixed.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "colflow/net.hpp"

namespace colflow {

enum class DataOp : std::uint16_t { Open = 1, Read = 2, Stat = 3, Metrics = 4, Close = 5, Error = 0xFFFF };

enum class DataErrorCode : std::uint16_t {
  NotFound = 1,
  PathEscape = 2,
  BadRequest = 3,
  BadHandle = 4,
  Io = 5,
};

struct ServedCounters {
  std::uint64_t bytes_served = 0;
  std::uint64_t read_calls = 0;
};

class DataServer {
 public:
  // Port 0 in `listen` binds an ephemeral port.
  DataServer(std::filesystem::path root, const net::Address& listen);
  DataServer(const DataServer&) = delete;
  DataServer& operator=(const DataServer&) = delete;
  ~DataServer();

  std::uint16_t port() const { return listener_.port(); }
  net::Address address() const { return {"127.0.0.1", port()}; }
  ServedCounters totals() const;
  void stop();

 private:
  void accept_loop();
  void serve_session(net::Socket sock);

  std::filesystem::path root_;
  net::Listener listener_;
  std::atomic<bool> stopping_{false};
  std::atomic<std::uint64_t> bytes_served_{0};
  std::atomic<std::uint64_t> read_calls_{0};
  std::mutex sessions_mu_;
  std::vector<int> session_fds_;
  std::vector<std::thread> session_threads_;
  std::thread acceptor_;
};

// Resolves `path` beneath `root`, rejecting anything that escapes it.
// Returns an empty path on escape.
std::filesystem::path resolve_under_root(const std::filesystem::path& root, std::string_view path);

// One client session with a data server.
class DataClient {
 public:
  struct FileRef {
    std::uint64_t id = 0;
    std::uint64_t size = 0;
  };

  explicit DataClient(const net::Address& server);

  FileRef open(std::string_view path);
  std::uint64_t stat(std::string_view path);
  std::size_t read(std::uint64_t id, std::uint64_t offset, std::span<std::uint8_t> out);
  ServedCounters metrics(bool server_wide = false);
  void close(std::uint64_t id);

 private:
  std::vector<std::uint8_t> call(DataOp op, std::span<const std::uint8_t> payload);

  net::Socket sock_;
};

// Streams up to `limit` bytes of `uri` through a transport in `block` sized
// reads and discards them. Returns bytes transferred.
std::uint64_t download(std::string_view uri, std::uint64_t limit = UINT64_MAX, std::size_t block = 1 << 20);

}  // namespace colflow
