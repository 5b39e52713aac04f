#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace colflow::net {

struct Address {
  std::string host;
  std::uint16_t port = 0;

  std::string str() const { return host + ":" + std::to_string(port); }
};

// Parses "host:port". Throws ValidationError on malformed input.
Address parse_address(std::string_view text);

// Owning TCP socket.
class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  Socket(Socket&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
  Socket& operator=(Socket&& o) noexcept;
  ~Socket() { close(); }

  static Socket connect(const Address& addr);

  bool valid() const { return fd_ >= 0; }
  int fd() const { return fd_; }
  void close();
  // Wakes up any thread blocked in recv on this socket without releasing the fd.
  void shutdown();

  void send_all(std::span<const std::uint8_t> data);
  // Reads exactly data.size() bytes. Returns false on EOF before the first
  // byte; throws TransportError on EOF mid-buffer or socket error.
  bool recv_exact(std::span<std::uint8_t> data);

 private:
  int fd_ = -1;
};

class Listener {
 public:
  // Port 0 picks an ephemeral port; see port().
  explicit Listener(const Address& addr);
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;
  ~Listener();

  std::uint16_t port() const { return port_; }
  // Blocks until a client connects. Returns an invalid socket after shutdown().
  Socket accept();
  void shutdown();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// Frames are `u32 length` followed by `length` bytes.
void send_frame(Socket& sock, std::span<const std::uint8_t> body);
// Returns nullopt on clean EOF between frames. Frames larger than max_len
// are rejected with ProtocolError.
std::optional<std::vector<std::uint8_t>> recv_frame(Socket& sock, std::uint32_t max_len = 1u << 30);

}  // namespace colflow::net
