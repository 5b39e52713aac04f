#include "colflow/net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include "colflow/bytes.hpp"
#include "colflow/error.hpp"

namespace colflow::net {

namespace {

std::string errno_text(std::string_view what) {
  return std::string(what) + ": " + std::strerror(errno);
}

sockaddr_in resolve(const Address& addr) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  std::string host = addr.host.empty() ? "127.0.0.1" : addr.host;
  int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res);
  if (rc != 0 || res == nullptr) {
    throw TransportError("cannot resolve host '" + host + "': " + ::gai_strerror(rc));
  }
  sockaddr_in sa{};
  std::memcpy(&sa, res->ai_addr, sizeof(sa));
  ::freeaddrinfo(res);
  sa.sin_port = htons(addr.port);
  return sa;
}

}  // namespace

Address parse_address(std::string_view text) {
  auto colon = text.rfind(':');
  if (colon == std::string_view::npos) {
    throw ValidationError("address '" + std::string(text) + "' is not host:port");
  }
  Address a;
  a.host = std::string(text.substr(0, colon));
  auto port_text = text.substr(colon + 1);
  unsigned value = 0;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), value);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || value > 65535) {
    throw ValidationError("address '" + std::string(text) + "' has an invalid port");
  }
  a.port = static_cast<std::uint16_t>(value);
  return a;
}

Socket& Socket::operator=(Socket&& o) noexcept {
  if (this != &o) {
    close();
    fd_ = o.fd_;
    o.fd_ = -1;
  }
  return *this;
}

Socket Socket::connect(const Address& addr) {
  sockaddr_in sa = resolve(addr);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw TransportError(errno_text("socket"));
  Socket s(fd);
  if (::connect(fd, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    throw TransportError(errno_text("connect to " + addr.str()));
  }
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  return s;
}

void Socket::close() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

void Socket::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void Socket::send_all(std::span<const std::uint8_t> data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    sent += static_cast<std::size_t>(n);
  }
}

bool Socket::recv_exact(std::span<std::uint8_t> data) {
  std::size_t got = 0;
  while (got < data.size()) {
    ssize_t n = ::recv(fd_, data.data() + got, data.size() - got, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("recv"));
    }
    if (n == 0) {
      if (got == 0) return false;
      throw TransportError("connection closed mid-frame");
    }
    got += static_cast<std::size_t>(n);
  }
  return true;
}

Listener::Listener(const Address& addr) {
  sockaddr_in sa = resolve(addr);
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw TransportError(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&sa), sizeof(sa)) != 0) {
    auto msg = errno_text("bind " + addr.str());
    ::close(fd_);
    throw TransportError(msg);
  }
  if (::listen(fd_, 128) != 0) {
    auto msg = errno_text("listen");
    ::close(fd_);
    throw TransportError(msg);
  }
  socklen_t len = sizeof(sa);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&sa), &len);
  port_ = ntohs(sa.sin_port);
}

Listener::~Listener() {
  if (fd_ >= 0) ::close(fd_);
}

Socket Listener::accept() {
  for (;;) {
    int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) {
      int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return Socket(fd);
    }
    if (errno == EINTR || errno == ECONNABORTED) continue;
    return Socket();
  }
}

void Listener::shutdown() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

void send_frame(Socket& sock, std::span<const std::uint8_t> body) {
  std::vector<std::uint8_t> buf;
  buf.reserve(body.size() + 4);
  ByteWriter w(&buf);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(body.size()));
  w.put_bytes(body);
  sock.send_all(buf);
}

std::optional<std::vector<std::uint8_t>> recv_frame(Socket& sock, std::uint32_t max_len) {
  std::uint8_t len_bytes[4];
  if (!sock.recv_exact(len_bytes)) return std::nullopt;
  ByteReader r(len_bytes);
  auto len = r.get<std::uint32_t>();
  if (len > max_len) throw ProtocolError("frame length " + std::to_string(len) + " exceeds limit");
  std::vector<std::uint8_t> body(len);
  if (len > 0 && !sock.recv_exact(body)) throw TransportError("connection closed mid-frame");
  return body;
}

}  // namespace colflow::net
