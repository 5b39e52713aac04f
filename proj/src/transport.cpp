#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "colflow/colstore.hpp"
#include "colflow/data_server.hpp"
#include "colflow/error.hpp"

namespace colflow {

namespace {

constexpr std::string_view kRemoteScheme = "colsrv://";

class LocalTransport final : public Transport {
 public:
  explicit LocalTransport(const std::string& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
    if (fd_ < 0) throw TransportError("cannot open " + path + ": " + std::strerror(errno));
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
      ::close(fd_);
      throw TransportError("cannot stat " + path);
    }
    size_ = static_cast<std::uint64_t>(st.st_size);
  }
  ~LocalTransport() override { ::close(fd_); }

  TransportKind kind() const override { return TransportKind::Local; }
  std::uint64_t size() const override { return size_; }

  std::size_t read(std::uint64_t offset, std::span<std::uint8_t> out) override {
    std::size_t done = 0;
    while (done < out.size()) {
      ssize_t n = ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw TransportError("read " + path_ + ": " + std::strerror(errno));
      }
      if (n == 0) break;
      done += static_cast<std::size_t>(n);
    }
    return done;
  }

 private:
  std::string path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

class RemoteTransport final : public Transport {
 public:
  RemoteTransport(const net::Address& server, const std::string& path) : client_(server) {
    file_ = client_.open(path);
  }

  TransportKind kind() const override { return TransportKind::Remote; }
  std::uint64_t size() const override { return file_.size; }

  std::size_t read(std::uint64_t offset, std::span<std::uint8_t> out) override {
    if (out.empty()) return 0;
    return client_.read(file_.id, offset, out);
  }

 private:
  DataClient client_;
  DataClient::FileRef file_;
};

}  // namespace

ParsedUri parse_uri(std::string_view uri) {
  ParsedUri p;
  if (uri.starts_with(kRemoteScheme)) {
    auto rest = uri.substr(kRemoteScheme.size());
    auto slash = rest.find('/');
    if (slash == std::string_view::npos || slash == 0) {
      throw ValidationError("remote URI needs colsrv://host:port/path: " + std::string(uri));
    }
    p.kind = TransportKind::Remote;
    p.server = std::string(rest.substr(0, slash));
    p.path = std::string(rest.substr(slash + 1));
    if (p.path.empty()) throw ValidationError("remote URI has an empty path: " + std::string(uri));
    return p;
  }
  p.path = std::string(uri);
  return p;
}

std::unique_ptr<Transport> open_transport(std::string_view uri) {
  auto p = parse_uri(uri);
  if (p.kind == TransportKind::Remote) {
    return std::make_unique<RemoteTransport>(net::parse_address(p.server), p.path);
  }
  return std::make_unique<LocalTransport>(p.path);
}

}  // namespace colflow
