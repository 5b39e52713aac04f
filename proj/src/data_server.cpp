#include "colflow/data_server.hpp"

#include <sys/socket.h>

#include <fstream>
#include <unordered_map>

#include "colflow/bytes.hpp"
#include "colflow/colstore.hpp"
#include "colflow/error.hpp"

namespace colflow {

namespace {

constexpr std::uint32_t kMaxRead = 256u << 20;

struct DataServerError {
  DataErrorCode code;
  std::string message;
};

std::vector<std::uint8_t> reply(DataOp op, std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.put<std::uint16_t>(static_cast<std::uint16_t>(op));
  w.put_bytes(payload);
  return w.take();
}

std::vector<std::uint8_t> error_reply(DataErrorCode code, std::string_view message) {
  ByteWriter w;
  w.put<std::uint16_t>(static_cast<std::uint16_t>(DataOp::Error));
  w.put<std::uint16_t>(static_cast<std::uint16_t>(code));
  w.put_string(message.substr(0, 0xFFFF));
  return w.take();
}

}  // namespace

std::filesystem::path resolve_under_root(const std::filesystem::path& root, std::string_view path) {
  namespace fs = std::filesystem;
  fs::path rel(path);
  if (rel.is_absolute()) rel = rel.relative_path();
  for (const auto& part : rel) {
    if (part == "..") return {};
  }
  std::error_code ec;
  auto base = fs::weakly_canonical(root, ec);
  if (ec) return {};
  auto full = fs::weakly_canonical(base / rel, ec);
  if (ec) return {};
  // symlinks may still point outside
  auto b = base.begin();
  auto f = full.begin();
  for (; b != base.end(); ++b, ++f) {
    if (f == full.end() || *b != *f) return {};
  }
  return full;
}

DataServer::DataServer(std::filesystem::path root, const net::Address& listen)
    : root_(std::move(root)), listener_(listen) {
  if (!std::filesystem::is_directory(root_)) {
    throw ValidationError("data root is not a readable directory: " + root_.string());
  }
  acceptor_ = std::thread([this] { accept_loop(); });
}

DataServer::~DataServer() { stop(); }

ServedCounters DataServer::totals() const { return {bytes_served_.load(), read_calls_.load()}; }

void DataServer::stop() {
  if (stopping_.exchange(true)) return;
  listener_.shutdown();
  if (acceptor_.joinable()) acceptor_.join();
  std::vector<std::thread> threads;
  {
    std::lock_guard lock(sessions_mu_);
    for (int fd : session_fds_) ::shutdown(fd, SHUT_RDWR);
    threads.swap(session_threads_);
  }
  for (auto& t : threads) t.join();
}

void DataServer::accept_loop() {
  while (!stopping_) {
    net::Socket sock = listener_.accept();
    if (!sock.valid()) break;
    std::lock_guard lock(sessions_mu_);
    if (stopping_) break;
    session_fds_.push_back(sock.fd());
    session_threads_.emplace_back([this, s = std::move(sock)]() mutable { serve_session(std::move(s)); });
  }
}

void DataServer::serve_session(net::Socket sock) {
  struct OpenFile {
    std::ifstream in;
    std::uint64_t size;
  };
  std::unordered_map<std::uint64_t, OpenFile> files;
  std::uint64_t next_id = 1;
  ServedCounters session;
  std::vector<std::uint8_t> buf;

  auto handle = [&](std::span<const std::uint8_t> frame) -> std::vector<std::uint8_t> {
    ByteReader r(frame);
    auto op = static_cast<DataOp>(r.get<std::uint16_t>());
    switch (op) {
      case DataOp::Open:
      case DataOp::Stat: {
        auto path = r.get_string();
        auto full = resolve_under_root(root_, path);
        if (full.empty()) return error_reply(DataErrorCode::PathEscape, "path escapes data root: " + path);
        std::error_code ec;
        if (!std::filesystem::is_regular_file(full, ec)) {
          return error_reply(DataErrorCode::NotFound, "no such file: " + path);
        }
        std::uint64_t size = std::filesystem::file_size(full, ec);
        if (ec) return error_reply(DataErrorCode::Io, ec.message());
        ByteWriter w;
        if (op == DataOp::Open) {
          std::ifstream in(full, std::ios::binary);
          if (!in) return error_reply(DataErrorCode::Io, "cannot open " + path);
          std::uint64_t id = next_id++;
          files.emplace(id, OpenFile{std::move(in), size});
          w.put<std::uint64_t>(id);
        }
        w.put<std::uint64_t>(size);
        return reply(op, w.take());
      }
      case DataOp::Read: {
        auto id = r.get<std::uint64_t>();
        auto off = r.get<std::uint64_t>();
        auto len = r.get<std::uint32_t>();
        auto it = files.find(id);
        if (it == files.end()) return error_reply(DataErrorCode::BadHandle, "unknown file id");
        if (len > kMaxRead) return error_reply(DataErrorCode::BadRequest, "read length exceeds limit");
        auto& f = it->second;
        std::uint64_t avail = off >= f.size ? 0 : std::min<std::uint64_t>(len, f.size - off);
        buf.resize(avail);
        if (avail > 0) {
          f.in.clear();
          f.in.seekg(static_cast<std::streamoff>(off));
          f.in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(avail));
          if (static_cast<std::uint64_t>(f.in.gcount()) != avail) {
            return error_reply(DataErrorCode::Io, "short read from disk");
          }
        }
        auto out = reply(op, buf);
        session.bytes_served += avail;
        session.read_calls += 1;
        bytes_served_ += avail;
        read_calls_ += 1;
        return out;
      }
      case DataOp::Metrics: {
        bool server_wide = r.remaining() > 0 && r.get<std::uint8_t>() == 1;
        ByteWriter w;
        auto c = server_wide ? totals() : session;
        w.put<std::uint64_t>(c.bytes_served);
        w.put<std::uint64_t>(c.read_calls);
        return reply(op, w.take());
      }
      case DataOp::Close: {
        auto id = r.get<std::uint64_t>();
        if (files.erase(id) == 0) return error_reply(DataErrorCode::BadHandle, "unknown file id");
        return reply(op, {});
      }
      default:
        return error_reply(DataErrorCode::BadRequest, "unknown opcode");
    }
  };

  try {
    while (!stopping_) {
      auto frame = net::recv_frame(sock, 1 << 20);
      if (!frame) break;
      std::vector<std::uint8_t> out;
      try {
        out = handle(*frame);
      } catch (const ProtocolError& e) {
        out = error_reply(DataErrorCode::BadRequest, e.what());
      }
      net::send_frame(sock, out);
    }
  } catch (const Error&) {
    // client vanished; nothing to report to
  }
  std::lock_guard lock(sessions_mu_);
  std::erase(session_fds_, sock.fd());
}

// ---------------------------------------------------------------------------

DataClient::DataClient(const net::Address& server) : sock_(net::Socket::connect(server)) {}

std::vector<std::uint8_t> DataClient::call(DataOp op, std::span<const std::uint8_t> payload) {
  ByteWriter w;
  w.put<std::uint16_t>(static_cast<std::uint16_t>(op));
  w.put_bytes(payload);
  net::send_frame(sock_, w.buf());
  auto frame = net::recv_frame(sock_);
  if (!frame) throw TransportError("data server closed the connection");
  ByteReader r(*frame);
  auto rop = r.get<std::uint16_t>();
  if (rop == static_cast<std::uint16_t>(DataOp::Error)) {
    auto code = r.get<std::uint16_t>();
    auto msg = r.get_string();
    throw TransportError("data server error " + std::to_string(code) + ": " + msg);
  }
  if (rop != static_cast<std::uint16_t>(op)) throw ProtocolError("data server replied with the wrong opcode");
  frame->erase(frame->begin(), frame->begin() + 2);
  return std::move(*frame);
}

DataClient::FileRef DataClient::open(std::string_view path) {
  ByteWriter w;
  w.put_string(path);
  auto resp = call(DataOp::Open, w.buf());
  ByteReader r(resp);
  FileRef f;
  f.id = r.get<std::uint64_t>();
  f.size = r.get<std::uint64_t>();
  return f;
}

std::uint64_t DataClient::stat(std::string_view path) {
  ByteWriter w;
  w.put_string(path);
  auto resp = call(DataOp::Stat, w.buf());
  ByteReader r(resp);
  return r.get<std::uint64_t>();
}

std::size_t DataClient::read(std::uint64_t id, std::uint64_t offset, std::span<std::uint8_t> out) {
  std::size_t done = 0;
  // split oversized requests; a chunk-sized request is always a single READ
  while (done < out.size()) {
    auto len = static_cast<std::uint32_t>(std::min<std::size_t>(out.size() - done, kMaxRead));
    ByteWriter w;
    w.put<std::uint64_t>(id);
    w.put<std::uint64_t>(offset + done);
    w.put<std::uint32_t>(len);
    auto resp = call(DataOp::Read, w.buf());
    std::copy(resp.begin(), resp.end(), out.begin() + static_cast<std::ptrdiff_t>(done));
    done += resp.size();
    if (resp.size() < len) break;
  }
  return done;
}

ServedCounters DataClient::metrics(bool server_wide) {
  ByteWriter w;
  w.put<std::uint8_t>(server_wide ? 1 : 0);
  auto resp = call(DataOp::Metrics, w.buf());
  ByteReader r(resp);
  ServedCounters c;
  c.bytes_served = r.get<std::uint64_t>();
  c.read_calls = r.get<std::uint64_t>();
  return c;
}

void DataClient::close(std::uint64_t id) {
  ByteWriter w;
  w.put<std::uint64_t>(id);
  call(DataOp::Close, w.buf());
}

std::uint64_t download(std::string_view uri, std::uint64_t limit, std::size_t block) {
  auto t = open_transport(uri);
  std::vector<std::uint8_t> buf(block);
  std::uint64_t off = 0;
  std::uint64_t size = std::min(t->size(), limit);
  while (off < size) {
    auto n = t->read(off, std::span(buf).first(std::min<std::uint64_t>(block, size - off)));
    if (n == 0) break;
    off += n;
  }
  return off;
}

}  // namespace colflow
