#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "colflow/error.hpp"

namespace colflow {

namespace detail {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

}  // namespace detail

// Appends little-endian scalars and length-prefixed strings to a byte buffer.
class ByteWriter {
 public:
  ByteWriter() = default;
  explicit ByteWriter(std::vector<std::uint8_t>* out) : out_(out) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    v = detail::to_little(v);
    auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    buf().insert(buf().end(), p, p + sizeof(T));
  }

  void put_bytes(std::span<const std::uint8_t> bytes) { buf().insert(buf().end(), bytes.begin(), bytes.end()); }
  void put_bytes(std::string_view bytes) {
    auto* p = reinterpret_cast<const std::uint8_t*>(bytes.data());
    buf().insert(buf().end(), p, p + bytes.size());
  }

  // u16 length + bytes
  void put_string(std::string_view s) {
    if (s.size() > 0xFFFF) throw ProtocolError("string too long for u16 length prefix");
    put<std::uint16_t>(static_cast<std::uint16_t>(s.size()));
    put_bytes(s);
  }

  // u32 length + bytes
  void put_blob(std::string_view s) {
    put<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      auto* p = reinterpret_cast<const std::uint8_t*>(values.data());
      buf().insert(buf().end(), p, p + values.size_bytes());
    } else {
      for (const T& v : values) put(v);
    }
  }

  std::size_t size() const { return out_ ? out_->size() : own_.size(); }
  std::vector<std::uint8_t>& buf() { return out_ ? *out_ : own_; }
  std::vector<std::uint8_t> take() { return std::move(own_); }

 private:
  std::vector<std::uint8_t>* out_ = nullptr;
  std::vector<std::uint8_t> own_;
};

// Bounds-checked little-endian reader over a byte span. Running past the
// end throws the error type given at construction.
template <typename Err = ProtocolError>
class BasicByteReader {
 public:
  explicit BasicByteReader(std::span<const std::uint8_t> data) : data_(data) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return detail::to_little(v);
  }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto s = data_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  std::string get_string() {
    auto n = get<std::uint16_t>();
    auto s = get_bytes(n);
    return {reinterpret_cast<const char*>(s.data()), s.size()};
  }

  std::string get_blob() {
    auto n = get<std::uint32_t>();
    auto s = get_bytes(n);
    return {reinterpret_cast<const char*>(s.data()), s.size()};
  }

  template <typename T>
  void get_array(std::size_t count, std::vector<T>& out) {
    if (count > remaining() / sizeof(T)) throw Err("truncated input: array overruns buffer");
    out.resize(count);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(out.data(), data_.data() + pos_, count * sizeof(T));
      pos_ += count * sizeof(T);
    } else {
      for (auto& v : out) v = get<T>();
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }
  std::size_t position() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > remaining()) throw Err("truncated input");
  }

  std::span<const std::uint8_t> data_;
  std::size_t pos_ = 0;
};

using ByteReader = BasicByteReader<ProtocolError>;

}  // namespace colflow
