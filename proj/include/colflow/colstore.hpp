#pragma once

// Columnar event files.
//
// Layout (all integers little-endian):
//
//   "CSTR" u8 version=1 u8[3] pad
//   chunk bytes, cluster-major, one chunk per column per cluster
//   footer body:
//     u32 n_columns, per column: u16 name_len, name, u8 dtype
//     u64 total_entries
//     u32 n_clusters, per cluster: u64 entry_start, u32 entry_count,
//       per column: u64 offset, u64 length, u32 crc32
//   trailer (last 16 bytes): u64 footer_offset, u32 footer_crc32, "TOOF"
//
// Chunk encodings: F64/I64 packed 8-byte values, BOOL one byte per entry,
// VEC_* a u32 length per entry followed by the packed element values.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace colflow {

inline constexpr std::uint8_t kFormatVersion = 1;
inline constexpr std::size_t kHeaderSize = 8;
inline constexpr std::size_t kTrailerSize = 16;
inline constexpr std::uint64_t kDefaultClusterSize = 10000;

// The numeric values are the on-disk dtype codes.
enum class Dtype : std::uint8_t { F64 = 0, I64 = 1, BOOL = 2, VEC_F64 = 3, VEC_I64 = 4 };

std::string_view dtype_name(Dtype t);
bool is_vector(Dtype t);
bool valid_column_name(std::string_view name);

struct ColumnSchema {
  std::string name;
  Dtype dtype = Dtype::F64;

  bool operator==(const ColumnSchema&) const = default;
};

// Jagged column: row i spans values[offsets[i], offsets[i+1]).
template <typename T>
struct VecColumn {
  std::vector<std::uint64_t> offsets{0};
  std::vector<T> values;

  std::size_t size() const { return offsets.size() - 1; }
  std::span<const T> row(std::size_t i) const {
    return std::span<const T>(values).subspan(offsets[i], offsets[i + 1] - offsets[i]);
  }
  void push_back(std::span<const T> row) {
    values.insert(values.end(), row.begin(), row.end());
    offsets.push_back(values.size());
  }

  bool operator==(const VecColumn&) const = default;
};

// Alternative index matches Dtype. BOOL is stored as one byte per entry.
using ColumnData = std::variant<std::vector<double>, std::vector<std::int64_t>, std::vector<std::uint8_t>,
                                VecColumn<double>, VecColumn<std::int64_t>>;

std::size_t column_size(const ColumnData& data);
ColumnData empty_column(Dtype t);
// Copies rows [begin, begin+count) of `src` into a new column.
ColumnData slice_column(const ColumnData& src, std::size_t begin, std::size_t count);
// Appends row `i` of `src` to `dst` (same dtype).
void append_row(ColumnData& dst, const ColumnData& src, std::size_t i);

struct Column {
  std::string name;
  ColumnData data;

  Dtype dtype() const { return static_cast<Dtype>(data.index()); }
  std::size_t size() const { return column_size(data); }

  bool operator==(const Column&) const = default;
};

using ColumnTable = std::vector<Column>;

struct ChunkInfo {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;
  std::uint32_t crc32 = 0;
};

struct ClusterInfo {
  std::uint64_t entry_start = 0;
  std::uint32_t entry_count = 0;
  std::vector<ChunkInfo> chunks;  // parallel to the schema

  std::uint64_t entry_end() const { return entry_start + entry_count; }
};

enum class TransportKind { Local, Remote };

struct DatasetInfo {
  std::string uri;
  std::vector<ColumnSchema> schema;
  std::vector<ClusterInfo> clusters;
  std::uint64_t total_entries = 0;
  std::uint64_t file_size = 0;
  TransportKind transport = TransportKind::Local;
  // Header + trailer + footer body: exactly what open() reads.
  std::uint64_t metadata_bytes = 0;

  std::optional<std::size_t> column_index(std::string_view name) const;
  // Sum of chunk lengths of `columns` over clusters overlapping [begin, end).
  std::uint64_t chunk_bytes(std::span<const std::string> columns, std::uint64_t begin, std::uint64_t end) const;
  std::uint64_t data_bytes() const;
};

struct ReadAccount {
  std::uint64_t bytes_read = 0;
  std::uint64_t read_calls = 0;
  // Portion of bytes_read that came from column chunks.
  std::uint64_t chunk_bytes = 0;
};

// Writes clusters incrementally; the footer is written by finish().
class DatasetWriter {
 public:
  DatasetWriter(const std::filesystem::path& path, std::vector<ColumnSchema> schema);
  DatasetWriter(const DatasetWriter&) = delete;
  DatasetWriter& operator=(const DatasetWriter&) = delete;
  ~DatasetWriter();

  // `cluster` holds one column per schema entry, in schema order, all the
  // same non-zero length.
  void write_cluster(const ColumnTable& cluster);
  DatasetInfo finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Writes `columns` as a file of fixed-size clusters; the last cluster may be short.
DatasetInfo write_dataset(const ColumnTable& columns, std::uint64_t cluster_size, const std::filesystem::path& path);

// Random-access byte source behind a dataset.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportKind kind() const = 0;
  virtual std::uint64_t size() const = 0;
  // Fills as much of `out` as the file allows; returns the byte count.
  virtual std::size_t read(std::uint64_t offset, std::span<std::uint8_t> out) = 0;
};

struct ParsedUri {
  TransportKind kind = TransportKind::Local;
  std::string server;  // host:port for remote
  std::string path;
};

// `colsrv://host:port/path` selects the remote transport; anything else is a local path.
ParsedUri parse_uri(std::string_view uri);
std::unique_ptr<Transport> open_transport(std::string_view uri);

struct ColumnBatch {
  std::uint64_t entry_start = 0;
  std::uint64_t entry_count = 0;
  std::vector<Column> columns;  // in requested order

  const Column& column(std::string_view name) const;
  std::uint64_t byte_size() const;
};

class Dataset;

// Lazily fetches one cluster per next() call.
class BatchStream {
 public:
  BatchStream(Dataset* ds, std::vector<std::size_t> column_ids, std::uint64_t begin, std::uint64_t end);
  std::optional<ColumnBatch> next();

 private:
  Dataset* ds_;
  std::vector<std::size_t> column_ids_;
  std::uint64_t begin_;
  std::uint64_t end_;
  std::size_t cluster_ = 0;
};

// An open file plus its reader session. Metadata is immutable and shareable
// through info_ptr(); the transport and read account belong to this session.
class Dataset {
 public:
  static Dataset open(std::string_view uri);

  const DatasetInfo& info() const { return *info_; }
  std::shared_ptr<const DatasetInfo> info_ptr() const { return info_; }
  const ReadAccount& account() const { return account_; }

  // One batch per overlapped cluster, trimmed to [begin, end). Only chunks
  // of the requested columns are fetched.
  BatchStream read_range(std::span<const std::string> columns, std::uint64_t begin, std::uint64_t end);

 private:
  friend class BatchStream;
  Dataset(std::shared_ptr<const DatasetInfo> info, std::unique_ptr<Transport> transport, ReadAccount account);
  std::vector<std::uint8_t> fetch_chunk(const ChunkInfo& chunk);

  std::shared_ptr<const DatasetInfo> info_;
  std::unique_ptr<Transport> transport_;
  ReadAccount account_;
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

}  // namespace colflow
