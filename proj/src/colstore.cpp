#include "colflow/colstore.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "colflow/bytes.hpp"
#include "colflow/error.hpp"

namespace colflow {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'T', 'R'};
constexpr char kTrailerMagic[4] = {'T', 'O', 'O', 'F'};

using FormatReader = BasicByteReader<FormatError>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

void encode_chunk(const ColumnData& data, std::vector<std::uint8_t>& out) {
  out.clear();
  ByteWriter w(&out);
  std::visit(overloaded{
                 [&](const std::vector<double>& v) { w.put_array<double>(v); },
                 [&](const std::vector<std::int64_t>& v) { w.put_array<std::int64_t>(v); },
                 [&](const std::vector<std::uint8_t>& v) {
                   for (auto b : v) w.put<std::uint8_t>(b ? 1 : 0);
                 },
                 [&](const auto& vec) {
                   for (std::size_t i = 0; i < vec.size(); ++i) {
                     w.put<std::uint32_t>(static_cast<std::uint32_t>(vec.offsets[i + 1] - vec.offsets[i]));
                   }
                   using T = typename std::decay_t<decltype(vec.values)>::value_type;
                   w.put_array<T>(vec.values);
                 },
             },
             data);
}

template <typename T>
VecColumn<T> decode_vec(FormatReader& r, std::size_t n) {
  VecColumn<T> col;
  std::vector<std::uint32_t> lengths;
  r.get_array(n, lengths);
  col.offsets.reserve(n + 1);
  std::uint64_t total = 0;
  for (auto len : lengths) {
    total += len;
    col.offsets.push_back(total);
  }
  r.get_array(total, col.values);
  return col;
}

ColumnData decode_chunk(std::span<const std::uint8_t> bytes, Dtype dtype, std::size_t n) {
  FormatReader r(bytes);
  ColumnData out;
  switch (dtype) {
    case Dtype::F64: {
      std::vector<double> v;
      r.get_array(n, v);
      out = std::move(v);
      break;
    }
    case Dtype::I64: {
      std::vector<std::int64_t> v;
      r.get_array(n, v);
      out = std::move(v);
      break;
    }
    case Dtype::BOOL: {
      std::vector<std::uint8_t> v;
      r.get_array(n, v);
      for (auto b : v) {
        if (b > 1) throw FormatError("bool chunk holds a byte other than 0/1");
      }
      out = std::move(v);
      break;
    }
    case Dtype::VEC_F64:
      out = decode_vec<double>(r, n);
      break;
    case Dtype::VEC_I64:
      out = decode_vec<std::int64_t>(r, n);
      break;
  }
  if (!r.done()) throw FormatError("chunk has trailing bytes");
  return out;
}

void check_schema(const std::vector<ColumnSchema>& schema) {
  std::unordered_set<std::string> seen;
  for (const auto& c : schema) {
    if (!valid_column_name(c.name)) throw ValidationError("invalid column name '" + c.name + "'");
    if (!seen.insert(c.name).second) throw ValidationError("duplicate column name '" + c.name + "'");
    if (static_cast<std::uint8_t>(c.dtype) > static_cast<std::uint8_t>(Dtype::VEC_I64)) {
      throw ValidationError("invalid dtype for column '" + c.name + "'");
    }
  }
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths
  while (!bytes.empty()) {
    auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size(), 1u << 30));
    crc = ::crc32(crc, bytes.data(), n);
    bytes = bytes.subspan(n);
  }
  return static_cast<std::uint32_t>(crc);
}

std::string_view dtype_name(Dtype t) {
  switch (t) {
    case Dtype::F64: return "F64";
    case Dtype::I64: return "I64";
    case Dtype::BOOL: return "BOOL";
    case Dtype::VEC_F64: return "VEC_F64";
    case Dtype::VEC_I64: return "VEC_I64";
  }
  return "?";
}

bool is_vector(Dtype t) { return t == Dtype::VEC_F64 || t == Dtype::VEC_I64; }

bool valid_column_name(std::string_view name) {
  if (name.empty()) return false;
  auto head = [](char c) { return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || c == '_'; };
  if (!head(name[0])) return false;
  return std::all_of(name.begin() + 1, name.end(), [&](char c) { return head(c) || (c >= '0' && c <= '9'); });
}

std::size_t column_size(const ColumnData& data) {
  return std::visit([](const auto& c) -> std::size_t { return c.size(); }, data);
}

ColumnData empty_column(Dtype t) {
  switch (t) {
    case Dtype::F64: return std::vector<double>{};
    case Dtype::I64: return std::vector<std::int64_t>{};
    case Dtype::BOOL: return std::vector<std::uint8_t>{};
    case Dtype::VEC_F64: return VecColumn<double>{};
    case Dtype::VEC_I64: return VecColumn<std::int64_t>{};
  }
  throw ValidationError("invalid dtype");
}

ColumnData slice_column(const ColumnData& src, std::size_t begin, std::size_t count) {
  return std::visit(
      [&](const auto& c) -> ColumnData {
        using C = std::decay_t<decltype(c)>;
        if constexpr (std::is_same_v<C, VecColumn<double>> || std::is_same_v<C, VecColumn<std::int64_t>>) {
          C out;
          auto lo = c.offsets[begin];
          auto hi = c.offsets[begin + count];
          out.values.assign(c.values.begin() + static_cast<std::ptrdiff_t>(lo),
                            c.values.begin() + static_cast<std::ptrdiff_t>(hi));
          out.offsets.reserve(count + 1);
          for (std::size_t i = 1; i <= count; ++i) out.offsets.push_back(c.offsets[begin + i] - lo);
          return out;
        } else {
          return C(c.begin() + static_cast<std::ptrdiff_t>(begin),
                   c.begin() + static_cast<std::ptrdiff_t>(begin + count));
        }
      },
      src);
}

void append_row(ColumnData& dst, const ColumnData& src, std::size_t i) {
  std::visit(
      [&](auto& d) {
        using C = std::decay_t<decltype(d)>;
        const auto& s = std::get<C>(src);
        if constexpr (std::is_same_v<C, VecColumn<double>> || std::is_same_v<C, VecColumn<std::int64_t>>) {
          d.push_back(s.row(i));
        } else {
          d.push_back(s[i]);
        }
      },
      dst);
}

std::optional<std::size_t> DatasetInfo::column_index(std::string_view name) const {
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (schema[i].name == name) return i;
  }
  return std::nullopt;
}

std::uint64_t DatasetInfo::chunk_bytes(std::span<const std::string> columns, std::uint64_t begin,
                                       std::uint64_t end) const {
  std::uint64_t total = 0;
  for (const auto& name : columns) {
    auto idx = column_index(name);
    if (!idx) throw ValidationError("unknown column '" + name + "'");
    for (const auto& cl : clusters) {
      if (cl.entry_start < end && cl.entry_end() > begin) total += cl.chunks[*idx].length;
    }
  }
  return total;
}

std::uint64_t DatasetInfo::data_bytes() const {
  std::uint64_t total = 0;
  for (const auto& cl : clusters) {
    for (const auto& ch : cl.chunks) total += ch.length;
  }
  return total;
}

const Column& ColumnBatch::column(std::string_view name) const {
  for (const auto& c : columns) {
    if (c.name == name) return c;
  }
  throw ValidationError("column '" + std::string(name) + "' not in batch");
}

std::uint64_t ColumnBatch::byte_size() const {
  std::uint64_t total = 0;
  for (const auto& c : columns) {
    total += std::visit(
        [](const auto& d) -> std::uint64_t {
          using C = std::decay_t<decltype(d)>;
          if constexpr (std::is_same_v<C, VecColumn<double>> || std::is_same_v<C, VecColumn<std::int64_t>>) {
            return d.offsets.size() * sizeof(std::uint64_t) + d.values.size() * 8;
          } else {
            return d.size() * sizeof(typename C::value_type);
          }
        },
        c.data);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Writer

struct DatasetWriter::Impl {
  std::filesystem::path path;
  std::ofstream out;
  std::vector<ColumnSchema> schema;
  std::vector<ClusterInfo> clusters;
  std::uint64_t offset = 0;
  std::uint64_t entries = 0;
  bool finished = false;
  std::vector<std::uint8_t> scratch;

  void write(std::span<const std::uint8_t> bytes) {
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + path.string());
    offset += bytes.size();
  }
};

DatasetWriter::DatasetWriter(const std::filesystem::path& path, std::vector<ColumnSchema> schema)
    : impl_(std::make_unique<Impl>()) {
  check_schema(schema);
  impl_->path = path;
  impl_->schema = std::move(schema);
  impl_->out.open(path, std::ios::binary | std::ios::trunc);
  if (!impl_->out) throw Error("cannot open for writing: " + path.string());
  std::uint8_t header[kHeaderSize] = {'C', 'S', 'T', 'R', kFormatVersion, 0, 0, 0};
  impl_->write(header);
}

DatasetWriter::~DatasetWriter() = default;

void DatasetWriter::write_cluster(const ColumnTable& cluster) {
  auto& im = *impl_;
  if (im.finished) throw Error("writer already finished");
  if (cluster.size() != im.schema.size()) throw ValidationError("cluster column count does not match schema");
  std::size_t n = cluster.empty() ? 0 : cluster.front().size();
  if (n == 0) throw ValidationError("clusters must hold at least one entry");
  if (n > 0xFFFFFFFFu) throw ValidationError("cluster too large");
  ClusterInfo info;
  info.entry_start = im.entries;
  info.entry_count = static_cast<std::uint32_t>(n);
  for (std::size_t i = 0; i < cluster.size(); ++i) {
    const auto& col = cluster[i];
    if (col.name != im.schema[i].name || col.dtype() != im.schema[i].dtype) {
      throw ValidationError("cluster column '" + col.name + "' does not match schema");
    }
    if (col.size() != n) throw ValidationError("column '" + col.name + "' has a mismatched length");
    encode_chunk(col.data, im.scratch);
    info.chunks.push_back({im.offset, im.scratch.size(), crc32(im.scratch)});
    im.write(im.scratch);
  }
  im.entries += n;
  im.clusters.push_back(std::move(info));
}

DatasetInfo DatasetWriter::finish() {
  auto& im = *impl_;
  if (im.finished) throw Error("writer already finished");
  im.finished = true;
  ByteWriter w;
  w.put<std::uint32_t>(static_cast<std::uint32_t>(im.schema.size()));
  for (const auto& c : im.schema) {
    w.put_string(c.name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(c.dtype));
  }
  w.put<std::uint64_t>(im.entries);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(im.clusters.size()));
  for (const auto& cl : im.clusters) {
    w.put<std::uint64_t>(cl.entry_start);
    w.put<std::uint32_t>(cl.entry_count);
    for (const auto& ch : cl.chunks) {
      w.put<std::uint64_t>(ch.offset);
      w.put<std::uint64_t>(ch.length);
      w.put<std::uint32_t>(ch.crc32);
    }
  }
  auto footer = w.take();
  std::uint64_t footer_offset = im.offset;
  im.write(footer);
  ByteWriter t;
  t.put<std::uint64_t>(footer_offset);
  t.put<std::uint32_t>(crc32(footer));
  t.put_bytes(std::string_view(kTrailerMagic, 4));
  im.write(t.take());
  im.out.close();
  if (!im.out) throw Error("write failed: " + im.path.string());

  DatasetInfo info;
  info.uri = im.path.string();
  info.schema = im.schema;
  info.clusters = std::move(im.clusters);
  info.total_entries = im.entries;
  info.file_size = im.offset;
  info.metadata_bytes = kHeaderSize + footer.size() + kTrailerSize;
  return info;
}

DatasetInfo write_dataset(const ColumnTable& columns, std::uint64_t cluster_size, const std::filesystem::path& path) {
  if (cluster_size < 1 || cluster_size > 0xFFFFFFFFu) throw ValidationError("cluster_size must be in [1, 2^32)");
  std::size_t n = columns.empty() ? 0 : columns.front().size();
  std::vector<ColumnSchema> schema;
  for (const auto& c : columns) {
    if (c.size() != n) throw ValidationError("column '" + c.name + "' has a mismatched length");
    schema.push_back({c.name, c.dtype()});
  }
  DatasetWriter writer(path, schema);
  for (std::size_t start = 0; start < n; start += cluster_size) {
    std::size_t count = std::min<std::size_t>(cluster_size, n - start);
    ColumnTable cluster;
    cluster.reserve(columns.size());
    for (const auto& c : columns) cluster.push_back({c.name, slice_column(c.data, start, count)});
    writer.write_cluster(cluster);
  }
  return writer.finish();
}

// ---------------------------------------------------------------------------
// Reader

Dataset::Dataset(std::shared_ptr<const DatasetInfo> info, std::unique_ptr<Transport> transport, ReadAccount account)
    : info_(std::move(info)), transport_(std::move(transport)), account_(account) {}

Dataset Dataset::open(std::string_view uri) {
  auto transport = open_transport(uri);
  ReadAccount account;
  auto read_exact = [&](std::uint64_t offset, std::size_t len) {
    std::vector<std::uint8_t> buf(len);
    std::size_t got = transport->read(offset, buf);
    account.bytes_read += got;
    account.read_calls += 1;
    if (got != len) throw FormatError("truncated file: " + std::string(uri));
    return buf;
  };

  std::uint64_t size = transport->size();
  if (size < kHeaderSize + kTrailerSize) throw FormatError("truncated file: " + std::string(uri));
  auto header = read_exact(0, kHeaderSize);
  if (!std::equal(header.begin(), header.begin() + 4, kMagic)) throw FormatError("bad magic");
  if (header[4] != kFormatVersion) {
    throw FormatError("unsupported version " + std::to_string(header[4]));
  }
  auto trailer = read_exact(size - kTrailerSize, kTrailerSize);
  FormatReader tr(trailer);
  auto footer_offset = tr.get<std::uint64_t>();
  auto footer_crc = tr.get<std::uint32_t>();
  auto tail = tr.get_bytes(4);
  if (!std::equal(tail.begin(), tail.end(), kTrailerMagic)) throw FormatError("bad magic");
  if (footer_offset < kHeaderSize || footer_offset > size - kTrailerSize) {
    throw FormatError("truncated footer");
  }
  auto footer = read_exact(footer_offset, size - kTrailerSize - footer_offset);
  if (crc32(footer) != footer_crc) throw FormatError("footer CRC mismatch");

  auto info = std::make_shared<DatasetInfo>();
  info->uri = std::string(uri);
  info->file_size = size;
  info->transport = transport->kind();
  info->metadata_bytes = account.bytes_read;
  FormatReader r(footer);
  auto ncols = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < ncols; ++i) {
    ColumnSchema c;
    auto name_len = r.get<std::uint16_t>();
    auto name = r.get_bytes(name_len);
    c.name.assign(name.begin(), name.end());
    auto code = r.get<std::uint8_t>();
    if (code > static_cast<std::uint8_t>(Dtype::VEC_I64)) throw FormatError("unknown dtype code");
    c.dtype = static_cast<Dtype>(code);
    info->schema.push_back(std::move(c));
  }
  try {
    check_schema(info->schema);
  } catch (const ValidationError& e) {
    throw FormatError(std::string("invalid schema in footer: ") + e.what());
  }
  info->total_entries = r.get<std::uint64_t>();
  auto nclusters = r.get<std::uint32_t>();
  std::uint64_t expect_start = 0;
  for (std::uint32_t k = 0; k < nclusters; ++k) {
    ClusterInfo cl;
    cl.entry_start = r.get<std::uint64_t>();
    cl.entry_count = r.get<std::uint32_t>();
    if (cl.entry_start != expect_start || cl.entry_count == 0) throw FormatError("clusters are not contiguous");
    expect_start += cl.entry_count;
    for (std::uint32_t i = 0; i < ncols; ++i) {
      ChunkInfo ch;
      ch.offset = r.get<std::uint64_t>();
      ch.length = r.get<std::uint64_t>();
      ch.crc32 = r.get<std::uint32_t>();
      if (ch.offset < kHeaderSize || ch.offset > footer_offset || ch.length > footer_offset - ch.offset) {
        throw FormatError("chunk region outside data section");
      }
      cl.chunks.push_back(ch);
    }
    info->clusters.push_back(std::move(cl));
  }
  if (!r.done()) throw FormatError("footer has trailing bytes");
  if (expect_start != info->total_entries) throw FormatError("cluster entries do not sum to total_entries");
  return Dataset(std::move(info), std::move(transport), account);
}

std::vector<std::uint8_t> Dataset::fetch_chunk(const ChunkInfo& chunk) {
  std::vector<std::uint8_t> buf(chunk.length);
  std::size_t got = transport_->read(chunk.offset, buf);
  account_.bytes_read += got;
  account_.chunk_bytes += got;
  account_.read_calls += 1;
  if (got != chunk.length) throw FormatError("truncated chunk in " + info_->uri);
  if (crc32(buf) != chunk.crc32) throw FormatError("chunk CRC mismatch in " + info_->uri);
  return buf;
}

BatchStream Dataset::read_range(std::span<const std::string> columns, std::uint64_t begin, std::uint64_t end) {
  if (begin > end || end > info_->total_entries) {
    throw ValidationError("invalid entry range [" + std::to_string(begin) + "," + std::to_string(end) + ") for " +
                          info_->uri);
  }
  std::vector<std::size_t> ids;
  for (const auto& name : columns) {
    auto idx = info_->column_index(name);
    if (!idx) throw ValidationError("unknown column '" + name + "'");
    ids.push_back(*idx);
  }
  return BatchStream(this, std::move(ids), begin, end);
}

BatchStream::BatchStream(Dataset* ds, std::vector<std::size_t> column_ids, std::uint64_t begin, std::uint64_t end)
    : ds_(ds), column_ids_(std::move(column_ids)), begin_(begin), end_(end) {
  const auto& clusters = ds_->info().clusters;
  // first cluster ending after begin
  auto it = std::upper_bound(clusters.begin(), clusters.end(), begin,
                             [](std::uint64_t v, const ClusterInfo& c) { return v < c.entry_end(); });
  cluster_ = static_cast<std::size_t>(it - clusters.begin());
}

std::optional<ColumnBatch> BatchStream::next() {
  const auto& info = ds_->info();
  if (begin_ >= end_ || cluster_ >= info.clusters.size()) return std::nullopt;
  const auto& cl = info.clusters[cluster_];
  if (cl.entry_start >= end_) return std::nullopt;
  ++cluster_;

  std::uint64_t lo = std::max(begin_, cl.entry_start);
  std::uint64_t hi = std::min(end_, cl.entry_end());
  ColumnBatch batch;
  batch.entry_start = lo;
  batch.entry_count = hi - lo;
  for (auto id : column_ids_) {
    const auto& schema = info.schema[id];
    auto bytes = ds_->fetch_chunk(cl.chunks[id]);
    auto data = decode_chunk(bytes, schema.dtype, cl.entry_count);
    if (lo != cl.entry_start || hi != cl.entry_end()) {
      data = slice_column(data, lo - cl.entry_start, hi - lo);
    }
    batch.columns.push_back({schema.name, std::move(data)});
  }
  return batch;
}

}  // namespace colflow
