#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "koofu/classify.hpp"
#include "koofu/dataset.hpp"
#include "koofu/errors.hpp"
#include "koofu/stats.hpp"
#include "koofu/transform.hpp"
#include "koofu/types.hpp"

// All on-disk multi-byte values are little-endian. Format violations
// (magic/version/shape/size/content) raise validation_error; operating-system
// failures (open/stat/write) raise io_error.

namespace koofu {

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "file readers/writers assume a little-endian host");

inline std::ifstream open_input(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error(std::string(what) + ": cannot open " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw io_error(std::string(what) + ": cannot open " + path + " for writing");
  return out;
}

inline void finish_output(std::ofstream& out, const std::string& path, const char* what) {
  out.flush();
  if (!out) throw io_error(std::string(what) + ": write failed for " + path);
}

inline std::uint64_t file_bytes(const std::string& path, const char* what) {
  std::error_code ec;
  const std::uint64_t size = std::filesystem::file_size(path, ec);
  if (ec) throw io_error(std::string(what) + ": cannot stat " + path);
  return size;
}

// Declared sizes are checked against the real file before any payload
// allocation or read, so a malformed header can neither over-allocate nor
// hide trailing bytes.
inline void expect_file_size(const std::string& path, std::uint64_t expected,
                             const char* what) {
  const std::uint64_t actual = file_bytes(path, what);
  if (actual != expected)
    throw validation_error(std::string(what) + ": " + path + " holds " +
                           std::to_string(actual) + " bytes but the header declares " +
                           std::to_string(expected) + " (truncated or trailing data)");
}

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const char* what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw validation_error(std::string(what) + ": truncated header");
  return value;
}

inline void write_magic(std::ostream& out, const char magic[4]) { out.write(magic, 4); }

inline void read_magic(std::istream& in, const char expected[4], const char* what) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, expected, 4) != 0)
    throw validation_error(std::string(what) + ": bad magic (expected " +
                           std::string(expected, 4) + ")");
}

inline void read_version(std::istream& in, std::uint16_t supported, const char* what) {
  const auto version = read_pod<std::uint16_t>(in, what);
  if (version != supported)
    throw validation_error(std::string(what) + ": unsupported version " +
                           std::to_string(version));
}

inline void read_payload(std::istream& in, void* dst, std::uint64_t bytes,
                         const char* what) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (!in || static_cast<std::uint64_t>(in.gcount()) != bytes)
    throw validation_error(std::string(what) + ": truncated payload");
}

inline std::string read_text(const std::string& path, const char* what) {
  std::ifstream in = open_input(path, what);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

}  // namespace detail

inline constexpr char kEmbeddingMagic[4] = {'K', 'F', 'E', 'B'};
inline constexpr char kLabelMagic[4] = {'K', 'F', 'L', 'B'};
inline constexpr char kTransformMagic[4] = {'K', 'F', 'T', 'X'};
inline constexpr char kStatsMagic[4] = {'K', 'F', 'S', 'T'};

inline constexpr std::uint64_t kEmbeddingHeaderBytes = 24;
inline constexpr std::uint64_t kLabelHeaderBytes = 14;

// ---------------------------------------------------------------------------
// Embedding files: magic, version u16, dtype u8 (0 = f32), flags u8 (0),
// dim u32, count u64, 4 zero pad bytes, then count x dim f32 rows.

inline void write_embedding_matrix(const Eigen::Ref<const Mat32>& vectors,
                                   std::uint32_t dim, const std::string& path) {
  if (dim == 0) throw validation_error("embeddings: dim must be positive");
  if (vectors.cols() != static_cast<std::int64_t>(dim))
    throw validation_error("embeddings: vector width does not match dim");
  if (!vectors.allFinite())
    throw validation_error("embeddings: non-finite vector component");
  std::ofstream out = detail::open_output(path, "embeddings");
  detail::write_magic(out, kEmbeddingMagic);
  detail::write_pod(out, std::uint16_t{1});
  detail::write_pod(out, std::uint8_t{0});  // dtype f32
  detail::write_pod(out, std::uint8_t{0});  // flags
  detail::write_pod(out, dim);
  detail::write_pod(out, static_cast<std::uint64_t>(vectors.rows()));
  const char pad[4] = {};
  out.write(pad, 4);
  out.write(reinterpret_cast<const char*>(vectors.data()),
            static_cast<std::streamsize>(vectors.size() * sizeof(float)));
  detail::finish_output(out, path, "embeddings");
}

inline void write_embeddings(const EmbeddingDataset& dataset, const std::string& path) {
  dataset.validate();
  write_embedding_matrix(dataset.vectors, dataset.dim, path);
}

inline EmbeddingDataset read_embeddings(const std::string& path) {
  std::ifstream in = detail::open_input(path, "embeddings");
  detail::read_magic(in, kEmbeddingMagic, "embeddings");
  detail::read_version(in, 1, "embeddings");
  const auto dtype = detail::read_pod<std::uint8_t>(in, "embeddings");
  if (dtype != 0)
    throw validation_error("embeddings: unsupported dtype " + std::to_string(dtype) +
                           " (only f32 = 0)");
  const auto flags = detail::read_pod<std::uint8_t>(in, "embeddings");
  if (flags != 0)
    throw validation_error("embeddings: reserved flags byte is nonzero");
  const auto dim = detail::read_pod<std::uint32_t>(in, "embeddings");
  if (dim == 0) throw validation_error("embeddings: dim must be positive");
  const auto count = detail::read_pod<std::uint64_t>(in, "embeddings");
  char pad[4];
  in.read(pad, 4);
  if (!in) throw validation_error("embeddings: truncated header");

  const std::uint64_t row_bytes = static_cast<std::uint64_t>(dim) * sizeof(float);
  if (count > (std::numeric_limits<std::uint64_t>::max() - kEmbeddingHeaderBytes) / row_bytes)
    throw validation_error("embeddings: header-declared size overflows");
  detail::expect_file_size(path, kEmbeddingHeaderBytes + count * row_bytes, "embeddings");

  EmbeddingDataset dataset;
  dataset.dim = dim;
  dataset.vectors.resize(static_cast<std::int64_t>(count), dim);
  detail::read_payload(in, dataset.vectors.data(), count * row_bytes, "embeddings");
  if (!dataset.vectors.allFinite())
    throw validation_error("embeddings: non-finite vector component in " + path);
  return dataset;
}

/// Header-validated block reader over an embedding file, for accumulating
/// statistics without materializing multi-million-row datasets.
class EmbeddingReader {
 public:
  explicit EmbeddingReader(const std::string& path)
      : in_(detail::open_input(path, "embeddings")), path_(path) {
    detail::read_magic(in_, kEmbeddingMagic, "embeddings");
    detail::read_version(in_, 1, "embeddings");
    const auto dtype = detail::read_pod<std::uint8_t>(in_, "embeddings");
    if (dtype != 0) throw validation_error("embeddings: unsupported dtype");
    const auto flags = detail::read_pod<std::uint8_t>(in_, "embeddings");
    if (flags != 0) throw validation_error("embeddings: reserved flags byte is nonzero");
    dim_ = detail::read_pod<std::uint32_t>(in_, "embeddings");
    if (dim_ == 0) throw validation_error("embeddings: dim must be positive");
    count_ = detail::read_pod<std::uint64_t>(in_, "embeddings");
    char pad[4];
    in_.read(pad, 4);
    if (!in_) throw validation_error("embeddings: truncated header");
    const std::uint64_t row_bytes = static_cast<std::uint64_t>(dim_) * sizeof(float);
    if (count_ >
        (std::numeric_limits<std::uint64_t>::max() - kEmbeddingHeaderBytes) / row_bytes)
      throw validation_error("embeddings: header-declared size overflows");
    detail::expect_file_size(path, kEmbeddingHeaderBytes + count_ * row_bytes,
                             "embeddings");
  }

  std::uint32_t dim() const { return dim_; }
  std::uint64_t count() const { return count_; }
  std::uint64_t remaining() const { return count_ - consumed_; }

  // Up to max_rows further rows; an empty matrix at end of file.
  Mat32 next_block(std::int64_t max_rows) {
    if (max_rows < 1) throw validation_error("embeddings: block size must be positive");
    const std::uint64_t take =
        std::min<std::uint64_t>(remaining(), static_cast<std::uint64_t>(max_rows));
    Mat32 block(static_cast<std::int64_t>(take), dim_);
    if (take > 0) {
      detail::read_payload(in_, block.data(), take * dim_ * sizeof(float), "embeddings");
      if (!block.allFinite())
        throw validation_error("embeddings: non-finite vector component in " + path_);
      consumed_ += take;
    }
    return block;
  }

 private:
  std::ifstream in_;
  std::string path_;
  std::uint32_t dim_ = 0;
  std::uint64_t count_ = 0;
  std::uint64_t consumed_ = 0;
};

/// Streaming counterpart of write_embedding_matrix: the row count is declared
/// up front, blocks are appended, and finish() verifies the declaration was
/// honored.
class EmbeddingWriter {
 public:
  EmbeddingWriter(const std::string& path, std::uint32_t dim, std::uint64_t count)
      : out_(detail::open_output(path, "embeddings")), path_(path), dim_(dim),
        count_(count) {
    if (dim == 0) throw validation_error("embeddings: dim must be positive");
    detail::write_magic(out_, kEmbeddingMagic);
    detail::write_pod(out_, std::uint16_t{1});
    detail::write_pod(out_, std::uint8_t{0});
    detail::write_pod(out_, std::uint8_t{0});
    detail::write_pod(out_, dim);
    detail::write_pod(out_, count);
    const char pad[4] = {};
    out_.write(pad, 4);
  }

  void write_block(const Eigen::Ref<const Mat32>& block) {
    if (block.cols() != static_cast<std::int64_t>(dim_))
      throw validation_error("embeddings: block width does not match dim");
    if (!block.allFinite())
      throw validation_error("embeddings: non-finite vector component");
    if (written_ + block.rows() > count_)
      throw validation_error("embeddings: more rows written than declared");
    // Ref rows may be a non-contiguous view; write row by row.
    for (std::int64_t i = 0; i < block.rows(); ++i)
      out_.write(reinterpret_cast<const char*>(block.row(i).data()),
                 static_cast<std::streamsize>(dim_ * sizeof(float)));
    written_ += block.rows();
  }

  void finish() {
    if (written_ != count_)
      throw validation_error("embeddings: wrote " + std::to_string(written_) +
                             " rows but declared " + std::to_string(count_));
    detail::finish_output(out_, path_, "embeddings");
  }

 private:
  std::ofstream out_;
  std::string path_;
  std::uint32_t dim_;
  std::uint64_t count_;
  std::uint64_t written_ = 0;
};

// ---------------------------------------------------------------------------
// Label files: magic, version u16, count u64, then count u32 class ids.

inline void write_labels(std::span<const std::uint32_t> labels, const std::string& path) {
  std::ofstream out = detail::open_output(path, "labels");
  detail::write_magic(out, kLabelMagic);
  detail::write_pod(out, std::uint16_t{1});
  detail::write_pod(out, static_cast<std::uint64_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()),
            static_cast<std::streamsize>(labels.size() * sizeof(std::uint32_t)));
  detail::finish_output(out, path, "labels");
}

inline std::vector<std::uint32_t> read_labels(const std::string& path) {
  std::ifstream in = detail::open_input(path, "labels");
  detail::read_magic(in, kLabelMagic, "labels");
  detail::read_version(in, 1, "labels");
  const auto count = detail::read_pod<std::uint64_t>(in, "labels");
  if (count > (std::numeric_limits<std::uint64_t>::max() - kLabelHeaderBytes) /
                  sizeof(std::uint32_t))
    throw validation_error("labels: header-declared size overflows");
  detail::expect_file_size(path, kLabelHeaderBytes + count * sizeof(std::uint32_t),
                           "labels");
  std::vector<std::uint32_t> labels(count);
  if (count > 0)
    detail::read_payload(in, labels.data(), count * sizeof(std::uint32_t), "labels");
  for (std::uint32_t y : labels)
    if (y == kNoClass)
      throw validation_error("labels: reserved class id " + std::to_string(kNoClass));
  return labels;
}

// ---------------------------------------------------------------------------
// Class tables: UTF-8 TSV, one "id<TAB>name" line per class. Ids may be
// sparse; missing ids read back as empty names.

inline void write_class_table(const std::vector<std::string>& table,
                              const std::string& path) {
  std::ofstream out = detail::open_output(path, "class table");
  for (std::size_t id = 0; id < table.size(); ++id) {
    if (table[id].find_first_of("\t\n") != std::string::npos)
      throw validation_error("class table: name for id " + std::to_string(id) +
                             " contains a tab or newline");
    out << id << '\t' << table[id] << '\n';
  }
  detail::finish_output(out, path, "class table");
}

inline std::vector<std::string> read_class_table(const std::string& path) {
  const std::string text = detail::read_text(path, "class table");
  std::vector<std::string> table;
  std::vector<bool> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    ++line_no;
    pos = eol + 1;
    if (line.empty()) continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos)
      throw validation_error("class table: line " + std::to_string(line_no) +
                             " has no tab separator");
    std::uint32_t id = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + tab, id);
    if (ec != std::errc{} || ptr != line.data() + tab)
      throw validation_error("class table: line " + std::to_string(line_no) +
                             " has a malformed class id");
    if (id >= (1u << 24))
      throw validation_error("class table: class id " + std::to_string(id) +
                             " is implausibly large");
    if (id >= table.size()) {
      table.resize(id + 1);
      seen.resize(id + 1, false);
    }
    if (seen[id])
      throw validation_error("class table: duplicate class id " + std::to_string(id));
    seen[id] = true;
    table[id] = std::string(line.substr(tab + 1));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Multi-label ground truth: newline-delimited JSON records
// {"index": int, "labels": [int, ...]}.

inline void write_multilabel(const MultiLabelGroundTruth& gt, const std::string& path) {
  gt.validate();
  std::ofstream out = detail::open_output(path, "multilabel");
  for (const auto& [index, labels] : gt.entries) {
    nlohmann::json record;
    record["index"] = index;
    record["labels"] = labels;
    out << record.dump() << '\n';
  }
  detail::finish_output(out, path, "multilabel");
}

inline MultiLabelGroundTruth read_multilabel(const std::string& path) {
  const std::string text = detail::read_text(path, "multilabel");
  MultiLabelGroundTruth gt;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    ++line_no;
    pos = eol + 1;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw validation_error("multilabel: line " + std::to_string(line_no) + ": " +
                             e.what());
    }
    if (!record.is_object() || !record.contains("index") || !record.contains("labels") ||
        !record["index"].is_number_integer() || !record["labels"].is_array())
      throw validation_error("multilabel: line " + std::to_string(line_no) +
                             " is not an {\"index\", \"labels\"} record");
    const std::int64_t index = record["index"].get<std::int64_t>();
    if (index < 0)
      throw validation_error("multilabel: line " + std::to_string(line_no) +
                             " has a negative sample index");
    if (gt.entries.count(index))
      throw validation_error("multilabel: duplicate entry for sample " +
                             std::to_string(index));
    std::vector<std::uint32_t> labels;
    for (const auto& v : record["labels"]) {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
        throw validation_error("multilabel: line " + std::to_string(line_no) +
                               " has a non-integer or negative class id");
      labels.push_back(v.get<std::uint32_t>());
    }
    if (labels.empty())
      throw validation_error("multilabel: line " + std::to_string(line_no) +
                             " has an empty label set");
    gt.entries.emplace(index, std::move(labels));
  }
  gt.validate();
  return gt;
}

// ---------------------------------------------------------------------------
// Class-set files: one decimal class id per line.

inline void write_class_set(std::span<const std::uint32_t> ids, const std::string& path) {
  std::ofstream out = detail::open_output(path, "class set");
  for (std::uint32_t id : ids) out << id << '\n';
  detail::finish_output(out, path, "class set");
}

inline std::vector<std::uint32_t> read_class_set(const std::string& path) {
  const std::string text = detail::read_text(path, "class set");
  std::vector<std::uint32_t> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    const std::string_view line(text.data() + pos, eol - pos);
    ++line_no;
    pos = eol + 1;
    if (line.empty()) continue;
    std::uint32_t id = 0;
    const auto [ptr, ec] = std::from_chars(line.data(), line.data() + line.size(), id);
    if (ec != std::errc{} || ptr != line.data() + line.size())
      throw validation_error("class set: line " + std::to_string(line_no) +
                             " is not a decimal class id");
    ids.push_back(id);
  }
  std::vector<std::uint32_t> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw validation_error("class set: duplicate class id in " + path);
  return ids;
}

// ---------------------------------------------------------------------------
// Transform files: magic, version u16, D u32, L u32, lambda f64, then
// mean (D), whitener (D x D), rotation (D x L), gammas (L), all f64
// row-major. The projection is recomputed as rotation^T * whitener on load.

inline void write_transform(const KooFuTransform& t, const std::string& path) {
  t.validate();
  std::ofstream out = detail::open_output(path, "transform");
  detail::write_magic(out, kTransformMagic);
  detail::write_pod(out, std::uint16_t{1});
  detail::write_pod(out, t.dim);
  detail::write_pod(out, t.out_dim);
  detail::write_pod(out, t.lambda);
  out.write(reinterpret_cast<const char*>(t.mean.data()),
            static_cast<std::streamsize>(t.mean.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(t.whitener.data()),
            static_cast<std::streamsize>(t.whitener.size() * sizeof(double)));
  // rotation is column-major in memory (D x L); serialize row-major.
  const Mat64 rotation_rm = t.rotation;
  out.write(reinterpret_cast<const char*>(rotation_rm.data()),
            static_cast<std::streamsize>(rotation_rm.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(t.gammas.data()),
            static_cast<std::streamsize>(t.gammas.size() * sizeof(double)));
  detail::finish_output(out, path, "transform");
}

inline KooFuTransform read_transform(const std::string& path) {
  std::ifstream in = detail::open_input(path, "transform");
  detail::read_magic(in, kTransformMagic, "transform");
  detail::read_version(in, 1, "transform");
  const auto dim = detail::read_pod<std::uint32_t>(in, "transform");
  const auto out_dim = detail::read_pod<std::uint32_t>(in, "transform");
  const auto lambda = detail::read_pod<double>(in, "transform");
  if (dim == 0) throw validation_error("transform: dim must be positive");
  if (out_dim == 0 || out_dim > dim)
    throw validation_error("transform: shape error, out_dim " +
                           std::to_string(out_dim) + " not in [1, " +
                           std::to_string(dim) + "]");
  if (!(lambda > 0))
    throw validation_error("transform: lambda must be positive");

  const std::uint64_t d = dim, l = out_dim;
  const std::uint64_t header = 4 + 2 + 4 + 4 + 8;
  detail::expect_file_size(path, header + 8 * (d + d * d + d * l + l), "transform");

  KooFuTransform t;
  t.dim = dim;
  t.out_dim = out_dim;
  t.lambda = lambda;
  t.mean.resize(dim);
  t.whitener.resize(dim, dim);
  Mat64 rotation_rm(dim, out_dim);
  t.gammas.resize(out_dim);
  detail::read_payload(in, t.mean.data(), d * 8, "transform");
  detail::read_payload(in, t.whitener.data(), d * d * 8, "transform");
  detail::read_payload(in, rotation_rm.data(), d * l * 8, "transform");
  detail::read_payload(in, t.gammas.data(), l * 8, "transform");
  t.rotation = rotation_rm;
  if (!t.mean.allFinite() || !t.whitener.allFinite() || !t.rotation.allFinite() ||
      !t.gammas.allFinite())
    throw validation_error("transform: non-finite field value in " + path);
  t.recompute_projection();
  return t;
}

// ---------------------------------------------------------------------------
// Stats checkpoints: magic, version u16, D u32, K u32, total u64, then
// counts (K u64), class_sums (K x D f64 row-major), second_moment
// (D x D f64 row-major).

inline void write_stats(const ScatterStats& stats, const std::string& path) {
  stats.validate();
  std::ofstream out = detail::open_output(path, "stats");
  detail::write_magic(out, kStatsMagic);
  detail::write_pod(out, std::uint16_t{1});
  detail::write_pod(out, stats.dim());
  detail::write_pod(out, stats.num_classes());
  detail::write_pod(out, static_cast<std::uint64_t>(stats.total()));
  for (std::int64_t c : stats.counts())
    detail::write_pod(out, static_cast<std::uint64_t>(c));
  out.write(reinterpret_cast<const char*>(stats.class_sums().data()),
            static_cast<std::streamsize>(stats.class_sums().size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(stats.second_moment().data()),
            static_cast<std::streamsize>(stats.second_moment().size() * sizeof(double)));
  detail::finish_output(out, path, "stats");
}

inline ScatterStats read_stats(const std::string& path) {
  std::ifstream in = detail::open_input(path, "stats");
  detail::read_magic(in, kStatsMagic, "stats");
  detail::read_version(in, 1, "stats");
  const auto dim = detail::read_pod<std::uint32_t>(in, "stats");
  const auto num_classes = detail::read_pod<std::uint32_t>(in, "stats");
  const auto total = detail::read_pod<std::uint64_t>(in, "stats");
  if (dim == 0) throw validation_error("stats: dim must be positive");

  const std::uint64_t d = dim, k = num_classes;
  const std::uint64_t header = 4 + 2 + 4 + 4 + 8;
  detail::expect_file_size(path, header + 8 * (k + k * d + d * d), "stats");

  constexpr std::uint64_t int64_max =
      static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max());
  if (total > int64_max) throw validation_error("stats: total overflows");
  std::vector<std::int64_t> counts(num_classes);
  for (std::uint32_t i = 0; i < num_classes; ++i) {
    const auto c = detail::read_pod<std::uint64_t>(in, "stats");
    if (c > int64_max) throw validation_error("stats: class count overflows");
    counts[i] = static_cast<std::int64_t>(c);
  }
  Mat64 class_sums(num_classes, dim);
  Mat64 second_moment(dim, dim);
  detail::read_payload(in, class_sums.data(), k * d * 8, "stats");
  detail::read_payload(in, second_moment.data(), d * d * 8, "stats");
  // from_parts revalidates symmetry, totals, and finiteness.
  return ScatterStats::from_parts(dim, num_classes, static_cast<std::int64_t>(total),
                                  std::move(counts), std::move(class_sums),
                                  std::move(second_moment));
}

// ---------------------------------------------------------------------------
// Prototype banks: embeddings + labels pair plus a JSON sidecar carrying
// {metric, modality, transform_id}, under a shared path prefix.

struct BankFile {
  PrototypeBank bank;
  std::string transform_id;  // "none" when prototypes live in the raw space
};

inline std::string bank_embeddings_path(const std::string& prefix) { return prefix + ".kfeb"; }
inline std::string bank_labels_path(const std::string& prefix) { return prefix + ".kflb"; }
inline std::string bank_sidecar_path(const std::string& prefix) { return prefix + ".json"; }

inline void write_bank(const PrototypeBank& bank, const std::string& prefix,
                       const std::string& transform_id) {
  bank.validate();
  write_embedding_matrix(bank.prototypes, bank.dim, bank_embeddings_path(prefix));
  write_labels(bank.labels, bank_labels_path(prefix));
  nlohmann::json sidecar;
  sidecar["metric"] = to_string(bank.metric);
  sidecar["modality"] = to_string(bank.modality);
  sidecar["transform_id"] = transform_id;
  std::ofstream out = detail::open_output(bank_sidecar_path(prefix), "bank");
  out << sidecar.dump(2) << '\n';
  detail::finish_output(out, bank_sidecar_path(prefix), "bank");
}

inline BankFile read_bank(const std::string& prefix) {
  const EmbeddingDataset protos = read_embeddings(bank_embeddings_path(prefix));
  BankFile file;
  file.bank.dim = protos.dim;
  file.bank.prototypes = protos.vectors;
  file.bank.labels = read_labels(bank_labels_path(prefix));

  const std::string text = detail::read_text(bank_sidecar_path(prefix), "bank");
  nlohmann::json sidecar;
  try {
    sidecar = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw validation_error("bank: malformed sidecar " + bank_sidecar_path(prefix) +
                           ": " + e.what());
  }
  if (!sidecar.is_object() || !sidecar.contains("metric") ||
      !sidecar.contains("modality") || !sidecar.contains("transform_id"))
    throw validation_error("bank: sidecar must carry metric, modality, transform_id");
  file.bank.metric = metric_from_string(sidecar["metric"].get<std::string>());
  file.bank.modality = modality_from_string(sidecar["modality"].get<std::string>());
  file.transform_id = sidecar["transform_id"].get<std::string>();
  file.bank.validate();
  return file;
}

// ---------------------------------------------------------------------------
// FNV-1a content hashes, used as transform/provenance identifiers.

inline std::uint64_t fnv1a64(const void* data, std::size_t bytes,
                             std::uint64_t seed = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t hash = seed;
  for (std::size_t i = 0; i < bytes; ++i) {
    hash ^= p[i];
    hash *= 1099511628211ull;
  }
  return hash;
}

inline std::string file_content_id(const std::string& path) {
  std::ifstream in = detail::open_input(path, "content id");
  char buffer[1 << 16];
  std::uint64_t hash = 14695981039346656037ull;
  while (in) {
    in.read(buffer, sizeof(buffer));
    hash = fnv1a64(buffer, static_cast<std::size_t>(in.gcount()), hash);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return std::string(hex);
}

}  // namespace koofu
