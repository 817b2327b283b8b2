#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <string>

#include "koofu/io.hpp"
#include "koofu/transform.hpp"
#include "oracles.hpp"

using namespace koofu;

namespace {

void patch_file(const std::string& path, std::streamoff offset, const void* bytes,
                std::size_t size) {
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  ASSERT_TRUE(f.is_open());
  f.seekp(offset);
  f.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(size));
  ASSERT_TRUE(f.good());
}

void append_bytes(const std::string& path, std::size_t count) {
  std::ofstream f(path, std::ios::binary | std::ios::app);
  const std::string junk(count, '\0');
  f.write(junk.data(), static_cast<std::streamsize>(count));
}

void truncate_file(const std::string& path, std::uint64_t by) {
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - by);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

EmbeddingDataset sample_dataset(std::mt19937_64& rng, std::int64_t n, std::uint32_t d,
                                std::uint32_t k) {
  EmbeddingDataset ds;
  ds.dim = d;
  ds.vectors = testutil::random_matrix(rng, n, d);
  ds.labels = testutil::random_labels(rng, n, k);
  return ds;
}

KooFuTransform sample_transform(std::mt19937_64& rng, std::uint32_t d, std::uint32_t k,
                                std::optional<std::uint32_t> l = std::nullopt) {
  ScatterStats stats(d, k);
  const Mat32 rows = testutil::random_matrix(rng, 40 * k, d);
  stats.accumulate_rows(rows, testutil::round_robin_labels(rows.rows(), k));
  return fit_koofu(stats, 1e-2 * stats.within_scatter().trace() / d, l);
}

}  // namespace

TEST(EmbeddingFile, RoundTripsBitForBit) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(3);
  const EmbeddingDataset ds = sample_dataset(rng, 37, 11, 4);
  const std::string path = dir.file("a.kfeb");
  write_embedding_matrix(ds.vectors, ds.dim, path);
  EXPECT_EQ(std::filesystem::file_size(path), kEmbeddingHeaderBytes + 37 * 11 * 4);
  const EmbeddingDataset back = read_embeddings(path);
  EXPECT_EQ(back.dim, 11u);
  EXPECT_EQ(back.count(), 37);
  EXPECT_TRUE((back.vectors.array() == ds.vectors.array()).all());
}

TEST(EmbeddingFile, RejectsEveryHeaderViolation) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(5);
  const EmbeddingDataset ds = sample_dataset(rng, 8, 4, 2);
  const std::string path = dir.file("bad.kfeb");

  const auto fresh = [&] { write_embedding_matrix(ds.vectors, ds.dim, path); };

  fresh();
  patch_file(path, 0, "XXXX", 4);  // magic
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  const std::uint16_t bad_version = 2;
  patch_file(path, 4, &bad_version, 2);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  const std::uint8_t bad_dtype = 1;
  patch_file(path, 6, &bad_dtype, 1);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  const std::uint8_t bad_flags = 1;
  patch_file(path, 7, &bad_flags, 1);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  const std::uint32_t zero_dim = 0;
  patch_file(path, 8, &zero_dim, 4);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();  // count that disagrees with the payload size
  const std::uint64_t wrong_count = 9;
  patch_file(path, 12, &wrong_count, 8);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();  // overflow guard on count * row bytes
  const std::uint64_t huge = std::numeric_limits<std::uint64_t>::max() / 2;
  patch_file(path, 12, &huge, 8);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  truncate_file(path, 3);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  append_bytes(path, 1);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  fresh();
  const float nan_value = std::numeric_limits<float>::quiet_NaN();
  patch_file(path, static_cast<std::streamoff>(kEmbeddingHeaderBytes) + 5 * 4,
             &nan_value, 4);
  EXPECT_THROW((void)read_embeddings(path), validation_error);

  EXPECT_THROW((void)read_embeddings(dir.file("missing.kfeb")), io_error);
}

TEST(EmbeddingFile, WriteRejectsNonFiniteAndShapeMismatch) {
  testutil::TempDir dir("kfio");
  Mat32 m = Mat32::Ones(3, 4);
  EXPECT_THROW(write_embedding_matrix(m, 5, dir.file("x.kfeb")), validation_error);
  m(1, 2) = std::numeric_limits<float>::infinity();
  EXPECT_THROW(write_embedding_matrix(m, 4, dir.file("x.kfeb")), validation_error);
}

TEST(EmbeddingReader, StreamsBlocksThatConcatenateToTheWhole) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(7);
  const EmbeddingDataset ds = sample_dataset(rng, 53, 6, 3);
  const std::string path = dir.file("stream.kfeb");
  write_embedding_matrix(ds.vectors, ds.dim, path);

  EmbeddingReader reader(path);
  EXPECT_EQ(reader.dim(), 6u);
  EXPECT_EQ(reader.count(), 53u);
  Mat32 gathered(53, 6);
  std::int64_t at = 0;
  while (true) {
    const Mat32 block = reader.next_block(9);
    if (block.rows() == 0) break;
    gathered.middleRows(at, block.rows()) = block;
    at += block.rows();
  }
  EXPECT_EQ(at, 53);
  EXPECT_EQ(reader.remaining(), 0u);
  EXPECT_TRUE((gathered.array() == ds.vectors.array()).all());
  EXPECT_EQ(reader.next_block(9).rows(), 0);
  EXPECT_THROW((void)reader.next_block(0), validation_error);
}

TEST(EmbeddingWriter, HonorsTheDeclaredCount) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(11);
  const Mat32 rows = testutil::random_matrix(rng, 20, 5);
  const std::string path = dir.file("w.kfeb");
  {
    EmbeddingWriter writer(path, 5, 20);
    writer.write_block(rows.topRows(12));
    writer.write_block(rows.bottomRows(8));
    writer.finish();
  }
  const EmbeddingDataset back = read_embeddings(path);
  EXPECT_TRUE((back.vectors.array() == rows.array()).all());

  EmbeddingWriter undersold(dir.file("u.kfeb"), 5, 21);
  undersold.write_block(rows);
  EXPECT_THROW(undersold.finish(), validation_error);

  EmbeddingWriter oversold(dir.file("o.kfeb"), 5, 19);
  EXPECT_THROW(oversold.write_block(rows), validation_error);

  EmbeddingWriter narrow(dir.file("n.kfeb"), 4, 20);
  EXPECT_THROW(narrow.write_block(rows), validation_error);
}

TEST(LabelFile, RoundTripsAndRejectsReservedId) {
  testutil::TempDir dir("kfio");
  const std::vector<std::uint32_t> labels{0, 5, 2, 2, 7, 0};
  const std::string path = dir.file("y.kflb");
  write_labels(labels, path);
  EXPECT_EQ(std::filesystem::file_size(path), kLabelHeaderBytes + labels.size() * 4);
  EXPECT_EQ(read_labels(path), labels);

  const std::uint32_t reserved = kNoClass;
  patch_file(path, static_cast<std::streamoff>(kLabelHeaderBytes) + 2 * 4, &reserved, 4);
  EXPECT_THROW((void)read_labels(path), validation_error);

  write_labels(labels, path);
  truncate_file(path, 4);
  EXPECT_THROW((void)read_labels(path), validation_error);

  write_labels(std::vector<std::uint32_t>{}, path);
  EXPECT_TRUE(read_labels(path).empty());
}

TEST(ClassTable, RoundTripsSparseTables) {
  testutil::TempDir dir("kfio");
  const std::vector<std::string> table{"cat", "", "dog with spaces"};
  const std::string path = dir.file("t.tsv");
  write_class_table(table, path);
  EXPECT_EQ(read_class_table(path), table);

  EXPECT_THROW(write_class_table({"a\tb"}, path), validation_error);
  EXPECT_THROW(write_class_table({"a\nb"}, path), validation_error);

  std::ofstream(path) << "0\tcat\n0\tdog\n";
  EXPECT_THROW((void)read_class_table(path), validation_error);
  std::ofstream(path) << "notanumber\tcat\n";
  EXPECT_THROW((void)read_class_table(path), validation_error);
  std::ofstream(path) << "0 cat\n";
  EXPECT_THROW((void)read_class_table(path), validation_error);
  std::ofstream(path) << "99999999\tcat\n";
  EXPECT_THROW((void)read_class_table(path), validation_error);
  // out-of-order and sparse ids are fine
  std::ofstream(path) << "3\tmouse\n1\tcat\n";
  const auto sparse = read_class_table(path);
  ASSERT_EQ(sparse.size(), 4u);
  EXPECT_EQ(sparse[1], "cat");
  EXPECT_EQ(sparse[3], "mouse");
  EXPECT_EQ(sparse[0], "");
}

TEST(Multilabel, RoundTripsAndEnforcesRecordShape) {
  testutil::TempDir dir("kfio");
  MultiLabelGroundTruth gt;
  gt.entries[0] = {3, 1};
  gt.entries[7] = {2};
  const std::string path = dir.file("gt.ndjson");
  write_multilabel(gt, path);
  const MultiLabelGroundTruth back = read_multilabel(path);
  EXPECT_EQ(back.entries, gt.entries);

  std::ofstream(path) << R"({"index": 0, "labels": [1]})" << "\n"
                      << R"({"index": 0, "labels": [2]})" << "\n";
  EXPECT_THROW((void)read_multilabel(path), validation_error);
  std::ofstream(path) << R"({"index": -1, "labels": [1]})" << "\n";
  EXPECT_THROW((void)read_multilabel(path), validation_error);
  std::ofstream(path) << R"({"index": 0, "labels": []})" << "\n";
  EXPECT_THROW((void)read_multilabel(path), validation_error);
  std::ofstream(path) << R"({"index": 0})" << "\n";
  EXPECT_THROW((void)read_multilabel(path), validation_error);
  std::ofstream(path) << R"({"index": 0, "labels": [-2]})" << "\n";
  EXPECT_THROW((void)read_multilabel(path), validation_error);
  std::ofstream(path) << "not json\n";
  EXPECT_THROW((void)read_multilabel(path), validation_error);
}

TEST(ClassSet, RoundTripsAndRejectsDuplicates) {
  testutil::TempDir dir("kfio");
  const std::vector<std::uint32_t> ids{9, 2, 4};
  const std::string path = dir.file("set.txt");
  write_class_set(ids, path);
  EXPECT_EQ(read_class_set(path), ids);  // order preserved

  std::ofstream(path) << "1\n1\n";
  EXPECT_THROW((void)read_class_set(path), validation_error);
  std::ofstream(path) << "1\nx\n";
  EXPECT_THROW((void)read_class_set(path), validation_error);
  std::ofstream(path) << "";
  EXPECT_TRUE(read_class_set(path).empty());
}

TEST(TransformFile, RoundTripsExactly) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(13);
  const KooFuTransform t = sample_transform(rng, 9, 4, 6u);
  const std::string path = dir.file("t.kftx");
  write_transform(t, path);
  const KooFuTransform back = read_transform(path);
  EXPECT_EQ(back.dim, t.dim);
  EXPECT_EQ(back.out_dim, t.out_dim);
  EXPECT_EQ(back.lambda, t.lambda);
  EXPECT_TRUE((back.mean.array() == t.mean.array()).all());
  EXPECT_TRUE((back.whitener.array() == t.whitener.array()).all());
  EXPECT_TRUE((back.rotation.array() == t.rotation.array()).all());
  EXPECT_TRUE((back.gammas.array() == t.gammas.array()).all());
  EXPECT_NO_THROW(back.validate());
  // projection is recomputed on load from the same f64 fields
  EXPECT_TRUE((back.projection.array() == t.projection.array()).all());
}

TEST(TransformFile, RejectsHeaderAndSizeViolations) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(17);
  const KooFuTransform t = sample_transform(rng, 6, 3);
  const std::string path = dir.file("t.kftx");
  const auto fresh = [&] { write_transform(t, path); };

  fresh();
  patch_file(path, 0, "NOPE", 4);
  EXPECT_THROW((void)read_transform(path), validation_error);

  fresh();  // lambda <= 0
  const double bad_lambda = 0.0;
  patch_file(path, 14, &bad_lambda, 8);
  EXPECT_THROW((void)read_transform(path), validation_error);

  fresh();  // out_dim > dim is a shape error
  const std::uint32_t bad_l = 7;
  patch_file(path, 10, &bad_l, 4);
  EXPECT_THROW((void)read_transform(path), validation_error);

  fresh();
  truncate_file(path, 8);
  EXPECT_THROW((void)read_transform(path), validation_error);

  fresh();
  const double nan_value = std::numeric_limits<double>::quiet_NaN();
  patch_file(path, 22, &nan_value, 8);  // first mean component
  EXPECT_THROW((void)read_transform(path), validation_error);
}

TEST(StatsFile, RoundTripsExactlyAndRevalidates) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(19);
  ScatterStats stats(5, 3);
  const Mat32 rows = testutil::random_matrix(rng, 44, 5);
  stats.accumulate_rows(rows, testutil::random_labels(rng, 44, 3));
  const std::string path = dir.file("s.kfst");
  write_stats(stats, path);
  const ScatterStats back = read_stats(path);
  EXPECT_EQ(back.dim(), 5u);
  EXPECT_EQ(back.num_classes(), 3u);
  EXPECT_EQ(back.total(), 44);
  EXPECT_EQ(back.counts(), stats.counts());
  EXPECT_TRUE((back.class_sums().array() == stats.class_sums().array()).all());
  EXPECT_TRUE((back.second_moment().array() == stats.second_moment().array()).all());

  // tampered total fails from_parts revalidation
  const std::uint64_t bad_total = 45;
  patch_file(path, 14, &bad_total, 8);
  EXPECT_THROW((void)read_stats(path), validation_error);

  write_stats(stats, path);
  truncate_file(path, 1);
  EXPECT_THROW((void)read_stats(path), validation_error);

  write_stats(stats, path);
  const std::uint64_t negative_count = 1ull << 63;
  patch_file(path, 22, &negative_count, 8);
  EXPECT_THROW((void)read_stats(path), validation_error);
}

TEST(BankFile, RoundTripsWithSidecar) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(23);
  PrototypeBank bank;
  bank.dim = 7;
  bank.prototypes = testutil::random_matrix(rng, 4, 7);
  for (std::int64_t i = 0; i < 4; ++i) {
    const Vec64 row = bank.prototypes.row(i).cast<double>().transpose();
    bank.prototypes.row(i) = (row / row.norm()).cast<float>().transpose();
  }
  bank.labels = {2, 9, 4, 11};
  bank.metric = Metric::cosine;
  bank.modality = Modality::textual;

  const std::string prefix = dir.file("bank");
  write_bank(bank, prefix, "deadbeef00000000");
  const BankFile back = read_bank(prefix);
  EXPECT_EQ(back.transform_id, "deadbeef00000000");
  EXPECT_EQ(back.bank.labels, bank.labels);
  EXPECT_EQ(back.bank.metric, Metric::cosine);
  EXPECT_EQ(back.bank.modality, Modality::textual);
  EXPECT_TRUE((back.bank.prototypes.array() == bank.prototypes.array()).all());

  std::ofstream(bank_sidecar_path(prefix)) << R"({"metric": "what"})";
  EXPECT_THROW((void)read_bank(prefix), validation_error);
  std::ofstream(bank_sidecar_path(prefix))
      << R"({"metric": "cosine", "modality": "visual"})";
  EXPECT_THROW((void)read_bank(prefix), validation_error);
  std::filesystem::remove(bank_sidecar_path(prefix));
  EXPECT_THROW((void)read_bank(prefix), io_error);
}

TEST(ContentId, HashesFileContentStably) {
  testutil::TempDir dir("kfio");
  const std::string a = dir.file("a.bin");
  const std::string b = dir.file("b.bin");
  std::ofstream(a, std::ios::binary) << "hello";
  std::ofstream(b, std::ios::binary) << "hello";
  EXPECT_EQ(file_content_id(a), file_content_id(b));
  EXPECT_EQ(file_content_id(a).size(), 16u);
  std::ofstream(b, std::ios::binary) << "hellp";
  EXPECT_NE(file_content_id(a), file_content_id(b));
  EXPECT_THROW((void)file_content_id(dir.file("nope.bin")), io_error);
}

TEST(Idempotence, RewritingProducesIdenticalBytes) {
  testutil::TempDir dir("kfio");
  std::mt19937_64 rng(29);
  const EmbeddingDataset ds = sample_dataset(rng, 12, 5, 3);
  write_embedding_matrix(ds.vectors, ds.dim, dir.file("1.kfeb"));
  write_embedding_matrix(ds.vectors, ds.dim, dir.file("2.kfeb"));
  EXPECT_EQ(slurp(dir.file("1.kfeb")), slurp(dir.file("2.kfeb")));

  const KooFuTransform t = sample_transform(rng, 5, 3);
  write_transform(t, dir.file("1.kftx"));
  write_transform(t, dir.file("2.kftx"));
  EXPECT_EQ(slurp(dir.file("1.kftx")), slurp(dir.file("2.kftx")));
}
