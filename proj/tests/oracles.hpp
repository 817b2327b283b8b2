// Independent reference implementations the test suites compare against:
// plain two-pass double loops with none of the library's algebraic shortcuts
// (no rank updates, no GEMM decompositions, no heaps).
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "koofu/types.hpp"

namespace testutil {

using koofu::Mat32;
using koofu::Mat64;
using koofu::Vec64;

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    const auto base = std::filesystem::temp_directory_path();
    std::random_device rd;
    for (int attempt = 0; attempt < 64; ++attempt) {
      auto candidate = base / (tag + "-" + std::to_string(rd()));
      std::error_code ec;
      if (std::filesystem::create_directory(candidate, ec)) {
        path_ = std::move(candidate);
        return;
      }
    }
    throw std::runtime_error("cannot create scratch directory under " + base.string());
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Mat32 random_matrix(std::mt19937_64& rng, std::int64_t rows, std::int64_t cols,
                           double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Mat32 m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j)
      m(i, j) = static_cast<float>(normal(rng));
  return m;
}

// Round-robin labels so every class is populated when rows >= num_classes.
inline std::vector<std::uint32_t> round_robin_labels(std::int64_t rows,
                                                     std::uint32_t num_classes) {
  std::vector<std::uint32_t> labels(rows);
  for (std::int64_t i = 0; i < rows; ++i)
    labels[i] = static_cast<std::uint32_t>(i % num_classes);
  return labels;
}

inline std::vector<std::uint32_t> random_labels(std::mt19937_64& rng, std::int64_t rows,
                                                std::uint32_t num_classes) {
  std::uniform_int_distribution<std::uint32_t> dist(0, num_classes - 1);
  std::vector<std::uint32_t> labels(rows);
  for (auto& y : labels) y = dist(rng);
  return labels;
}

// ---------------------------------------------------------------------------
// Scatter oracle: two-pass means, then explicit outer-product sums.

struct ScatterOracle {
  Vec64 mean;          // D
  Mat64 class_means;   // K x D, zero rows for empty classes
  std::vector<std::int64_t> counts;
  Mat64 within;        // sum_k sum_{i in k} (x - mu_k)(x - mu_k)^T
  Mat64 between;       // sum_k N_k (mu_k - mu)(mu_k - mu)^T
  Mat64 total;         // sum_i (x - mu)(x - mu)^T
};

inline ScatterOracle scatter_oracle(const Mat32& rows,
                                    const std::vector<std::uint32_t>& labels,
                                    std::uint32_t num_classes) {
  const std::int64_t n = rows.rows();
  const std::int64_t d = rows.cols();
  ScatterOracle o;
  o.mean = Vec64::Zero(d);
  o.class_means = Mat64::Zero(num_classes, d);
  o.counts.assign(num_classes, 0);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < d; ++j) {
      const double x = rows(i, j);
      o.mean[j] += x;
      o.class_means(labels[i], j) += x;
    }
    ++o.counts[labels[i]];
  }
  o.mean /= static_cast<double>(n);
  for (std::uint32_t k = 0; k < num_classes; ++k)
    if (o.counts[k] > 0) o.class_means.row(k) /= static_cast<double>(o.counts[k]);

  o.within = Mat64::Zero(d, d);
  o.total = Mat64::Zero(d, d);
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t a = 0; a < d; ++a) {
      const double dw_a = rows(i, a) - o.class_means(labels[i], a);
      const double dt_a = rows(i, a) - o.mean[a];
      for (std::int64_t b = 0; b < d; ++b) {
        o.within(a, b) += dw_a * (rows(i, b) - o.class_means(labels[i], b));
        o.total(a, b) += dt_a * (rows(i, b) - o.mean[b]);
      }
    }
  }
  o.between = Mat64::Zero(d, d);
  for (std::uint32_t k = 0; k < num_classes; ++k) {
    if (o.counts[k] == 0) continue;
    for (std::int64_t a = 0; a < d; ++a)
      for (std::int64_t b = 0; b < d; ++b)
        o.between(a, b) += static_cast<double>(o.counts[k]) *
                           (o.class_means(k, a) - o.mean[a]) *
                           (o.class_means(k, b) - o.mean[b]);
  }
  return o;
}

inline double rel_error(const Mat64& got, const Mat64& want) {
  const double denom = std::max(want.norm(), 1e-30);
  return (got - want).norm() / denom;
}

// ---------------------------------------------------------------------------
// Search oracle: per-pair scalar distance loops, full sort, no blocking.

struct OracleHit {
  double key;
  std::uint32_t id;
};

inline double oracle_key(const Mat32& a, std::int64_t i, const Mat32& b, std::int64_t j,
                         koofu::Metric metric) {
  if (metric == koofu::Metric::euclidean) {
    double sum = 0;
    for (std::int64_t c = 0; c < a.cols(); ++c) {
      const double diff = static_cast<double>(a(i, c)) - static_cast<double>(b(j, c));
      sum += diff * diff;
    }
    return sum;
  }
  double dot = 0;
  for (std::int64_t c = 0; c < a.cols(); ++c)
    dot += static_cast<double>(a(i, c)) * static_cast<double>(b(j, c));
  return -dot;
}

// Each query's k best (key, tie id) pairs, ascending.
inline std::vector<std::vector<OracleHit>> oracle_search(
    const Mat32& queries, const Mat32& base, const std::vector<std::uint32_t>& tie_ids,
    koofu::Metric metric, std::int64_t k) {
  std::vector<std::vector<OracleHit>> out(queries.rows());
  std::vector<OracleHit> all(base.rows());
  for (std::int64_t i = 0; i < queries.rows(); ++i) {
    for (std::int64_t j = 0; j < base.rows(); ++j)
      all[j] = {oracle_key(queries, i, base, j, metric), tie_ids[j]};
    std::sort(all.begin(), all.end(), [](const OracleHit& a, const OracleHit& b) {
      if (a.key != b.key) return a.key < b.key;
      return a.id < b.id;
    });
    out[i].assign(all.begin(), all.begin() + k);
  }
  return out;
}

struct OracleKnn {
  std::vector<std::uint32_t> voted;               // per query
  std::vector<std::vector<std::uint32_t>> neighbors;  // per query, k row ids
  std::vector<std::vector<std::uint32_t>> label_order; // distinct labels, vote order
};

// Plurality vote over the oracle neighbor lists, with the documented
// tie-breaks: count desc, then summed distance asc (euclidean) or summed
// similarity desc (cosine), then class id asc.
inline OracleKnn oracle_knn(const Mat32& queries, const Mat32& base,
                            const std::vector<std::uint32_t>& labels,
                            koofu::Metric metric, std::int64_t k) {
  std::vector<std::uint32_t> row_ids(base.rows());
  for (std::size_t i = 0; i < row_ids.size(); ++i)
    row_ids[i] = static_cast<std::uint32_t>(i);
  const auto hits = oracle_search(queries, base, row_ids, metric, k);

  OracleKnn o;
  o.voted.resize(queries.rows());
  o.neighbors.resize(queries.rows());
  o.label_order.resize(queries.rows());
  for (std::int64_t i = 0; i < queries.rows(); ++i) {
    struct Vote {
      std::uint32_t label;
      std::int64_t count = 0;
      double score = 0;
    };
    std::vector<Vote> votes;
    for (const OracleHit& h : hits[i]) {
      o.neighbors[i].push_back(h.id);
      const std::uint32_t label = labels[h.id];
      const double score = metric == koofu::Metric::euclidean
                               ? std::sqrt(std::max(h.key, 0.0))
                               : h.key;
      auto it = std::find_if(votes.begin(), votes.end(),
                             [&](const Vote& v) { return v.label == label; });
      if (it == votes.end())
        votes.push_back({label, 1, score});
      else {
        ++it->count;
        it->score += score;
      }
    }
    std::sort(votes.begin(), votes.end(), [](const Vote& a, const Vote& b) {
      if (a.count != b.count) return a.count > b.count;
      if (a.score != b.score) return a.score < b.score;
      return a.label < b.label;
    });
    o.voted[i] = votes.front().label;
    for (const Vote& v : votes) o.label_order[i].push_back(v.label);
  }
  return o;
}

// Per-class mean prototypes by direct summation; optionally normalizing each
// sample first and/or the resulting mean (cosine convention).
inline Mat64 oracle_prototypes(const Mat32& rows, const std::vector<std::uint32_t>& labels,
                               std::uint32_t num_classes, bool normalize_samples,
                               bool normalize_mean) {
  Mat64 sums = Mat64::Zero(num_classes, rows.cols());
  std::vector<std::int64_t> counts(num_classes, 0);
  for (std::int64_t i = 0; i < rows.rows(); ++i) {
    Vec64 row = rows.row(i).cast<double>().transpose();
    if (normalize_samples) {
      const double norm = row.norm();
      if (norm > 0) row /= norm;
    }
    sums.row(labels[i]) += row.transpose();
    ++counts[labels[i]];
  }
  for (std::uint32_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) continue;
    sums.row(c) /= static_cast<double>(counts[c]);
    if (normalize_mean) {
      const double norm = sums.row(c).norm();
      if (norm > 0) sums.row(c) /= norm;
    }
  }
  return sums;
}

}  // namespace testutil
