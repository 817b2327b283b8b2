#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "koofu/dataset.hpp"
#include "koofu/errors.hpp"
#include "koofu/parallel.hpp"
#include "koofu/transform.hpp"
#include "koofu/types.hpp"

namespace koofu {

/// K class prototypes (visual means or aggregated textual embeddings) living
/// in a declared space and metric. In cosine mode every prototype row is unit
/// length; labels are unique class ids, one per row.
struct PrototypeBank {
  std::uint32_t dim = 0;
  Mat32 prototypes;  // K x dim
  std::vector<std::uint32_t> labels;
  Metric metric = Metric::cosine;
  Modality modality = Modality::visual;

  std::int64_t count() const { return prototypes.rows(); }

  void validate() const {
    if (dim == 0) throw validation_error("bank: dim must be positive");
    if (prototypes.cols() != static_cast<std::int64_t>(dim))
      throw validation_error("bank: prototype width does not match dim");
    if (static_cast<std::int64_t>(labels.size()) != count())
      throw validation_error("bank: label count does not match prototype rows");
    if (!prototypes.allFinite())
      throw validation_error("bank: non-finite prototype component");
    std::vector<std::uint32_t> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw validation_error("bank: duplicate class id");
    if (metric == Metric::cosine) {
      for (std::int64_t i = 0; i < count(); ++i) {
        const double norm = prototypes.row(i).cast<double>().norm();
        if (std::abs(norm - 1.0) > 1e-6)
          throw validation_error("bank: prototype for class " +
                                 std::to_string(labels[i]) +
                                 " not unit length in cosine mode");
      }
    }
  }
};

/// The full training set as a flat search structure for exact k-NN. In cosine
/// mode rows are unit-normalized at build time.
struct NeighborIndex {
  std::uint32_t dim = 0;
  Mat32 vectors;  // N x dim
  std::vector<std::uint32_t> labels;
  Metric metric = Metric::cosine;

  std::int64_t count() const { return vectors.rows(); }

  void validate() const {
    if (dim == 0) throw validation_error("index: dim must be positive");
    if (vectors.cols() != static_cast<std::int64_t>(dim))
      throw validation_error("index: vector width does not match dim");
    if (static_cast<std::int64_t>(labels.size()) != count())
      throw validation_error("index: label count does not match vector rows");
    if (!vectors.allFinite())
      throw validation_error("index: non-finite vector component");
    if (metric == Metric::cosine) {
      for (std::int64_t i = 0; i < count(); ++i) {
        const double norm = vectors.row(i).cast<double>().norm();
        if (std::abs(norm - 1.0) > 1e-6)
          throw validation_error("index: row " + std::to_string(i) +
                                 " not unit length in cosine mode");
      }
    }
  }
};

namespace detail {

// Unit-normalizes each row in f64 and emits f32. Zero rows are a hard error
// here; callers with a pass-through convention handle them before calling.
inline Mat32 normalized_rows(const Eigen::Ref<const Mat32>& m, const char* what) {
  Mat32 out(m.rows(), m.cols());
  for (std::int64_t i = 0; i < m.rows(); ++i) {
    const Vec64 row = m.row(i).cast<double>().transpose();
    const double norm = row.norm();
    if (norm == 0)
      throw validation_error(std::string(what) + ": row " + std::to_string(i) +
                             " is a zero vector and cannot be unit-normalized");
    out.row(i) = (row / norm).cast<float>().transpose();
  }
  return out;
}

}  // namespace detail

inline NeighborIndex make_index(const Eigen::Ref<const Mat32>& vectors,
                                const std::vector<std::uint32_t>& labels,
                                Metric metric) {
  if (vectors.cols() <= 0) throw validation_error("index: dim must be positive");
  if (static_cast<std::int64_t>(labels.size()) != vectors.rows())
    throw validation_error("index: label count does not match vector rows");
  NeighborIndex index;
  index.dim = static_cast<std::uint32_t>(vectors.cols());
  index.metric = metric;
  index.labels = labels;
  if (metric == Metric::cosine)
    index.vectors = detail::normalized_rows(vectors, "index");
  else
    index.vectors = vectors;
  return index;
}

/// Prototype aggregation order. Mean-then-normalize is the default; the
/// alternative normalizes each sample before averaging, for replication
/// studies of the other convention.
enum class MeanMode { mean_then_normalize, normalize_then_mean };

inline std::string to_string(MeanMode m) {
  return m == MeanMode::mean_then_normalize ? "mean_then_normalize"
                                            : "normalize_then_mean";
}

inline MeanMode mean_mode_from_string(const std::string& s) {
  if (s == "mean_then_normalize") return MeanMode::mean_then_normalize;
  if (s == "normalize_then_mean") return MeanMode::normalize_then_mean;
  throw validation_error("unknown mean mode '" + s +
                         "' (expected mean_then_normalize|normalize_then_mean)");
}

struct PrototypeBuildResult {
  PrototypeBank bank;
  // Classes whose aggregate came out exactly zero; excluded from the bank
  // with a warning rather than kept as zero rows.
  std::vector<std::uint32_t> degenerate_classes;
};

/// Per populated class, the mean of the (optionally transformed) embeddings,
/// unit-normalized in cosine mode. Zero-mean prototypes are excluded and
/// reported in degenerate_classes.
inline PrototypeBuildResult build_prototypes(const EmbeddingDataset& dataset,
                                             const KooFuTransform* transform,
                                             Metric metric,
                                             MeanMode mode = MeanMode::mean_then_normalize) {
  dataset.validate();
  if (dataset.labels.empty())
    throw validation_error("prototypes: dataset has no labels");
  if (dataset.count() == 0)
    throw validation_error("prototypes: dataset is empty");

  Mat32 space = dataset.vectors;
  if (transform != nullptr) {
    space = apply(*transform, dataset.vectors,
                  /*renormalize=*/mode == MeanMode::normalize_then_mean)
                .projected;
  } else if (mode == MeanMode::normalize_then_mean) {
    // Match apply()'s convention: zero rows pass through unnormalized.
    space.resize(dataset.vectors.rows(), dataset.vectors.cols());
    for (std::int64_t i = 0; i < dataset.vectors.rows(); ++i) {
      const Vec64 row = dataset.vectors.row(i).cast<double>().transpose();
      const double norm = row.norm();
      if (norm > 0)
        space.row(i) = (row / norm).cast<float>().transpose();
      else
        space.row(i) = dataset.vectors.row(i);
    }
  }

  const std::uint32_t num_classes = dataset.num_classes();
  const std::int64_t d = space.cols();
  Mat64 sums = Mat64::Zero(num_classes, d);
  std::vector<std::int64_t> counts(num_classes, 0);
  for (std::int64_t i = 0; i < space.rows(); ++i) {
    const std::uint32_t y = dataset.labels[i];
    sums.row(y) += space.row(i).cast<double>();
    ++counts[y];
  }

  PrototypeBuildResult res;
  res.bank.dim = static_cast<std::uint32_t>(d);
  res.bank.metric = metric;
  res.bank.modality = Modality::visual;
  std::vector<Vec64> rows;
  for (std::uint32_t k = 0; k < num_classes; ++k) {
    if (counts[k] == 0) continue;
    Vec64 mean = sums.row(k).transpose() / static_cast<double>(counts[k]);
    const double norm = mean.norm();
    if (norm == 0) {
      res.degenerate_classes.push_back(k);
      continue;
    }
    if (metric == Metric::cosine) mean /= norm;
    rows.push_back(std::move(mean));
    res.bank.labels.push_back(k);
  }
  res.bank.prototypes.resize(static_cast<std::int64_t>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    res.bank.prototypes.row(static_cast<std::int64_t>(i)) =
        rows[i].cast<float>().transpose();
  if (res.bank.count() == 0)
    throw validation_error("prototypes: every class came out degenerate");
  return res;
}

/// Textual prototypes: per class, the renormalized mean of the
/// unit-normalized prompt embeddings. class_ids pairs each matrix with its
/// class id; the two-argument overload numbers classes 0..K-1.
inline PrototypeBank aggregate_text_prototypes(const std::vector<Mat32>& per_class,
                                               const std::vector<std::uint32_t>& class_ids) {
  if (per_class.empty())
    throw validation_error("text prototypes: no classes supplied");
  if (class_ids.size() != per_class.size())
    throw validation_error("text prototypes: class id count does not match matrices");
  const std::int64_t d = per_class.front().cols();
  if (d <= 0) throw validation_error("text prototypes: dim must be positive");

  PrototypeBank bank;
  bank.dim = static_cast<std::uint32_t>(d);
  bank.metric = Metric::cosine;
  bank.modality = Modality::textual;
  bank.labels = class_ids;
  bank.prototypes.resize(static_cast<std::int64_t>(per_class.size()), d);
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const Mat32& m = per_class[c];
    if (m.cols() != d)
      throw validation_error("text prototypes: class " + std::to_string(class_ids[c]) +
                             " dim " + std::to_string(m.cols()) +
                             " does not match " + std::to_string(d));
    if (m.rows() == 0)
      throw validation_error("text prototypes: class " + std::to_string(class_ids[c]) +
                             " supplies no embeddings");
    Vec64 mean = Vec64::Zero(d);
    for (std::int64_t i = 0; i < m.rows(); ++i) {
      const Vec64 row = m.row(i).cast<double>().transpose();
      const double norm = row.norm();
      if (norm == 0)
        throw validation_error("text prototypes: zero embedding for class " +
                               std::to_string(class_ids[c]));
      mean += row / norm;
    }
    mean /= static_cast<double>(m.rows());
    const double norm = mean.norm();
    if (norm == 0)
      throw validation_error("text prototypes: degenerate zero mean for class " +
                             std::to_string(class_ids[c]));
    bank.prototypes.row(static_cast<std::int64_t>(c)) =
        (mean / norm).cast<float>().transpose();
  }
  bank.validate();
  return bank;
}

inline PrototypeBank aggregate_text_prototypes(const std::vector<Mat32>& per_class) {
  std::vector<std::uint32_t> ids(per_class.size());
  std::iota(ids.begin(), ids.end(), 0u);
  return aggregate_text_prototypes(per_class, ids);
}

namespace detail {

// One search hit: comparison key (lower is better under both metrics) and the
// caller-chosen tie id, which doubles as the payload. Hits order by
// (key, id) ascending, so equal keys resolve by ascending id.
struct SearchHit {
  double key = 0;
  std::uint32_t id = 0;
};

inline bool hit_less(const SearchHit& a, const SearchHit& b) {
  if (a.key != b.key) return a.key < b.key;
  return a.id < b.id;
}

}  // namespace detail

/// GEMM tile sizes for the exact search. Pure memory knobs: results are
/// independent of both because every candidate is compared with its exact
/// f64 key.
struct SearchOptions {
  std::int64_t query_tile = 1024;
  std::int64_t base_panel = 4096;
};

/// Exact top-k scan of base for each query row: scores every pair through
/// blocked f64 matrix products, keeps a bounded worst-out heap per query, and
/// returns each query's k best hits sorted by (key, tie id) ascending. Keys
/// are squared euclidean distance or negated cosine dot, both computed from
/// the f32 inputs widened to f64.
inline std::vector<detail::SearchHit> exact_search(
    const Eigen::Ref<const Mat32>& queries, const Eigen::Ref<const Mat32>& base,
    std::span<const std::uint32_t> tie_ids, Metric metric, std::int64_t k,
    const SearchOptions& opts = {}) {
  const std::int64_t n = queries.rows();
  const std::int64_t m = base.rows();
  const std::int64_t d = base.cols();
  if (queries.cols() != d)
    throw validation_error("search: query dim " + std::to_string(queries.cols()) +
                           " does not match base dim " + std::to_string(d));
  if (k < 1 || k > m)
    throw validation_error("search: k " + std::to_string(k) +
                           " must satisfy 1 <= k <= " + std::to_string(m));
  if (static_cast<std::int64_t>(tie_ids.size()) != m)
    throw validation_error("search: tie id count does not match base rows");
  if (opts.query_tile < 1 || opts.base_panel < 1)
    throw validation_error("search: tile sizes must be positive");

  Vec64 base_sq;
  if (metric == Metric::euclidean) {
    base_sq.resize(m);
    parallel_ranges(m, [&](std::int64_t begin, std::int64_t end) {
      for (std::int64_t i = begin; i < end; ++i)
        base_sq[i] = base.row(i).cast<double>().squaredNorm();
    });
  }

  std::vector<detail::SearchHit> out(static_cast<std::size_t>(n) * k);
  parallel_ranges(n, [&](std::int64_t begin, std::int64_t end) {
    Mat64 qd, pd, g;
    std::vector<detail::SearchHit> heaps;
    std::vector<std::int64_t> heap_len;
    for (std::int64_t q0 = begin; q0 < end; q0 += opts.query_tile) {
      const std::int64_t qn = std::min(opts.query_tile, end - q0);
      qd = queries.middleRows(q0, qn).cast<double>();
      Vec64 query_sq;
      if (metric == Metric::euclidean) query_sq = qd.rowwise().squaredNorm();
      heaps.assign(static_cast<std::size_t>(qn) * k, {});
      heap_len.assign(qn, 0);
      for (std::int64_t p0 = 0; p0 < m; p0 += opts.base_panel) {
        const std::int64_t pn = std::min(opts.base_panel, m - p0);
        pd = base.middleRows(p0, pn).cast<double>();
        g.resize(qn, pn);
        g.noalias() = qd * pd.transpose();
        for (std::int64_t i = 0; i < qn; ++i) {
          detail::SearchHit* heap = heaps.data() + i * k;
          std::int64_t& len = heap_len[i];
          for (std::int64_t j = 0; j < pn; ++j) {
            const double key = metric == Metric::euclidean
                                   ? query_sq[i] + base_sq[p0 + j] - 2.0 * g(i, j)
                                   : -g(i, j);
            const detail::SearchHit cand{key, tie_ids[p0 + j]};
            if (len < k) {
              heap[len++] = cand;
              std::push_heap(heap, heap + len, detail::hit_less);
            } else if (detail::hit_less(cand, heap[0])) {
              std::pop_heap(heap, heap + k, detail::hit_less);
              heap[k - 1] = cand;
              std::push_heap(heap, heap + k, detail::hit_less);
            }
          }
        }
      }
      for (std::int64_t i = 0; i < qn; ++i) {
        detail::SearchHit* heap = heaps.data() + i * k;
        std::sort(heap, heap + k, detail::hit_less);
        std::copy(heap, heap + k, out.data() + (q0 + i) * k);
      }
    }
  });
  return out;
}

/// Class ids ranked per query: ascending distance (euclidean) or descending
/// cosine similarity, equal scores resolved by ascending class id.
inline RankedIds nvp_classify(const Eigen::Ref<const Mat32>& queries,
                              const PrototypeBank& bank, std::int64_t top_k,
                              const SearchOptions& opts = {}) {
  if (queries.cols() != static_cast<std::int64_t>(bank.dim))
    throw validation_error("nvp: query dim " + std::to_string(queries.cols()) +
                           " does not match bank dim " + std::to_string(bank.dim));
  if (top_k < 1 || top_k > bank.count())
    throw validation_error("nvp: top_k " + std::to_string(top_k) +
                           " must satisfy 1 <= top_k <= " + std::to_string(bank.count()));
  const auto hits = exact_search(queries, bank.prototypes, bank.labels,
                                 bank.metric, top_k, opts);
  RankedIds ranked(queries.rows(), top_k);
  for (std::int64_t i = 0; i < queries.rows(); ++i)
    for (std::int64_t j = 0; j < top_k; ++j) ranked(i, j) = hits[i * top_k + j].id;
  return ranked;
}

struct KnnResult {
  std::vector<std::uint32_t> labels;  // one voted class id per query
  RankedIds neighbors;                // N x k sample indices, best first
  // Distinct neighbor labels in vote order (count, then the vote tie-breaks);
  // rows shorter than k are padded with kNoClass. Column 0 equals labels.
  RankedIds label_ranking;
};

/// Exact k-nearest search plus plurality vote. Neighbor ties resolve by
/// ascending sample index; vote ties by smallest summed distance (euclidean)
/// or largest summed similarity (cosine), then ascending class id.
inline KnnResult knn_classify(const Eigen::Ref<const Mat32>& queries,
                              const NeighborIndex& index, std::int64_t k,
                              const SearchOptions& opts = {}) {
  if (queries.cols() != static_cast<std::int64_t>(index.dim))
    throw validation_error("knn: query dim " + std::to_string(queries.cols()) +
                           " does not match index dim " + std::to_string(index.dim));
  if (k < 1 || k > index.count())
    throw validation_error("knn: k " + std::to_string(k) +
                           " must satisfy 1 <= k <= " + std::to_string(index.count()));
  std::vector<std::uint32_t> row_ids(index.count());
  std::iota(row_ids.begin(), row_ids.end(), 0u);
  const auto hits = exact_search(queries, index.vectors, row_ids, index.metric, k, opts);

  KnnResult res;
  res.labels.resize(queries.rows());
  res.neighbors.resize(queries.rows(), k);
  res.label_ranking.resize(queries.rows(), k);
  struct Vote {
    std::uint32_t label;
    std::int64_t count;
    double score;  // summed distance (euclidean) or summed negated similarity
  };
  std::vector<Vote> votes;
  for (std::int64_t i = 0; i < queries.rows(); ++i) {
    votes.clear();
    for (std::int64_t j = 0; j < k; ++j) {
      const detail::SearchHit& hit = hits[i * k + j];
      res.neighbors(i, j) = hit.id;
      const std::uint32_t label = index.labels[hit.id];
      // Vote score: the quantity whose per-label sum breaks count ties,
      // oriented so smaller is better under both metrics.
      const double score = index.metric == Metric::euclidean
                               ? std::sqrt(std::max(hit.key, 0.0))
                               : hit.key;
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
    res.labels[i] = votes.front().label;
    for (std::int64_t j = 0; j < k; ++j)
      res.label_ranking(i, j) = j < static_cast<std::int64_t>(votes.size())
                                    ? votes[j].label
                                    : kNoClass;
  }
  return res;
}

}  // namespace koofu
