#pragma once

#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "koofu/dataset.hpp"
#include "koofu/errors.hpp"
#include "koofu/types.hpp"

namespace koofu {

/// Single-pass, mergeable sufficient statistics for scatter-matrix fitting:
/// per-class counts N_k, per-class sums of x, and the global second moment
/// sum of x x^T. Within/between scatter, class means and the global mean are
/// derived on demand:
///
///   S_w = sum_i x_i x_i^T - sum_k (1/N_k) s_k s_k^T
///   S_b = sum_k N_k (mu_k - mu)(mu_k - mu)^T
///
/// Accumulators are f64 even though inputs are f32; the second moment stays
/// exactly symmetric (only the upper triangle is accumulated, then mirrored).
/// Classes with zero samples are allowed and contribute nothing.
class ScatterStats {
 public:
  ScatterStats() = default;

  ScatterStats(std::uint32_t dim, std::uint32_t num_classes)
      : dim_(dim),
        num_classes_(num_classes),
        counts_(num_classes, 0),
        class_sums_(Mat64::Zero(num_classes, dim)),
        second_moment_(Mat64::Zero(dim, dim)) {
    if (dim == 0) throw validation_error("stats: dim must be positive");
    if (num_classes == 0) throw validation_error("stats: num_classes must be positive");
  }

  std::uint32_t dim() const { return dim_; }
  std::uint32_t num_classes() const { return num_classes_; }
  std::int64_t total() const { return total_; }
  const std::vector<std::int64_t>& counts() const { return counts_; }
  const Mat64& class_sums() const { return class_sums_; }
  const Mat64& second_moment() const { return second_moment_; }

  std::uint32_t num_populated_classes() const {
    std::uint32_t n = 0;
    for (std::int64_t c : counts_)
      if (c > 0) ++n;
    return n;
  }

  void accumulate(const EmbeddingDataset& batch) {
    batch.validate();
    if (batch.labels.empty() && batch.count() > 0)
      throw validation_error("stats: batch has no labels");
    accumulate_rows(batch.vectors, batch.labels);
  }

  void accumulate_rows(const Eigen::Ref<const Mat32>& rows,
                       std::span<const std::uint32_t> labels) {
    if (rows.cols() != static_cast<std::int64_t>(dim_))
      throw validation_error("stats: batch dim " + std::to_string(rows.cols()) +
                             " does not match accumulator dim " + std::to_string(dim_));
    if (rows.rows() != static_cast<std::int64_t>(labels.size()))
      throw validation_error("stats: row/label count mismatch");
    if (rows.rows() == 0) return;
    for (std::uint32_t y : labels) {
      if (y >= num_classes_)
        throw validation_error("stats: label " + std::to_string(y) +
                               " out of range for " + std::to_string(num_classes_) +
                               " classes");
    }
    const Mat64 batch = rows.cast<double>();
    for (std::int64_t i = 0; i < batch.rows(); ++i) {
      counts_[labels[i]] += 1;
      class_sums_.row(labels[i]) += batch.row(i);
    }
    second_moment_.selfadjointView<Eigen::Upper>().rankUpdate(batch.transpose(), 1.0);
    mirror_upper(second_moment_);
    total_ += batch.rows();
  }

  /// Componentwise sum of two accumulators over the same (dim, num_classes).
  void merge(const ScatterStats& other) {
    if (other.dim_ != dim_ || other.num_classes_ != num_classes_)
      throw validation_error("stats: merge shape mismatch");
    for (std::uint32_t k = 0; k < num_classes_; ++k) counts_[k] += other.counts_[k];
    class_sums_ += other.class_sums_;
    second_moment_ += other.second_moment_;
    total_ += other.total_;
  }

  Vec64 global_mean() const {
    if (total_ == 0) throw validation_error("stats: empty accumulator has no mean");
    return class_sums_.colwise().sum().transpose() / static_cast<double>(total_);
  }

  Vec64 class_mean(std::uint32_t k) const {
    if (k >= num_classes_) throw validation_error("stats: class id out of range");
    if (counts_[k] == 0)
      throw validation_error("stats: class " + std::to_string(k) + " has no samples");
    return class_sums_.row(k).transpose() / static_cast<double>(counts_[k]);
  }

  /// K x D matrix of per-class means; rows of empty classes are zero.
  Mat64 class_means() const {
    Mat64 means = Mat64::Zero(num_classes_, dim_);
    for (std::uint32_t k = 0; k < num_classes_; ++k)
      if (counts_[k] > 0)
        means.row(k) = class_sums_.row(k) / static_cast<double>(counts_[k]);
    return means;
  }

  Mat64 within_scatter() const {
    Mat64 sw = second_moment_;
    Mat64 scaled(num_populated_classes(), dim_);
    std::int64_t r = 0;
    for (std::uint32_t k = 0; k < num_classes_; ++k) {
      if (counts_[k] == 0) continue;
      scaled.row(r++) = class_sums_.row(k) / std::sqrt(static_cast<double>(counts_[k]));
    }
    if (r > 0)
      sw.selfadjointView<Eigen::Upper>().rankUpdate(scaled.topRows(r).transpose(), -1.0);
    mirror_upper(sw);
    return sw;
  }

  Mat64 between_scatter() const {
    if (total_ == 0) throw validation_error("stats: empty accumulator has no between-class scatter");
    const Vec64 mu = global_mean();
    Mat64 sb = Mat64::Zero(dim_, dim_);
    Mat64 dev(num_populated_classes(), dim_);
    std::int64_t r = 0;
    for (std::uint32_t k = 0; k < num_classes_; ++k) {
      if (counts_[k] == 0) continue;
      dev.row(r++) = std::sqrt(static_cast<double>(counts_[k])) *
                     (class_sums_.row(k) / static_cast<double>(counts_[k]) - mu.transpose());
    }
    if (r > 0)
      sb.selfadjointView<Eigen::Upper>().rankUpdate(dev.topRows(r).transpose(), 1.0);
    mirror_upper(sb);
    return sb;
  }

  void validate() const {
    if (dim_ == 0) throw validation_error("stats: dim must be positive");
    if (counts_.size() != num_classes_)
      throw validation_error("stats: counts size mismatch");
    const std::int64_t sum = std::accumulate(counts_.begin(), counts_.end(), std::int64_t{0});
    if (sum != total_)
      throw validation_error("stats: total does not equal sum of class counts");
    for (std::int64_t c : counts_)
      if (c < 0) throw validation_error("stats: negative class count");
    if ((second_moment_ - second_moment_.transpose()).cwiseAbs().maxCoeff() != 0.0)
      throw validation_error("stats: second moment not symmetric");
    if (!second_moment_.allFinite() || !class_sums_.allFinite())
      throw validation_error("stats: non-finite accumulator value");
  }

  // Direct construction from serialized fields (checkpoint loading).
  static ScatterStats from_parts(std::uint32_t dim, std::uint32_t num_classes,
                                 std::int64_t total, std::vector<std::int64_t> counts,
                                 Mat64 class_sums, Mat64 second_moment) {
    ScatterStats s;
    s.dim_ = dim;
    s.num_classes_ = num_classes;
    s.total_ = total;
    s.counts_ = std::move(counts);
    s.class_sums_ = std::move(class_sums);
    s.second_moment_ = std::move(second_moment);
    s.validate();
    return s;
  }

 private:
  static void mirror_upper(Mat64& m) {
    m.triangularView<Eigen::StrictlyLower>() = m.transpose();
  }

  std::uint32_t dim_ = 0;
  std::uint32_t num_classes_ = 0;
  std::int64_t total_ = 0;
  std::vector<std::int64_t> counts_;
  Mat64 class_sums_;
  Mat64 second_moment_;
};

}  // namespace koofu
