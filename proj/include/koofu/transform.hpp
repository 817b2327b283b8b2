#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>

#include "koofu/errors.hpp"
#include "koofu/parallel.hpp"
#include "koofu/stats.hpp"
#include "koofu/types.hpp"

namespace koofu {

namespace detail {

// Eigendecomposition of a symmetric matrix with eigenvalues sorted
// non-increasing and a deterministic sign convention: each eigenvector is
// flipped so its largest-magnitude component is positive (ties broken by
// lowest index). Input is symmetrized as 0.5*(M + M^T) before decomposition
// to strip asymmetric rounding residue.
struct SymmetricEig {
  Vec64 values;   // descending
  Mat64 vectors;  // columns, same order
};

inline SymmetricEig symmetric_eig_desc(const Eigen::Ref<const Mat64>& m) {
  const Mat64 sym = 0.5 * (m + Mat64(m.transpose()));
  Eigen::SelfAdjointEigenSolver<Mat64> es(sym);
  if (es.info() != Eigen::Success)
    throw numeric_error("symmetric eigendecomposition failed to converge");
  const std::int64_t d = sym.rows();
  SymmetricEig out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (std::int64_t j = 0; j < d; ++j) {
    out.values[j] = es.eigenvalues()[d - 1 - j];
    Vec64 v = es.eigenvectors().col(d - 1 - j);
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < d; ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0) v = -v;
    out.vectors.col(j) = v;
  }
  return out;
}

inline double round_up_two_sig(double x) {
  if (x <= 0) return 0;
  const double mag = std::pow(10.0, std::floor(std::log10(x)) - 1.0);
  return std::ceil(x / mag) * mag;
}

// Positive-definiteness floor for S_w + lambda*I. Throws numeric_error with
// the smallest two-significant-digit lambda clearing the floor.
inline void check_pd_floor(double min_eig, double max_eig, double lambda) {
  const double threshold = 1e-10 * (max_eig + lambda);
  if (min_eig + lambda > threshold) return;
  // smallest lambda' with min_eig + lambda' > 1e-10*(max_eig + lambda')
  const double floor = (1e-10 * max_eig - min_eig) / (1.0 - 1e-10);
  const double suggested = round_up_two_sig(floor * (1.0 + 1e-9));
  throw numeric_error(
      "regularized scatter is not positive definite (min eigenvalue " +
          std::to_string(min_eig + lambda) + " with lambda " + std::to_string(lambda) +
          "); smallest workable lambda is about " + std::to_string(suggested),
      suggested);
}

}  // namespace detail

/// Regularized Fukunaga-Koontz transform: whitening Z = (S_w + lambda I)^{-1/2}
/// followed by a rotation onto the leading eigenvectors of the whitened
/// between-class scatter, precomposed into a single L x D projection acting
/// on mean-centered input.
struct KooFuTransform {
  std::uint32_t dim = 0;      // D
  std::uint32_t out_dim = 0;  // L <= D
  double lambda = 0;          // shrinkage, > 0
  Vec64 mean;                 // D
  Mat64 whitener;             // D x D symmetric Z
  Mat64 rotation;             // D x L, orthonormal columns U_L
  Vec64 gammas;               // L, non-increasing
  Mat64 projection;           // L x D = rotation^T * whitener

  void recompute_projection() {
    projection.resize(out_dim, dim);
    projection.noalias() = rotation.transpose() * whitener;
  }

  /// Checks every structural invariant at its stated tolerance.
  void validate() const {
    if (dim == 0) throw validation_error("transform: dim must be positive");
    if (out_dim == 0 || out_dim > dim)
      throw validation_error("transform: out_dim must satisfy 1 <= L <= D");
    if (!(lambda > 0)) throw validation_error("transform: lambda must be positive");
    if (mean.size() != dim || whitener.rows() != dim || whitener.cols() != dim ||
        rotation.rows() != dim || rotation.cols() != out_dim ||
        gammas.size() != out_dim || projection.rows() != out_dim ||
        projection.cols() != dim)
      throw validation_error("transform: field shape mismatch");
    if (!mean.allFinite() || !whitener.allFinite() || !rotation.allFinite() ||
        !gammas.allFinite() || !projection.allFinite())
      throw validation_error("transform: non-finite field value");
    for (std::uint32_t j = 0; j + 1 < out_dim; ++j)
      if (gammas[j] < gammas[j + 1])
        throw validation_error("transform: gammas not sorted non-increasing");
    if (gammas.size() > 0 && gammas.minCoeff() < -1e-9 * std::max(gammas[0], 0.0))
      throw validation_error("transform: negative whitened between-class eigenvalue");
    const double sym = (whitener - Mat64(whitener.transpose())).norm();
    if (sym > 1e-10 * std::max(1.0, whitener.norm()))
      throw validation_error("transform: whitener not symmetric");
    const Mat64 gram = rotation.transpose() * rotation;
    const double ortho = (gram - Mat64::Identity(out_dim, out_dim)).norm();
    if (ortho > 1e-8 * std::sqrt(static_cast<double>(out_dim)))
      throw validation_error("transform: rotation columns not orthonormal");
    const double comp = (projection - rotation.transpose() * whitener).norm();
    if (comp > 1e-10 * std::max(1.0, projection.norm()))
      throw validation_error("transform: projection does not equal rotation^T * whitener");
  }
};

/// Classic-LDA baseline: top-L generalized eigenvectors of
/// S_b v = lambda_gen (S_w + lambda I) v.
struct LdaTransform {
  std::uint32_t dim = 0;
  std::uint32_t out_dim = 0;  // L <= K-1
  Mat64 projection;           // L x D, rows = leading eigenvectors
  Vec64 eigenvalues;          // L, non-increasing
};

/// Z with Z (M + lambda I) Z = I for symmetric M. Eigenvalues of M + lambda I
/// must clear the positive-definiteness floor 1e-10 * (max_eig + lambda);
/// below it a numeric_error carries the smallest workable lambda.
inline Mat64 inverse_sqrt_psd(const Eigen::Ref<const Mat64>& m, double lambda) {
  if (m.rows() != m.cols()) throw validation_error("inverse_sqrt_psd: matrix not square");
  if (!(lambda > 0)) throw validation_error("inverse_sqrt_psd: lambda must be positive");
  const auto eig = detail::symmetric_eig_desc(m);
  detail::check_pd_floor(eig.values[eig.values.size() - 1], eig.values[0], lambda);
  const Mat64 half =
      eig.vectors * (eig.values.array() + lambda).rsqrt().matrix().asDiagonal();
  Mat64 z(m.rows(), m.cols());
  z.noalias() = half * eig.vectors.transpose();
  z = 0.5 * (z + Mat64(z.transpose()));  // exact symmetry
  return z;
}

/// Weighting of class-mean deviations in the whitened between-class scatter.
/// by_count follows the count-weighted definition; uniform weights every
/// populated class equally (an option for ragged label spaces).
enum class BetweenWeighting { by_count, uniform };

inline std::string to_string(BetweenWeighting w) {
  return w == BetweenWeighting::by_count ? "by_count" : "uniform";
}

inline BetweenWeighting weighting_from_string(const std::string& s) {
  if (s == "by_count") return BetweenWeighting::by_count;
  if (s == "uniform") return BetweenWeighting::uniform;
  throw validation_error("unknown between-class weighting '" + s +
                         "' (expected by_count|uniform)");
}

inline KooFuTransform fit_koofu(const ScatterStats& stats, double lambda,
                                std::optional<std::uint32_t> out_dim = std::nullopt,
                                BetweenWeighting weighting = BetweenWeighting::by_count) {
  stats.validate();
  const std::uint32_t d = stats.dim();
  const std::uint32_t populated = stats.num_populated_classes();
  if (populated < 2)
    throw validation_error("fit: need at least 2 populated classes, have " +
                           std::to_string(populated));
  const std::uint32_t l = out_dim.value_or(d);
  if (l == 0 || l > d)
    throw validation_error("fit: out_dim " + std::to_string(l) +
                           " must satisfy 1 <= L <= D = " + std::to_string(d));

  const Mat64 sw = stats.within_scatter();
  KooFuTransform t;
  t.dim = d;
  t.out_dim = l;
  t.lambda = lambda;
  t.mean = stats.global_mean();
  t.whitener = inverse_sqrt_psd(sw, lambda);

  // Between-class scatter of the whitened class-mean deviations.
  Mat64 dev(populated, d);
  std::int64_t r = 0;
  for (std::uint32_t k = 0; k < stats.num_classes(); ++k) {
    if (stats.counts()[k] == 0) continue;
    const double w = weighting == BetweenWeighting::by_count
                         ? static_cast<double>(stats.counts()[k])
                         : 1.0;
    dev.row(r++) = std::sqrt(w) * (stats.class_mean(k) - t.mean).transpose();
  }
  const Mat64 whitened_dev = dev * t.whitener;  // rows f(mu_k - mu) * sqrt(w)
  Mat64 sb_white = Mat64::Zero(d, d);
  sb_white.selfadjointView<Eigen::Upper>().rankUpdate(whitened_dev.transpose(), 1.0);
  sb_white.triangularView<Eigen::StrictlyLower>() = sb_white.transpose();

  const auto eig = detail::symmetric_eig_desc(sb_white);
  t.rotation = eig.vectors.leftCols(l);
  t.gammas = eig.values.head(l);
  t.recompute_projection();
  return t;
}

/// Truncation to the leading L directions of an already-fitted transform;
/// reuses the cached eigendecomposition, no refit.
inline KooFuTransform truncate(const KooFuTransform& t, std::uint32_t l) {
  if (l == 0 || l > t.out_dim)
    throw validation_error("truncate: L " + std::to_string(l) +
                           " must satisfy 1 <= L <= fitted out_dim " +
                           std::to_string(t.out_dim));
  KooFuTransform out = t;
  out.out_dim = l;
  out.rotation = t.rotation.leftCols(l);
  out.gammas = t.gammas.head(l);
  out.projection = t.projection.topRows(l);
  return out;
}

inline LdaTransform fit_lda(const ScatterStats& stats, double lambda,
                            std::uint32_t out_dim) {
  stats.validate();
  if (lambda < 0) throw validation_error("fit_lda: lambda must be non-negative");
  const std::uint32_t populated = stats.num_populated_classes();
  if (populated < 2)
    throw validation_error("fit_lda: need at least 2 populated classes");
  if (out_dim == 0 || out_dim > populated - 1)
    throw validation_error("fit_lda: out_dim " + std::to_string(out_dim) +
                           " exceeds the between-class rank bound K-1 = " +
                           std::to_string(populated - 1));

  const Mat64 sw = stats.within_scatter();
  const std::uint32_t d = stats.dim();
  const auto sw_eig = detail::symmetric_eig_desc(sw);
  detail::check_pd_floor(sw_eig.values[d - 1], sw_eig.values[0], lambda);

  const Mat64 sb = stats.between_scatter();
  const Mat64 a = 0.5 * (sb + Mat64(sb.transpose()));
  Mat64 b = 0.5 * (sw + Mat64(sw.transpose()));
  b.diagonal().array() += lambda;
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat64> ges(a, b);
  if (ges.info() != Eigen::Success)
    throw numeric_error("generalized eigendecomposition failed to converge");

  LdaTransform t;
  t.dim = d;
  t.out_dim = out_dim;
  t.projection.resize(out_dim, d);
  t.eigenvalues.resize(out_dim);
  for (std::uint32_t j = 0; j < out_dim; ++j) {
    t.eigenvalues[j] = ges.eigenvalues()[d - 1 - j];
    Vec64 v = ges.eigenvectors().col(d - 1 - j);
    std::int64_t arg = 0;
    for (std::int64_t i = 1; i < v.size(); ++i)
      if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0) v = -v;
    t.projection.row(j) = v.transpose();
  }
  return t;
}

struct ApplyResult {
  Mat32 projected;         // N x L
  std::int64_t zero_rows = 0;  // rows that renormalization left untouched
};

/// Projects each row x to T (x - mean), computed in f64 and emitted as f32.
/// With renormalize, each nonzero output row is scaled to unit length; zero
/// rows pass through and are counted, not errored. Row i of a batch equals
/// the single-row application bit for bit.
inline ApplyResult apply(const KooFuTransform& t, const Eigen::Ref<const Mat32>& vectors,
                         bool renormalize) {
  if (vectors.cols() != static_cast<std::int64_t>(t.dim))
    throw validation_error("apply: vector dim " + std::to_string(vectors.cols()) +
                           " does not match transform dim " + std::to_string(t.dim));
  ApplyResult res;
  res.projected.resize(vectors.rows(), t.out_dim);
  std::atomic<std::int64_t> zero_rows{0};
  parallel_ranges(vectors.rows(), [&](std::int64_t begin, std::int64_t end) {
    std::int64_t local_zeros = 0;
    Vec64 centered(t.dim), projected(t.out_dim);
    for (std::int64_t i = begin; i < end; ++i) {
      centered = vectors.row(i).cast<double>().transpose() - t.mean;
      projected.noalias() = t.projection * centered;
      if (renormalize) {
        const double norm = projected.norm();
        if (norm > 0)
          projected /= norm;
        else
          ++local_zeros;
      }
      res.projected.row(i) = projected.cast<float>().transpose();
    }
    zero_rows.fetch_add(local_zeros);
  });
  res.zero_rows = zero_rows.load();
  return res;
}

}  // namespace koofu
