#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "koofu/dataset.hpp"
#include "koofu/errors.hpp"
#include "koofu/types.hpp"

namespace koofu {

/// Gaussian benchmark: K classes sharing one anisotropic within-class
/// covariance (eigenvalues log-spaced with the given condition number,
/// normalized to mean 1, rotated by a random orthogonal basis), class means
/// drawn as mean_scale * N(0, I). All draws flow from the one seed in a fixed
/// order, so equal configs give bitwise-equal datasets.
struct SynthConfig {
  std::uint64_t seed = 42;
  std::uint32_t classes = 20;
  std::uint32_t dim = 64;
  std::int64_t train_per_class = 200;
  std::int64_t test_per_class = 50;
  double cond = 100.0;
  double mean_scale = 0.3;
};

struct SynthData {
  EmbeddingDataset train;
  EmbeddingDataset test;
};

inline SynthData make_synthetic(const SynthConfig& cfg) {
  if (cfg.classes < 1) throw validation_error("synth: need at least 1 class");
  if (cfg.dim < 1) throw validation_error("synth: dim must be positive");
  if (cfg.train_per_class < 0 || cfg.test_per_class < 0)
    throw validation_error("synth: per-class counts must be non-negative");
  if (!(cfg.cond >= 1.0) || !std::isfinite(cfg.cond))
    throw validation_error("synth: condition number must be >= 1");
  if (!(cfg.mean_scale >= 0.0) || !std::isfinite(cfg.mean_scale))
    throw validation_error("synth: mean_scale must be non-negative");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal;
  const std::int64_t d = cfg.dim;
  const std::int64_t kc = cfg.classes;

  // Log-spaced spectrum cond..1, scaled to mean 1.
  Vec64 eigs(d);
  for (std::int64_t j = 0; j < d; ++j)
    eigs[j] = d == 1 ? 1.0
                     : std::pow(cfg.cond, static_cast<double>(d - 1 - j) /
                                              static_cast<double>(d - 1));
  eigs *= static_cast<double>(d) / eigs.sum();

  Mat64 gauss(d, d);
  for (std::int64_t i = 0; i < d; ++i)
    for (std::int64_t j = 0; j < d; ++j) gauss(i, j) = normal(rng);
  const Eigen::HouseholderQR<Mat64> qr(gauss);
  const Mat64 basis = qr.householderQ();
  const Mat64 factor = basis * eigs.cwiseSqrt().asDiagonal();  // cov = F F^T

  Mat64 means(kc, d);
  for (std::int64_t k = 0; k < kc; ++k)
    for (std::int64_t j = 0; j < d; ++j) means(k, j) = cfg.mean_scale * normal(rng);

  const auto draw_split = [&](std::int64_t per_class) {
    EmbeddingDataset out;
    out.dim = cfg.dim;
    out.vectors.resize(kc * per_class, d);
    out.labels.resize(kc * per_class);
    Mat64 z(per_class, d);
    for (std::int64_t k = 0; k < kc; ++k) {
      for (std::int64_t i = 0; i < per_class; ++i)
        for (std::int64_t j = 0; j < d; ++j) z(i, j) = normal(rng);
      Mat64 x = z * factor.transpose();
      x.rowwise() += means.row(k);
      out.vectors.middleRows(k * per_class, per_class) = x.cast<float>();
      for (std::int64_t i = 0; i < per_class; ++i)
        out.labels[k * per_class + i] = static_cast<std::uint32_t>(k);
    }
    for (std::int64_t k = 0; k < kc; ++k)
      out.class_table.push_back("class_" + std::to_string(k));
    return out;
  };

  SynthData data;
  data.train = draw_split(cfg.train_per_class);
  data.test = draw_split(cfg.test_per_class);
  return data;
}

}  // namespace koofu
