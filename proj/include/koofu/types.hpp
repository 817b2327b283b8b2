#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "koofu/errors.hpp"

namespace koofu {

// Sample matrices are row-major (row = one vector), matching the on-disk
// layout so payloads load/store without transposition.
using Mat32 = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Mat64 = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec64 = Eigen::VectorXd;

// N x k ranked class ids, one row per query.
using RankedIds = Eigen::Matrix<std::uint32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Padding value for ranking rows with fewer distinct classes than columns;
// never a valid class id.
inline constexpr std::uint32_t kNoClass = 0xFFFFFFFFu;

enum class Metric { cosine, euclidean };
enum class Modality { visual, textual };

inline std::string to_string(Metric m) {
  return m == Metric::cosine ? "cosine" : "euclidean";
}

inline std::string to_string(Modality m) {
  return m == Modality::visual ? "visual" : "textual";
}

inline Metric metric_from_string(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "euclidean") return Metric::euclidean;
  throw validation_error("unknown metric '" + s + "' (expected cosine|euclidean)");
}

inline Modality modality_from_string(const std::string& s) {
  if (s == "visual") return Modality::visual;
  if (s == "textual") return Modality::textual;
  throw validation_error("unknown modality '" + s + "' (expected visual|textual)");
}

}  // namespace koofu
