#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>

#include "koofu/dataset.hpp"
#include "koofu/errors.hpp"
#include "koofu/types.hpp"

namespace koofu {

/// Accuracy as an exact integer fraction; the float view is derived, never
/// stored, so two-decimal table rendering cannot drift from the count.
struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 0;

  double value() const { return den == 0 ? 0.0 : static_cast<double>(num) / den; }

  friend bool operator==(const Fraction&, const Fraction&) = default;
};

/// Fraction of rows whose ground-truth id appears among the first k ranked
/// entries.
inline Fraction topk_accuracy(const RankedIds& ranked,
                              std::span<const std::uint32_t> gt, std::int64_t k) {
  if (static_cast<std::int64_t>(gt.size()) != ranked.rows())
    throw validation_error("topk: ground-truth count " + std::to_string(gt.size()) +
                           " does not match ranking rows " +
                           std::to_string(ranked.rows()));
  if (k < 1 || k > ranked.cols())
    throw validation_error("topk: k " + std::to_string(k) +
                           " exceeds ranking width " + std::to_string(ranked.cols()));
  Fraction f{0, ranked.rows()};
  for (std::int64_t i = 0; i < ranked.rows(); ++i)
    for (std::int64_t j = 0; j < k; ++j)
      if (ranked(i, j) == gt[i]) {
        ++f.num;
        break;
      }
  return f;
}

/// Multi-label protocol: a row counts as correct iff any of its acceptable
/// class ids appears among the first k ranked entries. Rows without a
/// ground-truth entry are left out of the denominator entirely.
inline Fraction real_accuracy(const RankedIds& ranked, std::int64_t k,
                              const MultiLabelGroundTruth& gt) {
  if (k < 1 || k > ranked.cols())
    throw validation_error("real: k " + std::to_string(k) +
                           " exceeds ranking width " + std::to_string(ranked.cols()));
  Fraction f{0, 0};
  for (const auto& [index, labels] : gt.entries) {
    if (index < 0 || index >= ranked.rows())
      throw validation_error("real: ground-truth index " + std::to_string(index) +
                             " outside ranking rows " + std::to_string(ranked.rows()));
    ++f.den;
    for (std::int64_t j = 0; j < k; ++j) {
      if (std::find(labels.begin(), labels.end(), ranked(index, j)) != labels.end()) {
        ++f.num;
        break;
      }
    }
  }
  return f;
}

}  // namespace koofu
