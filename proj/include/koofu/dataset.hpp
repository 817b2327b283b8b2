#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "koofu/errors.hpp"
#include "koofu/types.hpp"

namespace koofu {

/// A labeled embedding dataset: N rows of D-dimensional f32 vectors, a class
/// id per row, and an id -> name class table. Labels and table may be empty
/// while a dataset is being assembled from its separate files; validate()
/// checks whichever parts are present against each other.
struct EmbeddingDataset {
  std::uint32_t dim = 0;
  Mat32 vectors;                         // count x dim
  std::vector<std::uint32_t> labels;     // size count, or empty
  std::vector<std::string> class_table;  // index = class id, or empty

  std::int64_t count() const { return vectors.rows(); }

  void validate() const {
    if (dim == 0) throw validation_error("dataset: dim must be positive");
    if (vectors.cols() != static_cast<std::int64_t>(dim))
      throw validation_error("dataset: vector width does not match dim");
    if (!vectors.allFinite())
      throw validation_error("dataset: non-finite vector component");
    if (!labels.empty()) {
      if (static_cast<std::int64_t>(labels.size()) != count())
        throw validation_error("dataset: label count does not match vector rows");
      if (!class_table.empty()) {
        for (std::uint32_t y : labels) {
          if (y >= class_table.size())
            throw validation_error("dataset: label " + std::to_string(y) +
                                   " outside class table of size " +
                                   std::to_string(class_table.size()));
        }
      }
    }
  }

  std::uint32_t num_classes() const {
    if (!class_table.empty()) return static_cast<std::uint32_t>(class_table.size());
    std::uint32_t max_id = 0;
    for (std::uint32_t y : labels) max_id = std::max(max_id, y);
    return labels.empty() ? 0 : max_id + 1;
  }
};

/// Sparse multi-label ground truth: sample index -> acceptable class ids.
struct MultiLabelGroundTruth {
  std::map<std::int64_t, std::vector<std::uint32_t>> entries;

  void validate(std::size_t num_classes = 0) const {
    for (const auto& [index, ids] : entries) {
      if (index < 0)
        throw validation_error("multilabel: negative sample index");
      if (ids.empty())
        throw validation_error("multilabel: empty label set for sample " +
                               std::to_string(index));
      if (num_classes > 0) {
        for (std::uint32_t id : ids) {
          if (id >= num_classes)
            throw validation_error("multilabel: class id " + std::to_string(id) +
                                   " outside class table of size " +
                                   std::to_string(num_classes));
        }
      }
    }
  }
};

}  // namespace koofu
