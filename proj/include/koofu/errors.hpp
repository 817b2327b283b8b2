#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace koofu {

// Error buckets map to CLI exit codes: validation -> 2, numeric -> 3, io -> 4.

class validation_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class io_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numeric failure, e.g. a non-positive-definite regularized scatter.
// Carries the smallest lambda (rounded up to two significant digits) that
// would clear the positive-definiteness floor, or NaN when not applicable.
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what,
                         double suggested_lambda = std::nan(""))
      : std::runtime_error(what), suggested_lambda_(suggested_lambda) {}

  double suggested_lambda() const { return suggested_lambda_; }
  bool has_suggested_lambda() const { return !std::isnan(suggested_lambda_); }

 private:
  double suggested_lambda_;
};

}  // namespace koofu
