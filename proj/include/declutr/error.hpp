#pragma once

#include <stdexcept>
#include <string>

namespace declutr {

/// Bad input data: unreadable files, malformed records, mismatched fingerprints.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Numeric failure during optimization or evaluation (non-finite values).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// A document too short to sample from under the active sampler config.
class DocumentRejectedError : public DataError {
 public:
  DocumentRejectedError(const std::string& doc_id, int n, int required_min)
      : DataError("document '" + doc_id + "' has " + std::to_string(n) +
                  " tokens, sampling requires at least " + std::to_string(required_min)),
        required_min(required_min) {}

  int required_min;
};

}  // namespace declutr
