#pragma once

#include <stdexcept>
#include <string>

namespace ldmrec {

// Error families. The CLI maps them to exit codes:
// ConfigError -> 2, DataError -> 3, NumericError -> 4.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ParseError : DataError {
  ParseError(const std::string& what, std::size_t line)
      : DataError("line " + std::to_string(line) + ": " + what), line_number(line) {}
  std::size_t line_number;
};

struct EmptyDatasetError : DataError {
  using DataError::DataError;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

struct UsageError : std::logic_error {
  using std::logic_error::logic_error;
};

}  // namespace ldmrec
