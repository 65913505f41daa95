#pragma once

#include <stdexcept>
#include <string>

namespace vardecomp {

enum class ErrorKind {
  // input / validation
  MissingColumn,
  MissingValue,
  InvalidNumber,
  NonBinaryOutcome,
  SingleLevelFactor,
  UnknownLevel,
  EmptyLevel,
  IndexOutOfRange,
  DimensionMismatch,
  UnsupportedDims,
  InvalidArgument,
  BadFile,
  // numerical
  RankDeficientDesign,
  NotConverged,
  NonPsdCovariance,
  TooManyFailures,
};

const char* to_string(ErrorKind kind);

/// True for errors caused by numerical failure rather than bad input.
bool is_numerical(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace vardecomp
