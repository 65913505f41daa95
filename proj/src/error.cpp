#include "vardecomp/error.hpp"

namespace vardecomp {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::MissingValue: return "MissingValue";
    case ErrorKind::InvalidNumber: return "InvalidNumber";
    case ErrorKind::NonBinaryOutcome: return "NonBinaryOutcome";
    case ErrorKind::SingleLevelFactor: return "SingleLevelFactor";
    case ErrorKind::UnknownLevel: return "UnknownLevel";
    case ErrorKind::EmptyLevel: return "EmptyLevel";
    case ErrorKind::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::UnsupportedDims: return "UnsupportedDims";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::BadFile: return "BadFile";
    case ErrorKind::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorKind::NotConverged: return "NotConverged";
    case ErrorKind::NonPsdCovariance: return "NonPsdCovariance";
    case ErrorKind::TooManyFailures: return "TooManyFailures";
  }
  return "Unknown";
}

bool is_numerical(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::RankDeficientDesign:
    case ErrorKind::NotConverged:
    case ErrorKind::NonPsdCovariance:
    case ErrorKind::TooManyFailures:
      return true;
    default:
      return false;
  }
}

}  // namespace vardecomp
