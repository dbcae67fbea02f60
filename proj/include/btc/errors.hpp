#pragma once

#include <stdexcept>
#include <string>

namespace btc {

// Every failure raised by the library derives from Error so callers can map
// the category to an exit code without string matching.
enum class ErrorKind {
  kInvalidInput,
  kShape,
  kDegenerateStats,
  kLookup,
  kAlignment,
  kMissingDependency,
  kUndefinedMetric,
  kInvalidConfig,
  kCorruptCheckpoint,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define BTC_DEFINE_ERROR(Name, Kind)                                    \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

BTC_DEFINE_ERROR(InvalidInput, kInvalidInput)
BTC_DEFINE_ERROR(ShapeError, kShape)
BTC_DEFINE_ERROR(DegenerateStats, kDegenerateStats)
BTC_DEFINE_ERROR(LookupError, kLookup)
BTC_DEFINE_ERROR(AlignmentError, kAlignment)
BTC_DEFINE_ERROR(MissingDependency, kMissingDependency)
BTC_DEFINE_ERROR(UndefinedMetric, kUndefinedMetric)
BTC_DEFINE_ERROR(InvalidConfig, kInvalidConfig)
BTC_DEFINE_ERROR(CorruptCheckpoint, kCorruptCheckpoint)

#undef BTC_DEFINE_ERROR

}  // namespace btc
