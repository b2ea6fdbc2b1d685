#ifndef SALN_ERRORS_HPP
#define SALN_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace saln {

enum class ErrCode {
  ZeroVector,
  NonPositiveTemperature,
  NotADistribution,
  NotScalar,
  NonFiniteFunctionValue,
  DimensionTooSmall,
  DegenerateCategoryCount,
  InsufficientSamples,
  CategoryCountMismatch,
  KTooLarge,
  ShapeMismatch,
  EmptySequence,
  BatchSizeMismatch,
  UnknownCategory,
  MissingSnapshot,
  DataLeak,
  FrozenBaseMutated,
  TruthNotInGallery,
  EmptyRankList,
  InsufficientTasks,
  InvalidConfig,
  IoError,
};

const char* err_name(ErrCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrCode code, const std::string& what)
      : std::runtime_error(std::string(err_name(code)) + ": " + what), code_(code) {}
  ErrCode code() const { return code_; }

 private:
  ErrCode code_;
};

[[noreturn]] inline void fail(ErrCode c, const std::string& what) { throw Error(c, what); }

}  // namespace saln

#endif
