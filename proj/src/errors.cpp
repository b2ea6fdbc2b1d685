#include "saln/errors.hpp"

namespace saln {

const char* err_name(ErrCode c) {
  switch (c) {
    case ErrCode::ZeroVector: return "ZeroVector";
    case ErrCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrCode::NotADistribution: return "NotADistribution";
    case ErrCode::NotScalar: return "NotScalar";
    case ErrCode::NonFiniteFunctionValue: return "NonFiniteFunctionValue";
    case ErrCode::DimensionTooSmall: return "DimensionTooSmall";
    case ErrCode::DegenerateCategoryCount: return "DegenerateCategoryCount";
    case ErrCode::InsufficientSamples: return "InsufficientSamples";
    case ErrCode::CategoryCountMismatch: return "CategoryCountMismatch";
    case ErrCode::KTooLarge: return "KTooLarge";
    case ErrCode::ShapeMismatch: return "ShapeMismatch";
    case ErrCode::EmptySequence: return "EmptySequence";
    case ErrCode::BatchSizeMismatch: return "BatchSizeMismatch";
    case ErrCode::UnknownCategory: return "UnknownCategory";
    case ErrCode::MissingSnapshot: return "MissingSnapshot";
    case ErrCode::DataLeak: return "DataLeak";
    case ErrCode::FrozenBaseMutated: return "FrozenBaseMutated";
    case ErrCode::TruthNotInGallery: return "TruthNotInGallery";
    case ErrCode::EmptyRankList: return "EmptyRankList";
    case ErrCode::InsufficientTasks: return "InsufficientTasks";
    case ErrCode::InvalidConfig: return "InvalidConfig";
    case ErrCode::IoError: return "IoError";
  }
  return "UnknownError";
}

}  // namespace saln
