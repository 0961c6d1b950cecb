#include "panel_dml/errors.hpp"

namespace panel_dml {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::UnbalancedPanel: return "UnbalancedPanel";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DuplicateWave: return "DuplicateWave";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::TooFewUnits: return "TooFewUnits";
    case ErrorCode::SingleWave: return "SingleWave";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::EmptyGrid: return "EmptyGrid";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::AllZeroVarianceColumns: return "AllZeroVarianceColumns";
    case ErrorCode::DegenerateDenominator: return "DegenerateDenominator";
  }
  return "Unknown";
}

}  // namespace panel_dml
