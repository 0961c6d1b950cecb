#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace panel_dml {

enum class ErrorCode {
  // data errors
  ParseError,
  MissingColumn,
  UnbalancedPanel,
  NonFiniteValue,
  DuplicateWave,
  // argument / shape errors
  InvalidArgument,
  TooFewUnits,
  SingleWave,
  DimensionMismatch,
  EmptyGrid,
  // numerical failures
  RankDeficient,
  AllZeroVarianceColumns,
  DegenerateDenominator,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

  bool is_data_error() const noexcept {
    return code_ == ErrorCode::ParseError || code_ == ErrorCode::MissingColumn ||
           code_ == ErrorCode::UnbalancedPanel || code_ == ErrorCode::NonFiniteValue ||
           code_ == ErrorCode::DuplicateWave;
  }
  bool is_numerical_error() const noexcept {
    return code_ == ErrorCode::RankDeficient || code_ == ErrorCode::AllZeroVarianceColumns ||
           code_ == ErrorCode::DegenerateDenominator;
  }

 private:
  ErrorCode code_;
};

/// Non-finite cell; `row` is the 1-based data row (header excluded).
class NonFiniteValueError : public Error {
 public:
  NonFiniteValueError(std::size_t row, std::string column)
      : Error(ErrorCode::NonFiniteValue,
              "row " + std::to_string(row) + ", column '" + column + "'"),
        row_(row),
        column_(std::move(column)) {}

  std::size_t row() const noexcept { return row_; }
  const std::string& column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::string column_;
};

/// Design matrix column (0-based, intercept excluded) that is linearly dependent on earlier ones.
class RankDeficientError : public Error {
 public:
  explicit RankDeficientError(long column)
      : Error(ErrorCode::RankDeficient,
              column < 0 ? std::string("intercept is collinear with the design")
                         : "column " + std::to_string(column) + " is linearly dependent"),
        column_(column) {}

  long column() const noexcept { return column_; }

 private:
  long column_;
};

}  // namespace panel_dml
