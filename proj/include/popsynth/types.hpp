#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace popsynth {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using Index = Eigen::Index;

enum class Errc {
  MissingHeader,
  MissingColumn,
  NonNumeric,
  ShareOutOfRange,
  InvalidUnitSize,
  RowLength,
  GroupSumMismatch,
  SchemaInvalid,
  TooFewUnits,
  DomainViolation,
  OutOfRange,
  NotSymmetric,
  DimensionMismatch,
  InfeasibleTarget,
  NotConverged,
  KeyMismatch,
  MissingInput,
  UnknownAttribute,
  UnknownUnit,
  ConfigInvalid,
  UnknownKey,
  TooLarge,
  Io,
};

const char* errc_name(Errc code) noexcept;

/// Exception carrying a machine-checkable error code. Every failure surfaced by
/// the library is reported through this type.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace popsynth
