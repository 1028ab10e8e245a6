#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace simil {

enum class ErrorCode {
  InvalidArgument,
  DimensionMismatch,
  DivergedTrajectory,
  SingularMap,
  GridMiss,
  DegenerateSamples,
  HorizonTooShort,
  AllRestartsNonInvertible,
  StepTooLarge,
  IllConditionedRegression,
  SingularDenominator,
  SingularDiffusion,
  NotAFixedPoint,
  UnsupportedDichotomy,
  ContractionViolated,
  AllPathsExitImmediately,
  ParseError,
  ValidationError,
};

const char* error_code_name(ErrorCode code);

// Config problems map to exit code 1, numerical failures to exit code 2.
inline bool is_config_error(ErrorCode code) {
  return code == ErrorCode::ParseError || code == ErrorCode::ValidationError;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class DivergedTrajectory : public Error {
 public:
  DivergedTrajectory(std::int64_t path_index, int step, double norm)
      : Error(ErrorCode::DivergedTrajectory,
              "trajectory diverged on path " + std::to_string(path_index) + " at step " +
                  std::to_string(step) + " (state norm " + std::to_string(norm) + ")"),
        path_index_(path_index),
        step_(step) {}
  std::int64_t path_index() const noexcept { return path_index_; }
  int step() const noexcept { return step_; }

 private:
  std::int64_t path_index_;
  int step_;
};

class SingularDenominator : public Error {
 public:
  explicit SingularDenominator(double x)
      : Error(ErrorCode::SingularDenominator,
              "K* ODE denominator f(x)*sigma(x) vanishes near x = " + std::to_string(x)),
        x_(x) {}
  double x() const noexcept { return x_; }

 private:
  double x_;
};

}  // namespace simil
