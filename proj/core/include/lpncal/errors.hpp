#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lpncal {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed model, configuration, or file contents.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Newton iteration of a steady solve exhausted its iteration budget.
class NonConvergence : public Error {
 public:
  NonConvergence(int iterations, double residual_norm);
  int iterations() const noexcept { return iterations_; }
  double residual_norm() const noexcept { return residual_norm_; }

 private:
  int iterations_;
  double residual_norm_;
};

/// Newton iteration inside a time step failed (non-finite or iteration limit).
class NewtonDivergence : public Error {
 public:
  NewtonDivergence(double time, int iterations, double residual_norm);
  double time() const noexcept { return time_; }
  int iterations() const noexcept { return iterations_; }
  double residual_norm() const noexcept { return residual_norm_; }

 private:
  double time_;
  int iterations_;
  double residual_norm_;
};

class SingularNormalEquations : public Error {
 public:
  using Error::Error;
};

class AllParticlesFailed : public Error {
 public:
  using Error::Error;
};

/// Wraps an error raised inside one stage of the calibration workflow.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what);
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace lpncal
