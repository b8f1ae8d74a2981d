#pragma once

#include <stdexcept>
#include <string>

namespace qadv {

// Base for every error raised by the library. The CLI maps InvalidSpec to
// exit code 2 and everything else to 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Non-finite values where the contract requires finite ones.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t epoch, const std::string& what)
      : Error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

// Integer accumulator left its representable range.
class InternalOverflow : public Error {
 public:
  using Error::Error;
};

class GradientDegenerate : public Error {
 public:
  using Error::Error;
};

// Boundary attack could not draw an adversarial starting point.
class InitFailed : public Error {
 public:
  using Error::Error;
};

// Bisection endpoints classified identically.
class BoundaryNotBracketed : public Error {
 public:
  using Error::Error;
};

class UndefinedSimilarity : public Error {
 public:
  using Error::Error;
};

class InvalidSpec : public Error {
 public:
  using Error::Error;
};

}  // namespace qadv
