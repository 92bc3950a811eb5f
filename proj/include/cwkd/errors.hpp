#pragma once

#include <stdexcept>
#include <string>

namespace cwkd {

// Tensor shapes disagree with an operation's contract.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A scalar argument is outside its admissible range (temperature <= 0, ...).
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A quantity that must be normalized has zero norm.
class NormalizationError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// The finite-difference oracle produced a non-finite evaluation.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Requested feature exists in the catalogue but is not implemented here.
class UnsupportedError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed file or config.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cwkd
