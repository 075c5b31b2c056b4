#pragma once

#include <stdexcept>
#include <string>

namespace prismer {

// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent configuration (unknown kind, bad policy, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation's precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// A scalar argument outside its admissible range.
class RangeError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Sequence longer than the model's positional table.
class LengthError : public Error {
 public:
  using Error::Error;
};

// Loss requested over an empty set of positions.
class EmptyLossError : public Error {
 public:
  using Error::Error;
};

// PCA fit with too few samples.
class FitError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace prismer
