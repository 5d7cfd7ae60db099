#pragma once

#include <stdexcept>
#include <string>

namespace cdrnp {

// Base for all domain errors. The CLI maps these to exit code 1.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller violated an operation's precondition (empty set, missing
// posterior, non-scalar loss, ...).
struct ContractError : Error {
  using Error::Error;
};

// Tensor/matrix dimensions do not agree.
struct ShapeError : Error {
  using Error::Error;
};

// Malformed input record.
struct ParseError : Error {
  using Error::Error;
};

// Well-formed input with an out-of-range or inconsistent value.
struct ValidationError : Error {
  using Error::Error;
};

// Unknown user/item id.
struct LookupError : Error {
  using Error::Error;
};

// Task construction could not be satisfied from the available pool.
struct TaskError : Error {
  using Error::Error;
};

struct SplitError : Error {
  using Error::Error;
};

struct EvalError : Error {
  using Error::Error;
};

// Non-finite value encountered where the pipeline requires finiteness.
struct NumericError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

}  // namespace cdrnp
