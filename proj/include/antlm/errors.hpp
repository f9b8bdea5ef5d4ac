#pragma once

#include <stdexcept>
#include <string>

namespace antlm {

// Base for everything this library throws on purpose.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (names both shapes in the message).
struct ShapeError : Error {
    using Error::Error;
};

// A stated precondition was violated by the caller.
struct ContractError : Error {
    using Error::Error;
};

// An index (token id, position) is out of range.
struct IndexError : Error {
    using Error::Error;
};

// Bad configuration: invalid field values, vocab too small, missing [MASK], ...
struct ConfigError : Error {
    using Error::Error;
};

// Text failed to parse (schedule strings, config files, pair files).
// Messages carry the offending position.
struct ParseError : Error {
    using Error::Error;
};

// Numeric poisoning: NaN gradients, empty loss masks.
struct NumericError : Error {
    using Error::Error;
};

// Filesystem and encoding failures.
struct IoError : Error {
    using Error::Error;
};

}  // namespace antlm
