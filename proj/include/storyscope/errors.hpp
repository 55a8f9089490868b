#pragma once

#include <stdexcept>
#include <string>

namespace storyscope {

/// Base class for all errors raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input file or record (carries context such as a line number).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Data violates a documented invariant (duplicate keys, illegal options, ...).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Bad run configuration: missing paths, inconsistent parameters.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Training cannot proceed (degenerate labels, NaN input, width mismatch).
class TrainError : public Error {
public:
    using Error::Error;
};

/// Provider transport or schema-validation failure after retries.
class ProviderError : public Error {
public:
    using Error::Error;
};

} // namespace storyscope
