#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace emgtf {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree for the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// A caller broke an API precondition (non-scalar loss, wrong vector size, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// Class index or similar out of range.
class IndexError : public Error {
public:
    using Error::Error;
};

/// Invalid numeric parameter (cutoff above Nyquist, mu <= 0, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Invalid or inconsistent experiment configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data unusable: empty sets, degenerate clustering input, missing files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public DataError {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

/// NaN/Inf encountered in a loss, gradient or parameter.
class NumericError : public Error {
public:
    using Error::Error;
};

} // namespace emgtf
