#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace nglf {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid arguments or inconsistent parameters (CLI exit code 2).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A data column has zero sample variance and cannot be standardized.
class DegenerateColumnError : public ValidationError {
public:
    explicit DegenerateColumnError(std::size_t column)
        : ValidationError("column " + std::to_string(column) + " has zero sample variance"),
          column_(column) {}

    std::size_t column() const noexcept { return column_; }

private:
    std::size_t column_;
};

/// A non-finite value or a log-domain violation inside the solver (CLI exit code 4).
/// `index` names the offending factor or variable, depending on `what()`.
class NumericError : public Error {
public:
    NumericError(const std::string& msg, std::size_t index)
        : Error(msg + " (index " + std::to_string(index) + ")"), index_(index) {}

    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

/// A covariance estimate that is not positive definite was used for likelihood evaluation.
class NotPositiveDefiniteError : public Error {
public:
    using Error::Error;
};

}  // namespace nglf
