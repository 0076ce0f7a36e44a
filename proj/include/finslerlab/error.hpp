#pragma once

#include <stdexcept>
#include <string>

namespace finslerlab {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Evaluation outside the chart domain, or a metric that failed its
// positive-definiteness check at the evaluation site.
class DomainError : public Error {
public:
    using Error::Error;
};

// Malformed input: scene files, expressions, operation preconditions.
class SpecError : public Error {
public:
    using Error::Error;
};

// Syntax error with a source location (1-based line and column).
class ParseError : public SpecError {
public:
    ParseError(const std::string& msg, int line, int column)
        : SpecError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + msg),
          line_(line), column_(column) {}

    int line() const { return line_; }
    int column() const { return column_; }

private:
    int line_;
    int column_;
};

// Arithmetic failure during expression evaluation (log of a negative number,
// division by zero, ...).
class EvalError : public DomainError {
public:
    using DomainError::DomainError;
};

// A numerical procedure could not produce a trustworthy answer.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace finslerlab
