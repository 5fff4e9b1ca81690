#pragma once

#include <stdexcept>
#include <string>

namespace decompnet {

// Invalid argument at an API boundary (shape mismatch, non-finite data, ...).
class InvalidInputError : public std::invalid_argument {
public:
    explicit InvalidInputError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Requested truncation rank outside [1, R].
class InvalidRankError : public InvalidInputError {
public:
    explicit InvalidRankError(const std::string& msg) : InvalidInputError(msg) {}
};

// Budget cannot be met (e.g. below the all-ranks-1 size).
class InvalidBudgetError : public InvalidInputError {
public:
    explicit InvalidBudgetError(const std::string& msg) : InvalidInputError(msg) {}
};

// An iterative routine failed to converge or produced NaN/Inf.
class NumericalFailureError : public std::runtime_error {
public:
    NumericalFailureError(const std::string& msg, double residual = 0.0)
        : std::runtime_error(msg), residual_(residual) {}
    double residual() const { return residual_; }

private:
    double residual_;
};

// Operation applied to a model outside its hypothesis class.
class UnsupportedModelError : public std::runtime_error {
public:
    explicit UnsupportedModelError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external data (IDX, CSV, config, checkpoint).
class ParseError : public std::runtime_error {
public:
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace decompnet
