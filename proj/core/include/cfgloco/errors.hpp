#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cfgloco {

/// Raised when a caller passes an argument outside an operation's domain.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a numeric input (trajectory, observation) contains NaN or Inf.
class NumericInputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A sampler produced a non-finite or exploding state.
class DivergedSampleError : public std::runtime_error {
public:
    DivergedSampleError(std::size_t step, const std::string& what)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Return-guided training was requested on a dataset without return labels.
class MissingLabelsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Artifact file is malformed, truncated or carries an unknown format version.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace cfgloco
