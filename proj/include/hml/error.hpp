#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hml {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for an op.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Configuration or argument rejected before any compute.
class ValidationError : public Error {
public:
    using Error::Error;
};

// A loss or parameter became non-finite; training cannot continue.
class HaltError : public Error {
public:
    HaltError(const std::string& what, std::size_t iteration)
        : Error(what + " (iteration " + std::to_string(iteration) + ")"), iteration_(iteration) {}

    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

// An evaluation task with zero initial error; r_err is undefined for it.
class DegenerateTaskError : public Error {
public:
    using Error::Error;
};

}  // namespace hml
