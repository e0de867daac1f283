#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace relink {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed BENCH, key, meta, dataset, graph or model text.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A structural rule of a netlist or a locked design is violated.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Evaluation hit a combinational cycle.
class CycleError : public Error {
public:
    CycleError(std::string member)
        : Error("combinational cycle through '" + member + "'"), member_(std::move(member)) {}

    const std::string& member() const noexcept { return member_; }

private:
    std::string member_;
};

/// A key input without a 0/1 value is needed to evaluate the design.
class UnresolvedKeyError : public Error {
public:
    using Error::Error;
};

/// Locking could not be carried out with the requested parameters.
class LockingError : public Error {
public:
    using Error::Error;
};

/// Path search gave up; carries how many paths it managed to place.
class InfeasiblePathsError : public LockingError {
public:
    InfeasiblePathsError(std::size_t found, std::size_t requested)
        : LockingError("timing path selection infeasible: found " + std::to_string(found) + " of " +
                       std::to_string(requested) + " paths"),
          found_(found) {}

    std::size_t best_partial() const noexcept { return found_; }

private:
    std::size_t found_;
};

/// Tensor or feature widths do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Training data or training dynamics make learning impossible.
class TrainingError : public Error {
public:
    using Error::Error;
};

}  // namespace relink
