#pragma once

#include <stdexcept>
#include <string>

namespace afem {

/// Raised when a caller violates an operation's preconditions.
class InvalidArgument : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Unreadable, missing or malformed input files and configuration (exit code 2 in the CLI).
class DataError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Base class for failures of the numerical kernels (exit code 3 in the CLI).
class NumericalError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

/// Newton's method did not reach the residual tolerance.
class SolverDiverged : public NumericalError
{
public:
    SolverDiverged(const std::string& what, double last_residual)
        : NumericalError(what), last_residual_(last_residual)
    {
    }

    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

/// The linear operator has a nontrivial kernel (pure Neumann stiffness without
/// a reaction term).
class SingularSystem : public NumericalError
{
public:
    using NumericalError::NumericalError;
};

} // namespace afem
