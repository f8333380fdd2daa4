/**
 * @file error.hpp
 * @brief Exception hierarchy shared by all homoglab modules.
 */
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace homoglab {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class AssemblyError : public Error {
public:
    using Error::Error;
};

class ConstraintError : public Error {
public:
    using Error::Error;
};

/// Raised by the eigen/linear solvers. Carries the best residuals reached when
/// an iteration cap is hit.
class SolverError : public Error {
public:
    explicit SolverError(const std::string& what, std::vector<double> best_residuals = {})
        : Error(what), residuals_(std::move(best_residuals)) {}

    const std::vector<double>& best_residuals() const noexcept { return residuals_; }

private:
    std::vector<double> residuals_;
};

class LocateError : public Error {
public:
    using Error::Error;
};

class AlignmentError : public Error {
public:
    using Error::Error;
};

class FitError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace homoglab
