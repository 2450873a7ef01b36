#pragma once

#include <exception>
#include <stdexcept>
#include <string>
#include <vector>

namespace subag {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// A quadrature produced a non-finite value.
class IntegrationError : public Error {
public:
    IntegrationError(const std::string& what, double location)
        : Error(what + " (at " + std::to_string(location) + ")"), location_(location) {}
    double location() const noexcept { return location_; }

private:
    double location_;
};

/// An iterative solver hit its iteration cap.
class NoConvergence : public Error {
public:
    NoConvergence(const std::string& what, std::vector<double> last_iterate, double residual)
        : Error(what + " (residual " + std::to_string(residual) + ")"),
          last_iterate_(std::move(last_iterate)),
          residual_(residual) {}
    const std::vector<double>& last_iterate() const noexcept { return last_iterate_; }
    double residual() const noexcept { return residual_; }

private:
    std::vector<double> last_iterate_;
    double residual_;
};

/// Zero signal with zero noise: the fixed-point system has no positive solution.
class PerfectRecovery : public Error {
public:
    using Error::Error;
};

/// The contraction hypothesis min{c, c~} < 1 is violated.
class ContractionUnavailable : public Error {
public:
    using Error::Error;
};

/// c * delta == 1, where the single-estimator risk diverges.
class InterpolationThreshold : public Error {
public:
    using Error::Error;
};

/// Residual degrees of freedom vanish, so the risk-estimator correction is undefined.
class DegenerateCorrection : public Error {
public:
    using Error::Error;
};

/// (loss, penalty) pair without a supported closed form.
class NotImplemented : public Error {
public:
    using Error::Error;
};

/// Missing pairwise quantity when assembling an ensemble risk.
class DependencyError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown in linear algebra or a derived quantity.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Invalid experiment configuration; `field` names the offending key.
class ConfigError : public Error {
public:
    ConfigError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)) {}
    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

/// Short snake_case tag for a caught error ("no_convergence", "domain_error", ...), used in status columns.
std::string status_tag(const std::exception_ptr& ep);

}  // namespace subag
