#pragma once

#include <stdexcept>
#include <string>

namespace gpad {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDataset : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

/// Wrong call shape, e.g. asking for a noise diagonal on a cross-covariance block.
class UsageError : public Error {
public:
    using Error::Error;
};

class DomainError : public Error {
public:
    using Error::Error;
};

/// Kernel Gram matrix could not be factorized even with the largest jitter.
class IllConditionedKernel : public Error {
public:
    IllConditionedKernel(const std::string& what, double condition_estimate)
        : Error(what), condition_estimate_(condition_estimate) {}

    double condition_estimate() const noexcept { return condition_estimate_; }

private:
    double condition_estimate_;
};

class DegenerateCovariance : public Error {
public:
    using Error::Error;
};

class OptimizationFailed : public Error {
public:
    using Error::Error;
};

class NumericalBlowup : public Error {
public:
    using Error::Error;
};

class ExperimentFailed : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

inline void require_same_dim(long a, long b, const char* what) {
    if (a != b) {
        throw DimensionMismatch(std::string(what) + ": dimension " + std::to_string(a) +
                                " does not match " + std::to_string(b));
    }
}

}  // namespace gpad
