#pragma once

#include <stdexcept>
#include <string>

namespace jmcr {

// Base class for everything this library throws. Subclasses exist so that
// callers (notably the CLI) can map failure kinds onto exit codes without
// string matching.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied values: out-of-domain link arguments, non-finite traits,
// dimension mismatches.
struct InvalidInputError : Error {
    using Error::Error;
};

// A variance evaluated to zero or below at some (cluster, response) cell.
struct DegenerateVarianceError : Error {
    using Error::Error;
};

// Cholesky of the working covariance failed: the alpha iterate left the
// positive definite parameter space.
struct NotPositiveDefiniteError : Error {
    using Error::Error;
};

// The Fisher information could not be inverted even after one jitter attempt.
struct SingularInformationError : Error {
    using Error::Error;
};

// The trace Gram matrix of {I, W_1..W_K} is singular, i.e. the similarity
// basis is linearly dependent.
struct CollinearBasisError : Error {
    using Error::Error;
};

// Iteration cap reached. `history` carries the residual trajectory so the
// caller can report how close the run got.
struct NonConvergenceError : Error {
    std::vector<double> history;
    NonConvergenceError(const std::string& msg, std::vector<double> hist)
        : Error(msg), history(std::move(hist)) {}
};

// A requested response-scale correlation lies outside what the margin pair
// can attain under a Gaussian copula.
struct InfeasibleCorrelationError : Error {
    using Error::Error;
};

// alpha_0 <= 0, so the ratio transform to correlation parameters is undefined.
struct InvalidTransformError : Error {
    using Error::Error;
};

// A simulation design failed its feasibility checks.
struct InvalidDesignError : Error {
    using Error::Error;
};

// Structured file/parse failure with the offending location in the message.
struct ParseError : Error {
    using Error::Error;
};

} // namespace jmcr
