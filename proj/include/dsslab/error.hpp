#pragma once

#include <stdexcept>
#include <string>

namespace dsslab {

// Numeric breakdown: division by a zero norm, non-finite values produced or
// consumed, iterative methods failing to converge.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// API misuse that depends on call order, e.g. backward without a pending
// forward cache.
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A ratio whose denominator is exactly zero (baseline gradient std of 0).
class UndefinedRatioError : public NumericError {
public:
    using NumericError::NumericError;
};

}  // namespace dsslab
