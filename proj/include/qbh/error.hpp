#pragma once

#include <stdexcept>
#include <string>

namespace qbh {

/// Base exception for every recoverable failure raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised when an EncoderContract implementation breaks its unit-norm promise.
class ContractViolation : public Error {
public:
    using Error::Error;
};

namespace detail {

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
    if (!cond) fail(msg);
}

} // namespace detail
} // namespace qbh
