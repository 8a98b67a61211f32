#pragma once

#include <stdexcept>
#include <string>

namespace clwrx {

// Base of every error raised by the library. The CLI maps the three
// categories below onto its exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Invalid configuration or invalid arguments to an operation.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Malformed, corrupt or inconsistent data (dataset files, channels, shapes).
class DataError : public Error {
public:
    using Error::Error;
};

// Training could not continue (non-finite loss or gradient).
class TrainingAbort : public Error {
public:
    using Error::Error;
};

namespace detail {

template <class E = ConfigError>
inline void require(bool cond, const std::string& what) {
    if (!cond) throw E(what);
}

}  // namespace detail
}  // namespace clwrx
