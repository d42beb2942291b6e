#pragma once

#include <stdexcept>
#include <string>

namespace face {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Caller supplied invalid input (bad shape, bad parameter, degenerate data).
class ValidationError : public Error {
public:
    using Error::Error;
};

/// File or network I/O failed, or a file is not in the expected format.
class IoError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition) throw ValidationError(message);
}

} // namespace face
