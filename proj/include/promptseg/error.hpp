#pragma once

#include <stdexcept>
#include <string>

namespace promptseg {

// Base for all library failures.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// File missing, unreadable, or malformed on disk.
class IoError : public Error {
public:
    using Error::Error;
};

// Caller supplied arguments that cannot be honored (bad flag combination,
// schema mismatch between artifacts, ...).
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace promptseg
