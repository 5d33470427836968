// errors.hpp
//
// Exception hierarchy shared by every module.  All library failures are
// reported through these types; nothing else is thrown deliberately.

#pragma once

#include <stdexcept>
#include <string>

namespace usta {

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A caller-supplied value is out of range or otherwise unusable.
class ArgumentError : public Error {
public:
    explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

// Tensor / image dimensions do not line up.
class ShapeError : public Error {
public:
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Bad key or value in a configuration file.
class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Malformed input data (image files, checkpoints, ...).
class ParseError : public Error {
public:
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Filesystem-level failure: missing file, short read, failed write.
class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error(msg) {}
};

// Numerical routine could not produce a meaningful result.
class NumericError : public Error {
public:
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// API misuse: operations issued in an order the object cannot honour.
class StateError : public Error {
public:
    explicit StateError(const std::string& msg) : Error(msg) {}
};

} // namespace usta
