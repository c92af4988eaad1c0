#pragma once

#include <stdexcept>
#include <string>

namespace cbn {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Tensor or raster extents disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Coefficient vectors, bases or matrices have mismatched dimension.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Training data is empty, too small, or otherwise unusable.
class DataError : public Error {
public:
    using Error::Error;
};

// An operation was called in the wrong order (e.g. backward before forward).
class StateError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

// Parse failures carry the offending line and field when known.
class ParseError : public Error {
public:
    ParseError(const std::string& what, int line = 0, std::string field = {})
        : Error(format(what, line, field)), line_(line), field_(std::move(field)) {}

    int line() const noexcept { return line_; }
    const std::string& field() const noexcept { return field_; }

private:
    static std::string format(const std::string& what, int line, const std::string& field) {
        std::string msg;
        if (line > 0) msg += "line " + std::to_string(line) + ": ";
        if (!field.empty()) msg += "field '" + field + "': ";
        return msg + what;
    }

    int line_;
    std::string field_;
};

class CorruptionError : public Error {
public:
    using Error::Error;
};

class VersionError : public Error {
public:
    using Error::Error;
};

}  // namespace cbn
