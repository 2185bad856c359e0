#pragma once

#include <stdexcept>
#include <string>

namespace opiaid {

// Every failure raised by the library derives from Error so callers (the CLI
// and the HTTP service) can map it to an exit code or a status in one place.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input that violates a domain invariant. `field` is a dotted path such as
// "features.age" so the service can report where the body went wrong.
class ValidationError : public Error {
public:
    ValidationError(std::string field, const std::string& what)
        : Error(field + ": " + what), field_(std::move(field)), detail_(what) {}
    const std::string& field() const noexcept { return field_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string field_;
    std::string detail_;
};

class OutOfRange : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class AllZeroWeights : public Error {
public:
    AllZeroWeights() : Error("all ORADE component weights are zero") {}
};

class MalformedSeries : public Error {
public:
    using Error::Error;
};

class UnknownOpiate : public Error {
public:
    explicit UnknownOpiate(const std::string& name) : Error("unknown opiate: " + name) {}
};

class DegenerateTarget : public Error {
public:
    using Error::Error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class SchemaMismatch : public Error {
public:
    using Error::Error;
};

class VersionMismatch : public Error {
public:
    using Error::Error;
};

class CorruptArtifact : public Error {
public:
    using Error::Error;
};

class NoMatchingRule : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

class TooSmall : public Error {
public:
    using Error::Error;
};

class SingleClass : public Error {
public:
    SingleClass() : Error("AUC needs both classes present") {}
};

// File system failure; the CLI maps it to exit code 1.
class IoError : public Error {
public:
    using Error::Error;
};

class RetentionReused : public Error {
public:
    RetentionReused() : Error("retention split already read for this experiment") {}
};

}  // namespace opiaid
