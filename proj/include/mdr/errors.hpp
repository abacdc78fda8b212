#pragma once

#include <stdexcept>
#include <string>

namespace mdr {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

class DepthExceedsData : public Error {
public:
    using Error::Error;
};

class DepthMismatch : public Error {
public:
    using Error::Error;
};

class NonPositiveMass : public Error {
public:
    using Error::Error;
};

class BadSplit : public Error {
public:
    using Error::Error;
};

/// Raised when collected input data fails the persistency-of-excitation check.
class ExcitationFailed : public Error {
public:
    using Error::Error;
};

class BuffersNotWarm : public Error {
public:
    using Error::Error;
};

class ScenarioCountMismatch : public Error {
public:
    using Error::Error;
};

class NonPositiveBase : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace mdr
