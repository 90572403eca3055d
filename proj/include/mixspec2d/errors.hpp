#pragma once

#include <stdexcept>
#include <string>

namespace mixspec2d {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A model object (coefficients, parameters, innovation law) violates its invariants.
class InvalidModelError : public Error {
public:
    using Error::Error;
};

/// An operation was called with arguments outside its domain.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// An input field does not cover the index range a filter needs.
class CoverageError : public Error {
public:
    using Error::Error;
};

/// The normal equations of a linear fit are numerically singular.
class ConditioningError : public Error {
public:
    using Error::Error;
};

/// A fit produced (or would need) a zero-amplitude component.
class RankDeficiencyError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

} // namespace mixspec2d
