#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oodkit {

// Base of every error raised by the toolkit. The CLI maps subclasses to exit
// statuses (see harness.hpp).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class SingularityError : public Error {
public:
    SingularityError(const std::string& what, std::size_t pivot)
        : Error(what), pivot_(pivot) {}
    std::size_t pivot() const noexcept { return pivot_; }

private:
    std::size_t pivot_;
};

class MissingClassError : public Error {
public:
    MissingClassError(const std::string& what, std::size_t cls)
        : Error(what), cls_(cls) {}
    std::size_t missing_class() const noexcept { return cls_; }

private:
    std::size_t cls_;
};

class InsufficientDataError : public Error {
public:
    using Error::Error;
};

class DivergenceError : public Error {
public:
    DivergenceError(const std::string& what, std::string param)
        : Error(what), param_(std::move(param)) {}
    const std::string& parameter() const noexcept { return param_; }

private:
    std::string param_;
};

class LabelError : public Error {
public:
    using Error::Error;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
};

class StateError : public Error {
public:
    using Error::Error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class FormatError : public Error {
public:
    using Error::Error;
};

class CorruptionError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DisjointnessError : public Error {
public:
    DisjointnessError(const std::string& what, std::size_t a_index, std::size_t b_index)
        : Error(what), a_(a_index), b_(b_index) {}
    std::size_t a_index() const noexcept { return a_; }
    std::size_t b_index() const noexcept { return b_; }

private:
    std::size_t a_;
    std::size_t b_;
};

}  // namespace oodkit
