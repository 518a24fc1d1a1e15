#pragma once

#include <stdexcept>
#include <string>

namespace rae {

// Base of every error thrown by the library. Subclasses name the failure
// category so callers (and the CLI's exit-code mapping) can dispatch on it.
class Error : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
   public:
    using Error::Error;
};

// A caller broke an operation's precondition (wrong shape, bad label, ...).
class ContractError : public Error {
   public:
    using Error::Error;
};

class ConfigError : public Error {
   public:
    using Error::Error;
};

class DomainError : public Error {
   public:
    using Error::Error;
};

class DataError : public Error {
   public:
    using Error::Error;
};

class IoError : public Error {
   public:
    using Error::Error;
};

class LoadError : public IoError {
   public:
    LoadError(const std::string& what, std::size_t offset)
        : IoError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

   private:
    std::size_t offset_;
};

class ParseError : public Error {
   public:
    ParseError(const std::string& what, int line)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

   private:
    int line_;
};

class ExperimentError : public Error {
   public:
    using Error::Error;
};

class SamplingError : public Error {
   public:
    SamplingError(const std::string& what, int step)
        : Error(what + " at step " + std::to_string(step)), step_(step) {}
    int step() const { return step_; }

   private:
    int step_;
};

class InvariantViolation : public Error {
   public:
    using Error::Error;
};

}  // namespace rae
