#pragma once

#include <stdexcept>
#include <string>

namespace deshadow {

// Error taxonomy. The CLI maps these onto exit codes:
// usage/config -> 1, data -> 2, numeric -> 3.

class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class UndefinedRegion : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class NumericFailure : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IncompatibleCheckpoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CorruptCheckpoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace deshadow
