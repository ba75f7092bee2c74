#pragma once

#include <stdexcept>
#include <string>

namespace fkgen {

// Base class for errors with a stable CLI exit class.
class FkError : public std::runtime_error {
public:
    explicit FkError(const std::string& what) : std::runtime_error(what) {}
};

// Bad scenario/config input. CLI exit code 2.
class ConfigError : public FkError {
public:
    using FkError::FkError;
};

// A model broke its contract: G outside (0,1], H <= 0, degenerate selection
// weights, non-stochastic rows. CLI exit code 3.
class ModelContractError : public FkError {
public:
    using FkError::FkError;
};

// A statistical verdict failed. CLI exit code 4.
class StatisticalFailure : public FkError {
public:
    using FkError::FkError;
};

// Enumeration or resource cap exceeded. CLI exit code 5.
class CapExceededError : public FkError {
public:
    using FkError::FkError;
};

}  // namespace fkgen
