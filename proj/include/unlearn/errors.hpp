#pragma once

#include <stdexcept>
#include <string>

namespace unlearn {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct ParameterError : std::runtime_error {
    explicit ParameterError(const std::string& what) : std::runtime_error(what) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite value produced by a forward op; the step is aborted.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

struct PersistenceError : std::runtime_error {
    explicit PersistenceError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace unlearn
