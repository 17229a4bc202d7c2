#pragma once

#include <stdexcept>
#include <string>

namespace mtsnet {

/// Incompatible extents, ranks, axes or element counts.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Caller broke an API precondition (e.g. backward on a non-scalar).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Invalid model / attention / training configuration.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed or insufficient input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Checkpoint contents do not match the model they are loaded into.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mtsnet
