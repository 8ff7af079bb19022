#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace breadcrumbs {

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidInputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Store used out of order (duplicate epoch, record after freeze, ...).
struct StateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Trail assembly asked to back-track past the first recorded epoch.
struct InsufficientHistoryError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
    uint32_t epoch;
    TrainingError(const std::string& what, uint32_t epoch_index)
        : std::runtime_error(what), epoch(epoch_index) {}
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct VerificationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace breadcrumbs
