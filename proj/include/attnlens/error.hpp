#pragma once

#include <stdexcept>
#include <string>

namespace attnlens {

// Base class for every error raised by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes (inner extents, broadcast, reshape size).
struct DimensionError : Error {
    using Error::Error;
};

// A caller violated an operation's precondition.
struct ContractError : Error {
    using Error::Error;
};

// Invalid or inconsistent model configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Missing, unknown, or misshapen weight tensors.
struct WeightError : Error {
    using Error::Error;
};

// Malformed file contents (weight container, images, CSV).
struct FormatError : Error {
    using Error::Error;
};

// Operation not defined for the requested model variant.
struct UnsupportedError : Error {
    using Error::Error;
};

} // namespace attnlens
