#pragma once

#include <stdexcept>
#include <string>

namespace rhizon {

/// Base class for all toolkit errors.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Invalid configuration (odd head dim, base <= 1, bad mode, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Index outside a valid range (dimension index, layer, head).
class IndexError : public Error {
public:
    using Error::Error;
};

/// Vector/matrix size does not match the expected dimension.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid scalar argument (lambda < 1, bad depth, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// Bad or empty input data (empty corpus, token id out of range).
class DataError : public Error {
public:
    using Error::Error;
};

/// Filesystem or stream failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Scaling-law queries on a config whose critical dimension is zero.
class UndefinedScalingError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

} // namespace rhizon
