#pragma once

#include <stdexcept>
#include <string>

namespace layergen {

// Base for everything thrown by this library.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Contract family: caller violated a precondition. CLI exit code 1.
struct ContractError : Error {
    using Error::Error;
};

// Tensor extents do not line up.
struct ShapeError : ContractError {
    using ContractError::ContractError;
};

// Bad configuration values (invalid variant parameters, malformed keys).
struct ConfigError : ContractError {
    using ContractError::ContractError;
};

// Zero-norm vector fed to a cosine similarity.
struct DegenerateVectorError : ContractError {
    using ContractError::ContractError;
};

// I/O family: filesystem or file-content failures. CLI exit code 2.
struct IoError : Error {
    using Error::Error;
};

// File content is not what the reader expects.
struct FormatError : IoError {
    using IoError::IoError;
};

// Checkpoint-specific kinds, distinguishable by type.
struct BadMagicError : FormatError {
    using FormatError::FormatError;
};
struct VersionMismatchError : FormatError {
    using FormatError::FormatError;
};
struct PayloadBoundsError : FormatError {
    using FormatError::FormatError;
};

// Audio ingestion rejects anything but 16-bit PCM mono WAV.
struct UnsupportedFormatError : FormatError {
    using FormatError::FormatError;
};

}  // namespace layergen
