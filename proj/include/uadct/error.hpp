#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace uadct {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Tensor shapes that do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Non-finite or otherwise unusable input values.
class InputError : public Error {
public:
    using Error::Error;
};

/// A loss that does not depend on the model it is differentiated against.
class GraphError : public Error {
public:
    using Error::Error;
};

/// Label value out of range, or no labeled pixel at all.
class LabelError : public Error {
public:
    using Error::Error;
};

/// Synthetic data could not be generated for the requested canvas.
class GenerationError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Malformed binary file. Carries the byte offset where decoding failed.
class FormatError : public Error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : Error(what + " (at byte " + std::to_string(offset) + ")"), detail_(what), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }
    /// Message without the offset suffix.
    const std::string& detail() const noexcept { return detail_; }

private:
    std::string detail_;
    std::uint64_t offset_;
};

/// A training objective became NaN or infinite.
class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace uadct
