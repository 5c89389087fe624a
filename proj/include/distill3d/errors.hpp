// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace distill3d {

/// Invalid argument or precondition violation on a library call.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Bad or missing configuration (CLI exit code 1).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Extraction produced no usable surface.
class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A render/mesh/state handed to a backward pass no longer matches its source.
class StaleStateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File read/write failure; message carries the path.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bridge could not be reached (connect/timeout/read failure).
class TransportError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bridge answered, but the reply violates the wire protocol or reports an error.
class ProtocolError : public std::runtime_error {
public:
    ProtocolError(std::string code, const std::string& detail)
        : std::runtime_error(code + ": " + detail), code_(std::move(code)) {}
    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

}  // namespace distill3d
