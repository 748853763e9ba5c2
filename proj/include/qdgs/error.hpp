#pragma once

#include <stdexcept>
#include <string>

namespace qdgs {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, mismatched dimensions or specs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A scorer or probe produced a value that cannot enter the archive (NaN, inf).
class EvaluationRejected : public Error {
public:
    using Error::Error;
};

/// Broken internal state, e.g. a covariance that lost positive definiteness.
class InternalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    IoError(const std::string& path, const std::string& what)
        : Error(what + ": " + path), path_(path) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

} // namespace qdgs
