#pragma once

#include <stdexcept>
#include <string>

namespace sdtn {

// Base of every error thrown by the library. The CLI maps the concrete
// subclasses onto its exit-code contract.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad channel widths, dangling layer references, mismatched parameter lengths.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Spatial / rank inconsistencies discovered while computing shapes.
class ShapeError : public Error {
public:
    using Error::Error;
};

// Malformed binary files (images, checkpoints).
class FormatError : public Error {
public:
    using Error::Error;
};

// Malformed text (annotations, configs, protocol files).
class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_ = 0;
};

// NaN / Inf / divergence during training or evaluation.
class NumericalError : public Error {
public:
    using Error::Error;
};

// Backward reached an operation that has no registered derivative.
class UnsupportedOpError : public Error {
public:
    using Error::Error;
};

// Caller broke an API precondition (missing gradients, non-scalar loss, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

}  // namespace sdtn
