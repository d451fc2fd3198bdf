#ifndef MLSE_ERRORS_HPP
#define MLSE_ERRORS_HPP

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mlse {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class DataError : public Error {
public:
    using Error::Error;
};

class ConsistencyError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Text parse failure; carries the 1-based line number (0 when not line oriented).
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Binary container load failure.
class FormatError : public Error {
public:
    enum class Kind { BadMagic, UnsupportedVersion, Truncated, ChecksumMismatch, ShapeMismatch, Malformed };

    FormatError(Kind kind, const std::string& what) : Error(kind_name(kind) + ": " + what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

    static std::string kind_name(Kind kind) {
        switch (kind) {
        case Kind::BadMagic: return "bad magic";
        case Kind::UnsupportedVersion: return "unsupported version";
        case Kind::Truncated: return "truncated";
        case Kind::ChecksumMismatch: return "checksum mismatch";
        case Kind::ShapeMismatch: return "shape mismatch";
        case Kind::Malformed: return "malformed";
        }
        return "format error";
    }

private:
    Kind kind_;
};

} // namespace mlse

#endif // MLSE_ERRORS_HPP
