#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace afr {

// Invalid argument or violated precondition on a library operation.
class InvalidInput : public std::runtime_error {
public:
    explicit InvalidInput(const std::string& what) : std::runtime_error(what) {}
};

// Malformed configuration (bad key, bad value, inconsistent fields).
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Corrupt or malformed file. Carries the byte offset (or line number for
// text formats) at which the problem was detected.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const { return offset_; }

private:
    std::uint64_t offset_;
};

// Training produced a non-finite loss. Carries the epoch (or step) at which
// divergence was detected.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::size_t epoch)
        : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ")"),
          epoch_(epoch) {}

    std::size_t epoch() const { return epoch_; }

private:
    std::size_t epoch_;
};

}  // namespace afr
