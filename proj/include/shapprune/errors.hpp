#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace shapprune {

// Bad arguments to an operation (wrong window size, ratio out of range, ...).
// The CLI maps this to exit code 2 (usage).
class invalid_parameter_error : public std::runtime_error {
public:
    explicit invalid_parameter_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Structurally valid call on data that violates a contract (token out of
// vocabulary, NaN contribution, plan/model mismatch). Exit code 3.
class invalid_input_error : public std::runtime_error {
public:
    explicit invalid_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized artifact. Carries the byte offset at which parsing
// failed. Exit code 3.
class format_error : public std::runtime_error {
public:
    format_error(const std::string& msg, std::uint64_t byte_offset)
        : std::runtime_error(msg + " (at byte offset " + std::to_string(byte_offset) + ")"),
          byte_offset_(byte_offset) {}

    std::uint64_t byte_offset() const { return byte_offset_; }

private:
    std::uint64_t byte_offset_;
};

// Non-finite value produced where a finite one is required. Exit code 4.
class numeric_error : public std::runtime_error {
public:
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace shapprune
