#pragma once

#include <stdexcept>
#include <string>

namespace gnaq {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid arguments, out-of-range indices, malformed configuration.
struct InputError : Error {
    using Error::Error;
};

// Malformed text input; carries a 1-based line number in the message.
struct ParseError : InputError {
    ParseError(std::size_t line, const std::string& what)
        : InputError("line " + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line;
};

// Corrupt or truncated binary model file; names the byte offset.
struct FormatError : Error {
    FormatError(std::uint64_t offset, const std::string& what)
        : Error("offset " + std::to_string(offset) + ": " + what), offset(offset) {}
    std::uint64_t offset;
};

// Impossible sampling request (e.g. a user that interacts with every item).
struct SamplingError : Error {
    using Error::Error;
};

// Non-finite values encountered during training.
struct NumericError : Error {
    using Error::Error;
};

}  // namespace gnaq
