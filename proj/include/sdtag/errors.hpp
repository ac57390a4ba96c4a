#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdtag {

// Base for all typed errors so callers can catch the whole family at once.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible operand shapes; message carries both shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A precondition of an operation was violated.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Malformed input document; byte_offset points at the offending byte.
struct ParseError : Error {
    ParseError(const std::string& msg, std::size_t offset)
        : Error(msg + " (byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
    std::size_t byte_offset;
};

// A way references a node id that is not present in the document.
struct DanglingReference : Error {
    DanglingReference(const std::string& msg, long long id)
        : Error(msg + " (id " + std::to_string(id) + ")"), element_id(id) {}
    long long element_id;
};

// More elements in a frame than identifier vectors available.
struct CapacityError : Error {
    explicit CapacityError(const std::string& msg) : Error(msg) {}
};

}  // namespace sdtag
