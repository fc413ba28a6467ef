#pragma once

#include <stdexcept>
#include <string>

namespace mvox {

// Every failure raised by the library derives from Error so callers can
// catch one type at the CLI boundary.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct DataError : Error { using Error::Error; };
struct StateError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct FileError : Error { using Error::Error; };
struct UnsupportedFormatError : Error { using Error::Error; };
struct CorruptionError : Error { using Error::Error; };

struct ParseError : Error {
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), byte_offset(offset) {}
  std::size_t byte_offset;
};

}  // namespace mvox
