#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace idf {

enum class ErrorKind {
  Ingestion,  // missing or undecodable input file
  Format,     // decodable, but not the expected layout (e.g. not RGB)
  Parameter,  // argument outside its domain
  Dimension,  // shape mismatch
  State,      // object used before it was initialized
  Config,     // invalid configuration value or key
  Io,         // output could not be written
  Protocol,   // request that can never produce a valid evaluation
  Contract,   // caller violated a documented precondition on values
  Numeric,    // non-finite intermediate
};

std::string_view to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace idf
