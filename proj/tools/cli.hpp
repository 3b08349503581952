#pragma once

#include <iosfwd>

#include "idf/error.hpp"

namespace idf::cli {

// Exit status for each error category; 0 is success, 1 an unexpected
// failure and 2 a usage error.
int exit_code(ErrorKind kind);

// Parses argv and runs one command. Never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace idf::cli
