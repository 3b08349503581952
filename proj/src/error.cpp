#include "idf/error.hpp"

namespace idf {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Ingestion: return "ingestion";
    case ErrorKind::Format: return "format";
    case ErrorKind::Parameter: return "parameter";
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::State: return "state";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::Protocol: return "protocol";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace idf
