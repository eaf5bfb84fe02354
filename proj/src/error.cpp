#include "dynsfm/error.hpp"

namespace dynsfm {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShapeMismatch: return "shape mismatch";
    case ErrorKind::kNonFinite: return "non-finite value";
    case ErrorKind::kDegenerate: return "degenerate input";
    case ErrorKind::kInvalidArgument: return "invalid argument";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "i/o";
    case ErrorKind::kConfig: return "configuration";
    case ErrorKind::kNumerical: return "numerical";
    case ErrorKind::kData: return "data";
  }
  return "unknown";
}

}  // namespace dynsfm
