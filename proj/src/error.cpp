#include "fontdisent/error.hpp"

namespace fontdisent {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnparsableFont: return "UnparsableFont";
    case ErrorKind::MissingGlyph: return "MissingGlyph";
    case ErrorKind::EmptySplit: return "EmptySplit";
    case ErrorKind::InsufficientFonts: return "InsufficientFonts";
    case ErrorKind::UnknownFont: return "UnknownFont";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidDistribution: return "InvalidDistribution";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::MissingAverages: return "MissingAverages";
    case ErrorKind::DegenerateInput: return "DegenerateInput";
    case ErrorKind::NoData: return "NoData";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::SameFont: return "SameFont";
    case ErrorKind::MissingContentRows: return "MissingContentRows";
    case ErrorKind::EmptyPointSet: return "EmptyPointSet";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::Io: return "Io";
  }
  return "Unknown";
}

bool is_user_error(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DivergedLoss:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::InvalidDistribution:
      return false;
    default:
      return true;
  }
}

}  // namespace fontdisent
