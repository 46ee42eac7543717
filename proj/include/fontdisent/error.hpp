#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fontdisent {

enum class ErrorKind {
  UnparsableFont,
  MissingGlyph,
  EmptySplit,
  InsufficientFonts,
  UnknownFont,
  ShapeMismatch,
  InvalidDistribution,
  DivergedLoss,
  MissingAverages,
  DegenerateInput,
  NoData,
  CorruptFile,
  InsufficientData,
  SameFont,
  MissingContentRows,
  EmptyPointSet,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the toolkit carries a kind so callers (the CLI in
/// particular) can map it to an exit status without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// True for errors caused by bad user input rather than a defect.
bool is_user_error(ErrorKind kind);

}  // namespace fontdisent
