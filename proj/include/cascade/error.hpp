#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace cascade {

enum class Errc {
  BadMagic,
  TruncatedData,
  UnsupportedDtype,
  IoFailure,
  IllegalLabel,
  DegenerateBox,
  WindowLargerThanImage,
  ShapeMismatch,
  LabelOutOfRange,
  ConfigInvalid,
  EmptyDataset,
  NoDetection,
  CheckpointMismatch,
  DimsMismatch,
  EmptySurface,
  SpecMismatch,
  MissingLabels,
  ScanIdMismatch,
  NumericFailure,
};

std::string_view errc_name(Errc code);

/// Error carrying one of the documented failure kinds.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace cascade
