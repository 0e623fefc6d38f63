#include "cascade/error.hpp"

namespace cascade {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedData: return "TruncatedData";
    case Errc::UnsupportedDtype: return "UnsupportedDtype";
    case Errc::IoFailure: return "IoFailure";
    case Errc::IllegalLabel: return "IllegalLabel";
    case Errc::DegenerateBox: return "DegenerateBox";
    case Errc::WindowLargerThanImage: return "WindowLargerThanImage";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::LabelOutOfRange: return "LabelOutOfRange";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NoDetection: return "NoDetection";
    case Errc::CheckpointMismatch: return "CheckpointMismatch";
    case Errc::DimsMismatch: return "DimsMismatch";
    case Errc::EmptySurface: return "EmptySurface";
    case Errc::SpecMismatch: return "SpecMismatch";
    case Errc::MissingLabels: return "MissingLabels";
    case Errc::ScanIdMismatch: return "ScanIdMismatch";
    case Errc::NumericFailure: return "NumericFailure";
  }
  return "Unknown";
}

}  // namespace cascade
