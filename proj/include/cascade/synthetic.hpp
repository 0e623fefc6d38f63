#pragma once

#include <cstdint>
#include <vector>

#include "cascade/volcore.hpp"

namespace cascade::synthetic {

/// Nested-sphere tumours inside an ellipsoidal brain: necrotic core (1),
/// enhancing shell (4) and surrounding edema (2).
struct SyntheticOptions {
  volcore::Dims dims{64, 64, 64};
  volcore::Spacing spacing{1.0f, 1.0f, 1.0f};
  double radius_min = 8.0;   // edema radius range in voxels
  double radius_max = 13.0;
  double contrast = 1.0;     // scales every tumour/brain intensity difference
  double noise = 5.0;        // gaussian noise sigma
};

volcore::MultiModalScan make_scan(const std::string& scan_id, const SyntheticOptions& opts, std::uint64_t seed);

/// `count` scans with ids `<prefix>000`, `<prefix>001`, ...
std::vector<volcore::MultiModalScan> make_dataset(const std::string& prefix, std::size_t count,
                                                  const SyntheticOptions& opts, std::uint64_t seed);

}  // namespace cascade::synthetic
