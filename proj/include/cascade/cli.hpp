#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cascade/segarch.hpp"
#include "cascade/segmetrics.hpp"

namespace cascade::cli {

/// Every tunable of a run. Loaded from `key = value` text; unknown keys and
/// malformed values are rejected with ConfigInvalid.
struct RunConfig {
  segarch::CascadeConfig cascade;

  double lr = 0.01;
  double momentum = 0.9;
  std::size_t iterations = 300;
  std::size_t batch = 2;
  double dice_epsilon = autonet::kDefaultDiceEpsilon;

  double detector_lr = 0.01;
  std::size_t detector_iterations = 300;
  std::size_t detector_batch = 8;
  /// "oracle" or "detector" (needs `detector_checkpoint`).
  std::string proposal_source = "oracle";
  std::string detector_checkpoint;

  std::optional<double> hausdorff_percentile;
  std::uint64_t seed = 0;

  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
/// Canonical `key = value` listing of every key, sorted by key.
std::string format_config(const RunConfig& cfg);
std::map<std::string, std::string> config_values(const RunConfig& cfg);
std::vector<std::string> config_keys();

struct ManifestEntry {
  std::string scan_id;
  std::map<std::string, std::filesystem::path> files;  // flair, t1, t1c, t2, label
};

/// One scan per line: `scan_id key=path ...` with keys flair, t1, t1c, t2,
/// label. Relative paths resolve against the manifest's directory; every
/// referenced file must exist.
std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::filesystem::path& base);
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

/// Reads the four modalities and, when listed, the labels.
volcore::MultiModalScan load_scan(const ManifestEntry& entry);

/// Process exit code for a failure kind: 1 usage/config, 2 data, 3 numeric.
int exit_code_for(Errc code);

/// Runs the command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cascade::cli
