#include <fstream>
#include <set>
#include <sstream>

#include "cascade/cli.hpp"

namespace cascade::cli {

namespace {

const std::set<std::string> kManifestKeys = {"flair", "t1", "t1c", "t2", "label"};

}  // namespace

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::filesystem::path& base) {
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    ManifestEntry e;
    if (!(fields >> e.scan_id)) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    if (!ids.insert(e.scan_id).second) throw Error(Errc::SpecMismatch, where + ": duplicate scan_id " + e.scan_id);
    std::string item;
    while (fields >> item) {
      const auto eq = item.find('=');
      if (eq == std::string::npos) throw Error(Errc::SpecMismatch, where + ": expected key=path, got '" + item + "'");
      const std::string key = item.substr(0, eq);
      if (!kManifestKeys.count(key)) throw Error(Errc::SpecMismatch, where + ": unknown key '" + key + "'");
      if (e.files.count(key)) throw Error(Errc::SpecMismatch, where + ": duplicate key '" + key + "'");
      std::filesystem::path p = item.substr(eq + 1);
      if (p.is_relative()) p = base / p;
      if (!std::filesystem::is_regular_file(p)) {
        throw Error(Errc::IoFailure, where + ": " + key + " file does not exist: " + p.string());
      }
      e.files[key] = p;
    }
    if (e.files.empty()) throw Error(Errc::SpecMismatch, where + ": scan " + e.scan_id + " lists no files");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot read manifest " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_manifest(text.str(), path.parent_path());
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoFailure, "cannot write manifest " + path.string());
  const auto base = path.parent_path();
  for (const auto& e : entries) {
    out << e.scan_id;
    for (const char* key : {"flair", "t1", "t1c", "t2", "label"}) {
      const auto it = e.files.find(key);
      if (it == e.files.end()) continue;
      auto rel = it->second.lexically_relative(base.empty() ? "." : base);
      out << ' ' << key << '=' << (rel.empty() ? it->second : rel).generic_string();
    }
    out << '\n';
  }
  if (!out) throw Error(Errc::IoFailure, "failed writing manifest " + path.string());
}

volcore::MultiModalScan load_scan(const ManifestEntry& entry) {
  volcore::MultiModalScan scan;
  scan.scan_id = entry.scan_id;
  for (std::size_t m = 0; m < 4; ++m) {
    const auto it = entry.files.find(volcore::kModalityNames[m]);
    if (it == entry.files.end()) {
      throw Error(Errc::SpecMismatch, entry.scan_id + ": manifest lacks modality " + volcore::kModalityNames[m]);
    }
    scan.modalities[m] = volcore::read_float_volume(it->second);
  }
  const auto label = entry.files.find("label");
  if (label != entry.files.end()) scan.labels = volcore::read_label_volume(label->second);
  scan.validate();
  return scan;
}

int exit_code_for(Errc code) {
  switch (code) {
    case Errc::ConfigInvalid:
      return 1;
    case Errc::NumericFailure:
      return 3;
    default:
      return 2;
  }
}

}  // namespace cascade::cli
