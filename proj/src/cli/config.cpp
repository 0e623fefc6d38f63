#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>

#include "cascade/cli.hpp"

namespace cascade::cli {

namespace {

[[noreturn]] void invalid(const std::string& key, const std::string& value, const std::string& why) {
  throw Error(Errc::ConfigInvalid, "key '" + key + "' value '" + value + "': " + why);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

template <class I>
I to_int(const std::string& key, const std::string& v) {
  I out{};
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end) invalid(key, v, "expected an integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || ptr != end || !std::isfinite(out)) invalid(key, v, "expected a finite number");
  return out;
}

template <class I>
std::vector<I> to_int_list(const std::string& key, const std::string& v) {
  std::vector<I> out;
  for (const auto& item : split(v, ',')) out.push_back(to_int<I>(key, item));
  if (out.empty()) invalid(key, v, "expected a comma separated list");
  return out;
}

template <class I, std::size_t N>
std::array<I, N> to_int_array(const std::string& key, const std::string& v, char sep = ',') {
  std::vector<I> out;
  for (const auto& item : split(v, sep)) out.push_back(to_int<I>(key, item));
  if (out.size() != N) invalid(key, v, "expected " + std::to_string(N) + " values");
  std::array<I, N> a{};
  std::copy(out.begin(), out.end(), a.begin());
  return a;
}

// Shortest text that reads back to the same double.
std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class C>
std::string join(const C& values, char sep = ',') {
  std::ostringstream out;
  bool first = true;
  for (const auto& v : values) {
    if (!first) out << sep;
    out << v;
    first = false;
  }
  return out.str();
}

struct Key {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::map<std::string, Key>& keys() {
  using K = std::string;
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> t;
    auto size_key = [&t](const K& name, auto field) {
      t[name] = {[name, field](RunConfig& c, const K& v) { field(c) = to_int<std::size_t>(name, v); },
                 [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
    };
    auto int_key = [&t](const K& name, auto field) {
      t[name] = {[name, field](RunConfig& c, const K& v) { field(c) = to_int<int>(name, v); },
                 [field](const RunConfig& c) { return std::to_string(field(const_cast<RunConfig&>(c))); }};
    };
    auto real_key = [&t](const K& name, auto field) {
      t[name] = {[name, field](RunConfig& c, const K& v) { field(c) = to_double(name, v); },
                 [field](const RunConfig& c) { return num(field(const_cast<RunConfig&>(c))); }};
    };

    int_key("K", [](RunConfig& c) -> int& { return c.cascade.stride; });
    int_key("min_proposals", [](RunConfig& c) -> int& { return c.cascade.min_proposals; });
    int_key("proposals_per_window", [](RunConfig& c) -> int& { return c.cascade.proposals_per_window; });
    real_key("iou_threshold", [](RunConfig& c) -> double& { return c.cascade.iou_threshold; });
    int_key("f_offset", [](RunConfig& c) -> int& { return c.cascade.f_offset; });
    int_key("box_jitter", [](RunConfig& c) -> int& { return c.cascade.box_jitter; });
    size_key("seg_samples_per_scan", [](RunConfig& c) -> std::size_t& { return c.cascade.seg_samples_per_scan; });
    int_key("background_slice_stride", [](RunConfig& c) -> int& { return c.cascade.background_slice_stride; });
    int_key("chip_halo", [](RunConfig& c) -> int& { return c.cascade.chip_halo; });

    t["patch_dims"] = {[](RunConfig& c, const K& v) {
                    const auto a = to_int_array<std::size_t, 3>("patch_dims", v, 'x');
                    c.cascade.seg.patch = {a[0], a[1], a[2]};
                  },
                  [](const RunConfig& c) {
                    const auto& p = c.cascade.seg.patch;
                    return join(std::array<std::size_t, 3>{p.nx, p.ny, p.nz}, 'x');
                  }};
    t["window_size"] = {[](RunConfig& c, const K& v) {
                     const auto a = to_int_array<int, 2>("window_size", v, 'x');
                     c.cascade.window = {a[0], a[1]};
                   },
                   [](const RunConfig& c) {
                     return std::to_string(c.cascade.window.w) + "x" + std::to_string(c.cascade.window.h);
                   }};
    t["scales"] = {[](RunConfig& c, const K& v) {
                     c.cascade.scales.clear();
                     for (const auto& s : split(v, ',')) c.cascade.scales.push_back(to_double("scales", s));
                   },
                   [](const RunConfig& c) {
                     std::vector<std::string> s;
                     for (double f : c.cascade.scales) s.push_back(num(f));
                     return join(s);
                   }};
    t["channels"] = {[](RunConfig& c, const K& v) { c.cascade.seg.channels = to_int_array<std::size_t, 4>("channels", v); },
                     [](const RunConfig& c) { return join(c.cascade.seg.channels); }};
    t["dilations"] = {[](RunConfig& c, const K& v) { c.cascade.seg.dilations = to_int_array<std::size_t, 2>("dilations", v); },
                      [](const RunConfig& c) { return join(c.cascade.seg.dilations); }};
    size_key("atrous_kernel", [](RunConfig& c) -> std::size_t& { return c.cascade.seg.atrous_kernel; });
    size_key("vanilla_kernel", [](RunConfig& c) -> std::size_t& { return c.cascade.seg.vanilla_kernel; });
    size_key("convs_per_stage", [](RunConfig& c) -> std::size_t& { return c.cascade.seg.convs_per_stage; });
    size_key("norm_groups", [](RunConfig& c) -> std::size_t& { return c.cascade.seg.norm_groups; });

    t["detector_modalities"] = {[](RunConfig& c, const K& v) {
                                  auto& mods = c.cascade.detector.modalities;
                                  mods.clear();
                                  for (const auto& name : split(v, ',')) {
                                    const auto it = std::find(volcore::kModalityNames.begin(),
                                                              volcore::kModalityNames.end(), name);
                                    if (it == volcore::kModalityNames.end()) {
                                      invalid("detector_modalities", v, "unknown modality '" + name + "'");
                                    }
                                    mods.push_back(
                                        static_cast<volcore::Modality>(it - volcore::kModalityNames.begin()));
                                  }
                                },
                                [](const RunConfig& c) {
                                  std::vector<std::string> s;
                                  for (auto m : c.cascade.detector.modalities)
                                    s.push_back(volcore::kModalityNames[static_cast<int>(m)]);
                                  return join(s);
                                }};
    t["trunk_channels"] = {[](RunConfig& c, const K& v) {
                             c.cascade.detector.trunk_channels = to_int_list<std::size_t>("trunk_channels", v);
                           },
                           [](const RunConfig& c) { return join(c.cascade.detector.trunk_channels); }};
    t["trunk_dilations"] = {[](RunConfig& c, const K& v) {
                              c.cascade.detector.trunk_dilations = to_int_list<std::size_t>("trunk_dilations", v);
                            },
                            [](const RunConfig& c) { return join(c.cascade.detector.trunk_dilations); }};
    t["anchor_sizes"] = {[](RunConfig& c, const K& v) {
                           c.cascade.detector.anchor_sizes = to_int_list<int>("anchor_sizes", v);
                         },
                         [](const RunConfig& c) { return join(c.cascade.detector.anchor_sizes); }};
    real_key("score_floor", [](RunConfig& c) -> double& { return c.cascade.detector.score_floor; });
    real_key("regression_weight", [](RunConfig& c) -> double& { return c.cascade.detector.regression_weight; });

    real_key("lr", [](RunConfig& c) -> double& { return c.lr; });
    real_key("momentum", [](RunConfig& c) -> double& { return c.momentum; });
    size_key("iterations", [](RunConfig& c) -> std::size_t& { return c.iterations; });
    size_key("batch", [](RunConfig& c) -> std::size_t& { return c.batch; });
    real_key("epsilon", [](RunConfig& c) -> double& { return c.dice_epsilon; });
    real_key("detector_lr", [](RunConfig& c) -> double& { return c.detector_lr; });
    size_key("detector_iterations", [](RunConfig& c) -> std::size_t& { return c.detector_iterations; });
    size_key("detector_batch", [](RunConfig& c) -> std::size_t& { return c.detector_batch; });
    t["proposal_source"] = {[](RunConfig& c, const K& v) { c.proposal_source = v; },
                            [](const RunConfig& c) { return c.proposal_source; }};
    t["detector_checkpoint"] = {[](RunConfig& c, const K& v) { c.detector_checkpoint = v; },
                                [](const RunConfig& c) { return c.detector_checkpoint; }};
    t["hausdorff_percentile"] = {[](RunConfig& c, const K& v) {
                                   if (v == "none") c.hausdorff_percentile.reset();
                                   else c.hausdorff_percentile = to_double("hausdorff_percentile", v);
                                 },
                                 [](const RunConfig& c) {
                                   return c.hausdorff_percentile ? num(*c.hausdorff_percentile) : std::string("none");
                                 }};
    t["seed"] = {[](RunConfig& c, const K& v) { c.seed = to_int<std::uint64_t>("seed", v); },
                 [](const RunConfig& c) { return std::to_string(c.seed); }};
    return t;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  auto bad = [](const std::string& why) { throw Error(Errc::ConfigInvalid, why); };
  const auto& c = cascade;
  if (c.stride < 1) bad("stride must be >= 1");
  if (c.min_proposals < 1) bad("min_proposals must be >= 1");
  if (c.proposals_per_window < 1) bad("proposals_per_window must be >= 1");
  if (!(c.iou_threshold > 0.0 && c.iou_threshold < 1.0)) bad("iou_threshold must lie in (0, 1)");
  if (c.f_offset < 0) bad("f_offset must be >= 0");
  if (c.box_jitter < 0) bad("box_jitter must be >= 0");
  if (c.seg_samples_per_scan < 1) bad("seg_samples_per_scan must be >= 1");
  if (c.background_slice_stride < 1) bad("background_slice_stride must be >= 1");
  if (c.chip_halo < 0) bad("chip_halo must be >= 0");
  if (c.scales.empty()) bad("scales must not be empty");
  for (double s : c.scales)
    if (!(s > 0.0)) bad("scales must be positive");
  if (c.window.w < 1 || c.window.h < 1) bad("window extents must be positive");
  c.seg.validate();
  c.detector.validate();
  for (double v : {lr, detector_lr})
    if (!(v >= 0.0)) bad("learning rates must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (batch < 1 || detector_batch < 1) bad("batch sizes must be >= 1");
  if (!(dice_epsilon >= 0.0)) bad("dice_epsilon must be >= 0");
  if (proposal_source != "oracle" && proposal_source != "detector") {
    bad("proposal_source must be 'oracle' or 'detector'");
  }
  if (proposal_source == "detector" && detector_checkpoint.empty()) {
    bad("proposal_source=detector needs detector_checkpoint");
  }
  if (hausdorff_percentile && !(*hausdorff_percentile >= 0.0 && *hausdorff_percentile <= 100.0)) {
    bad("hausdorff_percentile must lie in [0, 100] or be 'none'");
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(Errc::ConfigInvalid, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    const auto it = keys().find(key);
    if (it == keys().end()) throw Error(Errc::ConfigInvalid, "line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (seen.count(key)) throw Error(Errc::ConfigInvalid, "line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    it->second.set(cfg, value);
  }
  cfg.cascade.seg.batch = cfg.batch;
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::ConfigInvalid, "cannot read config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::map<std::string, std::string> config_values(const RunConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const auto& [name, key] : keys()) out[name] = key.get(cfg);
  return out;
}

std::string format_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, value] : config_values(cfg)) out += name + " = " + value + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& kv : keys()) out.push_back(kv.first);
  return out;
}

}  // namespace cascade::cli
