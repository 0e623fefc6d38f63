#include <cstring>
#include <algorithm>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "cascade/cli.hpp"
#include "cascade/synthetic.hpp"

namespace cascade::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  bool deterministic = false;
  std::size_t jobs = 1;
  std::string out = ".";
  std::ostream* log = nullptr;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? parse_config("") : load_config(config_path);
    if (seed_given) cfg.seed = seed;
    return cfg;
  }
  fs::path out_dir() const {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw Error(Errc::IoFailure, "cannot create output directory " + out + ": " + ec.message());
    return out;
  }
  void warn(Errc code, const std::string& msg) const { *log << "warning: " << errc_name(code) << ": " << msg << '\n'; }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
}

std::vector<volcore::MultiModalScan> load_scans(const std::vector<ManifestEntry>& entries) {
  std::vector<volcore::MultiModalScan> out;
  for (const auto& e : entries) out.push_back(load_scan(e));
  return out;
}

std::vector<volcore::MultiModalScan> load_labeled(const fs::path& manifest) {
  auto entries = load_manifest(manifest);
  if (entries.empty()) throw Error(Errc::EmptyDataset, "manifest " + manifest.string() + " lists no scans");
  for (const auto& e : entries)
    if (!e.files.count("label")) throw Error(Errc::MissingLabels, e.scan_id + ": manifest lists no label volume");
  return load_scans(entries);
}

// Runs fn(i, worker) for i in [0, n) on up to `jobs` threads; callers keep
// results indexed by i so merge order never depends on scheduling.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t, std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, 0);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += jobs) {
        try {
          fn(i, w);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

json dice_json(const std::array<double, 3>& d) { return {{"WT", d[0]}, {"TC", d[1]}, {"ET", d[2]}}; }

json report_json(const segarch::TrainReport& r, const RunConfig& cfg, bool deterministic) {
  json j;
  j["kind"] = r.kind;
  j["seed"] = r.seed;
  j["iterations"] = r.loss_curve.size();
  j["loss_curve"] = r.loss_curve;
  if (r.kind == "seg") {
    j["train_dice"] = dice_json(r.train_dice);
    j["val_dice"] = r.val_dice ? dice_json(*r.val_dice) : json(nullptr);
  } else {
    j["train_accuracy"] = r.train_accuracy;
  }
  j["wall_clock_s"] = deterministic ? json(nullptr) : json(r.wall_clock_s);
  j["config"] = config_values(cfg);
  return j;
}

// ---------------------------------------------------------------------------

struct ConvertSpec {
  fs::path raw;
  volcore::Dims dims;
  volcore::Dtype dtype = volcore::Dtype::float32;
  volcore::Spacing spacing;
  std::string output, scan_id, modality;
};

ConvertSpec parse_convert_spec(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot read convert spec " + path.string());
  ConvertSpec s;
  bool have_dims = false, have_raw = false;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos) throw Error(Errc::SpecMismatch, "convert spec line lacks '=': " + line);
    auto clean = [](std::string v) {
      v.erase(0, v.find_first_not_of(" \t\r"));
      v.erase(v.find_last_not_of(" \t\r") + 1);
      return v;
    };
    const std::string key = clean(line.substr(0, eq)), value = clean(line.substr(eq + 1));
    std::istringstream v(value);
    char sep1 = 0, sep2 = 0;
    if (key == "raw") {
      s.raw = value;
      if (s.raw.is_relative()) s.raw = path.parent_path() / s.raw;
      have_raw = true;
    } else if (key == "dims") {
      if (!(v >> s.dims.nx >> sep1 >> s.dims.ny >> sep2 >> s.dims.nz) || sep1 != 'x' || sep2 != 'x' || !v.eof()) {
        throw Error(Errc::SpecMismatch, "dims must look like XxYxZ: " + value);
      }
      have_dims = true;
    } else if (key == "dtype") {
      if (value == "f32") s.dtype = volcore::Dtype::float32;
      else if (value == "u8") s.dtype = volcore::Dtype::uint8;
      else throw Error(Errc::SpecMismatch, "dtype must be f32 or u8: " + value);
    } else if (key == "spacing") {
      if (!(v >> s.spacing.sx >> sep1 >> s.spacing.sy >> sep2 >> s.spacing.sz) || sep1 != ',' || sep2 != ',' ||
          !v.eof()) {
        throw Error(Errc::SpecMismatch, "spacing must look like a,b,c: " + value);
      }
    } else if (key == "output") {
      s.output = value;
    } else if (key == "scan_id") {
      s.scan_id = value;
    } else if (key == "modality") {
      s.modality = value;
    } else {
      throw Error(Errc::SpecMismatch, "unknown convert spec key '" + key + "'");
    }
  }
  if (!have_raw || !have_dims) throw Error(Errc::SpecMismatch, "convert spec needs raw and dims");
  if (s.dims.count() == 0) throw Error(Errc::SpecMismatch, "dims must be positive");
  if (!(s.spacing.sx > 0 && s.spacing.sy > 0 && s.spacing.sz > 0)) {
    throw Error(Errc::SpecMismatch, "spacing must be positive");
  }
  if (s.output.empty()) s.output = s.raw.stem().string() + ".vvl";
  return s;
}

int cmd_convert(const Globals& g, const std::vector<std::string>& specs, std::ostream& out) {
  const fs::path dir = g.out_dir();
  for (const auto& spec_path : specs) {
    const auto s = parse_convert_spec(spec_path);
    std::ifstream in(s.raw, std::ios::binary);
    if (!in) throw Error(Errc::IoFailure, "cannot read raw blob " + s.raw.string());
    const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t elem = s.dtype == volcore::Dtype::float32 ? 4 : 1;
    if (blob.size() != s.dims.count() * elem) {
      throw Error(Errc::SpecMismatch, s.raw.string() + ": blob holds " + std::to_string(blob.size()) +
                                          " bytes, declared dims need " + std::to_string(s.dims.count() * elem));
    }
    const fs::path target = dir / s.output;
    if (s.dtype == volcore::Dtype::float32) {
      std::vector<float> data(s.dims.count());
      for (std::size_t i = 0; i < data.size(); ++i) {
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(blob[4 * i + b])) << (8 * b);
        std::memcpy(&data[i], &bits, 4);
      }
      volcore::write_volume(volcore::FloatVolume(s.dims, s.spacing, std::move(data)), target);
    } else {
      std::vector<std::uint8_t> data(blob.begin(), blob.end());
      volcore::write_volume(volcore::LabelVolume(s.dims, s.spacing, std::move(data)), target);
    }
    if (!s.scan_id.empty() || !s.modality.empty()) volcore::write_meta(target, {s.scan_id, s.modality});
    out << target.generic_string() << '\n';
  }
  return 0;
}

segarch::ProposalSource make_source(const RunConfig& cfg, std::optional<segarch::Detector<float>>& holder) {
  if (cfg.proposal_source == "detector") {
    const auto ckpt = autonet::load_checkpoint(cfg.detector_checkpoint);
    holder.emplace(segarch::detector_config_from_meta(ckpt.meta), 0);
    holder->load(ckpt);
    return segarch::detector_proposal_source(*holder, cfg.cascade.proposals_per_window);
  }
  return segarch::oracle_proposal_source(cfg.cascade.proposals_per_window);
}

int cmd_windows(const Globals& g, const std::string& manifest, std::ostream& out) {
  const RunConfig cfg = g.load();
  const auto entries = load_manifest(manifest);
  const fs::path dir = g.out_dir();
  std::optional<segarch::Detector<float>> holder;
  const auto source = make_source(cfg, holder);
  for (const auto& e : entries) {
    if (!e.files.count("label")) throw Error(Errc::MissingLabels, e.scan_id + ": manifest lists no label volume");
    const auto scan = load_scan(e);
    const auto windows = segarch::build_windows(scan, cfg.cascade, source, cfg.seed);
    std::vector<ctxwin::Record> wrec, prec;
    std::size_t positives = 0;
    for (const auto& sw : windows) {
      for (const auto& w : sw.positives) wrec.push_back({w.scale_id, "positive", w.rect, 1.0, sw.slice_z});
      for (const auto& w : sw.negatives) wrec.push_back({w.scale_id, "negative", w.rect, 0.0, sw.slice_z});
      for (const auto& p : sw.proposals) prec.push_back({p.scale_id, "proposal", p.rect, p.score, p.slice_z});
      positives += sw.positives.size();
    }
    if (positives == 0) g.warn(Errc::MissingLabels, e.scan_id + ": labels are empty, no positive windows");
    std::ostringstream ws, ps;
    ctxwin::write_records(ws, wrec);
    ctxwin::write_records(ps, prec);
    write_text(dir / (e.scan_id + ".windows"), ws.str());
    write_text(dir / (e.scan_id + ".proposals"), ps.str());
    out << e.scan_id << ' ' << positives << " positive " << (wrec.size() - positives) << " negative\n";
  }
  return 0;
}

int cmd_train(const Globals& g, const std::string& which, const std::string& manifest, const std::string& val_manifest,
              std::ostream& out) {
  const RunConfig cfg = g.load();
  const auto scans = load_labeled(manifest);
  const fs::path dir = g.out_dir();
  segarch::TrainReport report;
  segarch::TrainOptions opts;
  opts.momentum = cfg.momentum;
  opts.seed = cfg.seed;
  opts.epsilon = cfg.dice_epsilon;
  if (which == "detector") {
    std::optional<segarch::Detector<float>> holder;
    const auto source = make_source(cfg, holder);
    const auto data = segarch::build_detector_dataset(scans, cfg.cascade, source, cfg.seed);
    opts.lr = cfg.detector_lr;
    opts.iterations = cfg.detector_iterations;
    opts.batch = cfg.detector_batch;
    auto det = segarch::train_detector(data, cfg.cascade.detector, opts, report);
    autonet::save_checkpoint(dir / "detector.ckpt", det.to_checkpoint());
    write_text(dir / "detector_report.json", report_json(report, cfg, g.deterministic).dump(2) + "\n");
    out << "detector: " << data.size() << " chips, final loss " << report.loss_curve.back() << '\n';
  } else {
    const auto data = segarch::build_seg_dataset(scans, cfg.cascade, cfg.seed);
    std::vector<segarch::SegSample> val;
    if (!val_manifest.empty()) val = segarch::build_seg_dataset(load_labeled(val_manifest), cfg.cascade, cfg.seed + 1);
    opts.lr = cfg.lr;
    opts.iterations = cfg.iterations;
    opts.batch = cfg.batch;
    auto net = segarch::train_seg(data, cfg.cascade.seg, opts, report, val.empty() ? nullptr : &val);
    autonet::save_checkpoint(dir / "seg.ckpt", net.to_checkpoint());
    write_text(dir / "seg_report.json", report_json(report, cfg, g.deterministic).dump(2) + "\n");
    out << "seg: " << data.size() << " patches, train WT dice " << report.train_dice[0] << '\n';
  }
  return 0;
}

json box_json(const volcore::Box3& b) {
  return {{"min", {b.min[0], b.min[1], b.min[2]}}, {"max", {b.max[0], b.max[1], b.max[2]}}};
}

int cmd_infer(const Globals& g, const std::string& manifest, const std::string& det_path, const std::string& seg_path,
              std::ostream& out) {
  const RunConfig cfg = g.load();
  const auto entries = load_manifest(manifest);
  const fs::path dir = g.out_dir();
  const auto det_ckpt = autonet::load_checkpoint(det_path);
  const auto seg_ckpt = autonet::load_checkpoint(seg_path);
  auto det_cfg = segarch::detector_config_from_meta(det_ckpt.meta);
  det_cfg.score_floor = cfg.cascade.detector.score_floor;
  segarch::Detector<float> det(det_cfg, 0);
  det.load(det_ckpt);
  segarch::SegNet<float> seg(segarch::segnet_config_from_meta(seg_ckpt.meta), 0);
  seg.load(seg_ckpt);
  segarch::CascadeConfig cc = cfg.cascade;
  cc.detector = det_cfg;
  cc.seg = seg.config();

  const std::size_t jobs = std::max<std::size_t>(1, std::min(g.jobs, entries.size()));
  std::vector<segarch::Detector<float>> dets(jobs, det);
  std::vector<segarch::SegNet<float>> segs(jobs, seg);
  std::vector<segarch::InferenceInfo> infos(entries.size());
  std::vector<ManifestEntry> preds(entries.size());
  parallel_for(entries.size(), jobs, [&](std::size_t i, std::size_t w) {
    const auto scan = load_scan(entries[i]);
    const auto labels = segarch::infer_cascade(scan, dets[w], segs[w], cc, &infos[i]);
    const fs::path target = dir / (entries[i].scan_id + "_pred.vvl");
    volcore::write_volume(labels, target);
    preds[i] = {entries[i].scan_id, {{"label", target}}};
  });

  json info = json::object();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!infos[i].detected) {
      g.warn(Errc::NoDetection, entries[i].scan_id + ": no slice passed the score floor, segmented the whole volume");
    }
    info[entries[i].scan_id] = {{"detected", infos[i].detected},
                                {"box", box_json(infos[i].box)},
                                {"grown", box_json(infos[i].grown)}};
  }
  write_manifest(dir / "predictions.manifest", preds);
  write_text(dir / "inference.json", info.dump(2) + "\n");
  out << "inferred " << entries.size() << " scans\n";
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& pred_manifest, const std::string& truth_manifest,
                 std::ostream& out) {
  const RunConfig cfg = g.load();
  auto preds = load_manifest(pred_manifest);
  auto truths = load_manifest(truth_manifest);
  auto by_id = [](const ManifestEntry& a, const ManifestEntry& b) { return a.scan_id < b.scan_id; };
  std::sort(preds.begin(), preds.end(), by_id);
  std::sort(truths.begin(), truths.end(), by_id);
  std::vector<std::string> pid, tid;
  for (const auto& e : preds) pid.push_back(e.scan_id);
  for (const auto& e : truths) tid.push_back(e.scan_id);
  if (pid != tid) {
    std::vector<std::string> diff;
    std::set_symmetric_difference(pid.begin(), pid.end(), tid.begin(), tid.end(), std::back_inserter(diff));
    std::string list;
    for (const auto& d : diff) list += (list.empty() ? "" : ",") + d;
    throw Error(Errc::ScanIdMismatch, "prediction and truth manifests differ in scan ids: " + list);
  }
  for (const auto* set : {&preds, &truths})
    for (const auto& e : *set)
      if (!e.files.count("label")) throw Error(Errc::MissingLabels, e.scan_id + ": manifest lists no label volume");

  const fs::path dir = g.out_dir();
  segmetrics::EvalOptions opts;
  opts.hausdorff_percentile = cfg.hausdorff_percentile;
  std::vector<segmetrics::ScanReport> reports(preds.size());
  parallel_for(preds.size(), g.jobs, [&](std::size_t i, std::size_t) {
    const auto pred = volcore::read_label_volume(preds[i].files.at("label"));
    const auto truth = volcore::read_label_volume(truths[i].files.at("label"));
    reports[i] = segmetrics::evaluate_scan(preds[i].scan_id, pred, truth, truth.spacing(), opts);
  });
  for (const auto& r : reports) write_text(dir / (r.scan_id + "_metrics.json"), segmetrics::to_json(r).dump(2) + "\n");
  write_text(dir / "aggregate.csv", segmetrics::aggregate_csv(reports));
  out << "evaluated " << reports.size() << " scans\n";
  return 0;
}

struct SynthArgs {
  std::size_t count = 8;
  std::string prefix = "scan";
  std::size_t size = 64;
  double radius_min = 8.0, radius_max = 13.0, contrast = 1.0, noise = 5.0;
};

int cmd_make_synthetic(const Globals& g, const SynthArgs& a, std::ostream& out) {
  const RunConfig cfg = g.load();
  synthetic::SyntheticOptions opts;
  opts.dims = {a.size, a.size, a.size};
  opts.radius_min = a.radius_min;
  opts.radius_max = a.radius_max;
  opts.contrast = a.contrast;
  opts.noise = a.noise;
  const fs::path dir = g.out_dir();
  const auto scans = synthetic::make_dataset(a.prefix, a.count, opts, cfg.seed);
  std::vector<ManifestEntry> entries;
  for (const auto& s : scans) {
    ManifestEntry e{s.scan_id, {}};
    for (std::size_t m = 0; m < 4; ++m) {
      const fs::path p = dir / (s.scan_id + "_" + volcore::kModalityNames[m] + ".vvl");
      volcore::write_volume(s.modalities[m], p);
      e.files[volcore::kModalityNames[m]] = p;
    }
    const fs::path lp = dir / (s.scan_id + "_label.vvl");
    volcore::write_volume(*s.labels, lp);
    e.files["label"] = lp;
    entries.push_back(std::move(e));
  }
  write_manifest(dir / "manifest.txt", entries);
  out << "wrote " << scans.size() << " scans to " << dir.generic_string() << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cascaded brain tumour detection and segmentation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  g.log = &err;
  app.add_option("--config", g.config_path, "key = value run configuration");
  auto* seed_opt = app.add_option("--seed", g.seed, "random seed (overrides the config)");
  app.add_flag("--deterministic", g.deterministic, "omit wall-clock fields so outputs are byte-reproducible");
  app.add_option("--jobs", g.jobs, "parallel scans for infer/evaluate")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory");

  std::vector<std::string> specs;
  auto* convert = app.add_subcommand("convert", "raw little-endian blobs to VVL1 volumes");
  convert->add_option("specs", specs, "convert spec files")->required();

  std::string manifest, val_manifest, which, det_ckpt, seg_ckpt, pred_manifest, truth_manifest;
  auto* windows = app.add_subcommand("windows", "positive/negative context windows per scan");
  windows->add_option("--manifest", manifest)->required();

  auto* train = app.add_subcommand("train", "train the detector or the segmenter");
  train->add_option("which", which)->required()->check(CLI::IsMember({"detector", "seg"}));
  train->add_option("--manifest", manifest)->required();
  train->add_option("--val", val_manifest, "validation manifest (seg only)");

  auto* infer = app.add_subcommand("infer", "cascaded detection then segmentation");
  infer->add_option("--manifest", manifest)->required();
  infer->add_option("--detector", det_ckpt)->required();
  infer->add_option("--seg", seg_ckpt)->required();

  auto* evaluate = app.add_subcommand("evaluate", "per-scan metrics and aggregate table");
  evaluate->add_option("--pred", pred_manifest)->required();
  evaluate->add_option("--truth", truth_manifest)->required();

  SynthArgs synth;
  auto* make_synth = app.add_subcommand("make-synthetic", "sphere-tumour test data");
  make_synth->group("");
  make_synth->add_option("--count", synth.count)->check(CLI::PositiveNumber);
  make_synth->add_option("--prefix", synth.prefix);
  make_synth->add_option("--size", synth.size)->check(CLI::Range(16, 512));
  make_synth->add_option("--radius-min", synth.radius_min);
  make_synth->add_option("--radius-max", synth.radius_max);
  make_synth->add_option("--contrast", synth.contrast);
  make_synth->add_option("--noise", synth.noise)->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  g.seed_given = seed_opt->count() > 0;

  try {
    if (*convert) return cmd_convert(g, specs, out);
    if (*windows) return cmd_windows(g, manifest, out);
    if (*train) return cmd_train(g, which, manifest, val_manifest, out);
    if (*infer) return cmd_infer(g, manifest, det_ckpt, seg_ckpt, out);
    if (*evaluate) return cmd_evaluate(g, pred_manifest, truth_manifest, out);
    if (*make_synth) return cmd_make_synthetic(g, synth, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    err << "error: IoFailure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace cascade::cli
