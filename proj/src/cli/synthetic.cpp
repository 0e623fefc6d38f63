#include <cmath>
#include <cstdio>
#include <random>

#include "cascade/synthetic.hpp"

namespace cascade::synthetic {

namespace {

// Mean intensity per tissue (background, brain, edema, enhancing, core) for
// flair, t1, t1c, t2.
constexpr double kTissue[4][5] = {
    {0, 100, 200, 180, 160},
    {0, 100, 80, 90, 50},
    {0, 100, 90, 220, 60},
    {0, 100, 180, 150, 220},
};

}  // namespace

volcore::MultiModalScan make_scan(const std::string& scan_id, const SyntheticOptions& opts, std::uint64_t seed) {
  if (!(opts.radius_min > 1.0 && opts.radius_max >= opts.radius_min)) {
    throw Error(Errc::ConfigInvalid, "synthetic radius range must satisfy 1 < min <= max");
  }
  const auto& d = opts.dims;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double cx = 0.5 * (d.nx - 1), cy = 0.5 * (d.ny - 1), cz = 0.5 * (d.nz - 1);
  const double ax = 0.42 * d.nx * (0.95 + 0.05 * unit(rng));
  const double ay = 0.45 * d.ny * (0.95 + 0.05 * unit(rng));
  const double az = 0.40 * d.nz * (0.95 + 0.05 * unit(rng));

  const double radius = opts.radius_min + (opts.radius_max - opts.radius_min) * unit(rng);
  const double r_et = 0.6 * radius, r_core = 0.35 * radius;
  // Tumour centre drawn inside the brain, shrunk so the edema stays inside it.
  double tx = cx, ty = cy, tz = cz;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const double px = cx + (2 * unit(rng) - 1) * (ax - radius);
    const double py = cy + (2 * unit(rng) - 1) * (ay - radius);
    const double pz = cz + (2 * unit(rng) - 1) * (az - radius);
    const double e = std::pow((px - cx) / (ax - radius), 2) + std::pow((py - cy) / (ay - radius), 2) +
                     std::pow((pz - cz) / (az - radius), 2);
    if (e <= 1.0) {
      tx = px, ty = py, tz = pz;
      break;
    }
  }

  volcore::MultiModalScan scan;
  scan.scan_id = scan_id;
  volcore::LabelVolume labels(d, opts.spacing);
  std::vector<std::uint8_t> tissue(d.count(), 0);
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t i = labels.index(x, y, z);
        const double e = std::pow((x - cx) / ax, 2) + std::pow((y - cy) / ay, 2) + std::pow((z - cz) / az, 2);
        if (e > 1.0) continue;
        tissue[i] = 1;
        const double r = std::sqrt((x - tx) * (x - tx) + (y - ty) * (y - ty) + (z - tz) * (z - tz));
        if (r <= r_core) {
          labels.data()[i] = 1;
          tissue[i] = 4;
        } else if (r <= r_et) {
          labels.data()[i] = 4;
          tissue[i] = 3;
        } else if (r <= radius) {
          labels.data()[i] = 2;
          tissue[i] = 2;
        }
      }

  std::normal_distribution<double> noise(0.0, opts.noise);
  for (std::size_t m = 0; m < 4; ++m) {
    volcore::FloatVolume vol(d, opts.spacing);
    for (std::size_t i = 0; i < d.count(); ++i) {
      const int t = tissue[i];
      double v = kTissue[m][t];
      if (t >= 2) v = kTissue[m][1] + opts.contrast * (kTissue[m][t] - kTissue[m][1]);
      vol.data()[i] = static_cast<float>(v + (t ? noise(rng) : 0.0));
    }
    scan.modalities[m] = std::move(vol);
  }
  scan.labels = std::move(labels);
  return scan;
}

std::vector<volcore::MultiModalScan> make_dataset(const std::string& prefix, std::size_t count,
                                                  const SyntheticOptions& opts, std::uint64_t seed) {
  std::vector<volcore::MultiModalScan> out;
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  
  std::vector<std::uint32_t> raw(2 * count);
  seq.generate(raw.begin(), raw.end());
  for (std::size_t i = 0; i < count; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "%03zu", i);
    out.push_back(make_scan(prefix + id, opts, (static_cast<std::uint64_t>(raw[2 * i]) << 32) | raw[2 * i + 1]));
  }
  return out;
}

}  // namespace cascade::synthetic
