#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "cascade/segmetrics.hpp"
#include "support/oracles.hpp"

using namespace cascade;
using namespace cascade::segmetrics;
using volcore::Dims;
using volcore::LabelVolume;
using volcore::Spacing;

namespace {

LabelVolume mask(Dims d, std::initializer_list<std::array<int, 3>> on, Spacing sp = {}) {
  LabelVolume m(d, sp);
  for (const auto& p : on) m.at(p[0], p[1], p[2]) = 1;
  return m;
}

LabelVolume complement(const LabelVolume& m) {
  LabelVolume c = m;
  for (auto& v : c.data()) v = !v;
  return c;
}

std::set<std::array<int, 3>> as_set(const SurfaceSet& s) { return {s.voxels.begin(), s.voxels.end()}; }

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoFailure;
}

}  // namespace

TEST_CASE("confusion counts") {
  std::mt19937_64 rng(1);
  std::bernoulli_distribution b(0.4);
  LabelVolume t({4, 4, 4}, {});
  for (auto& v : t.data()) v = b(rng);
  const auto same = confusion_counts(t, t);
  CHECK(same.fp == 0);
  CHECK(same.fn == 0);
  const auto inv = confusion_counts(complement(t), t);
  CHECK(inv.tp == 0);
  CHECK(inv.tn == 0);
  for (int trial = 0; trial < 50; ++trial) {
    LabelVolume p({4, 4, 4}, {}), q({4, 4, 4}, {});
    for (auto& v : p.data()) v = b(rng);
    for (auto& v : q.data()) v = b(rng);
    const auto c = confusion_counts(p, q);
    const auto o = oracle::tally(p, q);
    CHECK(c.tp == o.tp);
    CHECK(c.fp == o.fp);
    CHECK(c.tn == o.tn);
    CHECK(c.fn == o.fn);
    CHECK(c.total() == 64);
  }
  CHECK(code_of([] { confusion_counts(LabelVolume({2, 2, 2}, {}), LabelVolume({2, 2, 3}, {})); }) ==
        Errc::DimsMismatch);
}

TEST_CASE("area metrics") {
  const Dims d{4, 1, 1};
  const auto two_a = mask(d, {{0, 0, 0}, {1, 0, 0}}), two_b = mask(d, {{1, 0, 0}, {2, 0, 0}});
  CHECK(dice(confusion_counts(two_a, two_b)) == 0.5);
  CHECK(dice(confusion_counts(two_a, two_a)) == 1.0);
  CHECK(dice(confusion_counts(mask(d, {{0, 0, 0}}), mask(d, {{3, 0, 0}}))) == 0.0);
  CHECK(dice(confusion_counts(mask(d, {}), mask(d, {}))) == 1.0);

  const auto truth = mask(d, {{1, 0, 0}});
  const auto super = mask(d, {{0, 0, 0}, {1, 0, 0}});
  CHECK(*sensitivity(confusion_counts(super, truth)) == 1.0);
  CHECK(*sensitivity(confusion_counts(mask(d, {}), truth)) == 0.0);
  CHECK_FALSE(sensitivity(confusion_counts(super, mask(d, {}))));
  CHECK(*specificity(confusion_counts(truth, truth)) == 1.0);
  CHECK(*specificity(confusion_counts(complement(mask(d, {})), truth)) == 0.0);
  CHECK_FALSE(specificity(confusion_counts(super, complement(mask(d, {})))));
  CHECK(*precision(confusion_counts(truth, super)) == 1.0);
  CHECK(*precision(confusion_counts(mask(d, {{3, 0, 0}}), truth)) == 0.0);
  CHECK_FALSE(precision(confusion_counts(mask(d, {}), truth)));

  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_mask({5, 4, 3}, rng), t = oracle::random_mask({5, 4, 3}, rng);
    const auto o = oracle::tally(p, t);
    const auto c = confusion_counts(p, t);
    CHECK(dice(c) == dice(confusion_counts(t, p)));
    if (o.tp + o.fn) CHECK(*sensitivity(c) == double(o.tp) / double(o.tp + o.fn));
    if (o.tn + o.fp) CHECK(*specificity(c) == double(o.tn) / double(o.tn + o.fp));
    if (o.tp + o.fp) CHECK(*precision(c) == double(o.tp) / double(o.tp + o.fp));
    const auto s = sensitivity(c), pr = precision(c);
    if (s && pr && *s + *pr > 0) CHECK(std::abs(dice(c) - 2 * *s * *pr / (*s + *pr)) < 1e-12);
  }
}

TEST_CASE("surface voxels") {
  const auto single = surface_voxels(mask({5, 5, 5}, {{2, 3, 1}}));
  REQUIRE(single.voxels.size() == 1);
  CHECK(single.voxels[0] == std::array<int, 3>{2, 3, 1});

  LabelVolume cube({5, 5, 5}, {});
  for (int z = 1; z <= 3; ++z)
    for (int y = 1; y <= 3; ++y)
      for (int x = 1; x <= 3; ++x) cube.at(x, y, z) = 1;
  const auto s = surface_voxels(cube);
  CHECK(s.voxels.size() == 26);
  CHECK(as_set(s).count({2, 2, 2}) == 0);
  CHECK(surface_voxels(LabelVolume({3, 3, 3}, {})).empty());
  // Touching the border counts as a background neighbour.
  CHECK(surface_voxels(complement(LabelVolume({3, 3, 3}, {}))).voxels.size() == 26);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto m = oracle::random_mask({7, 6, 5}, rng);
    const auto o = oracle::surface(m);
    CHECK(as_set(surface_voxels(m)) == std::set<std::array<int, 3>>(o.begin(), o.end()));
  }
}

TEST_CASE("distance metrics on tiny examples") {
  const auto a = surface_voxels(mask({4, 4, 4}, {{0, 0, 0}}));
  const auto b = surface_voxels(mask({4, 4, 4}, {{0, 0, 3}}));
  CHECK(hausdorff(a, a) == 0.0);
  CHECK(assd(a, a) == 0.0);
  CHECK(hausdorff(a, b) == 3.0);
  CHECK(assd(a, b) == 3.0);
  CHECK(hausdorff(a, b, std::nullopt, DistanceMethod::brute_force) == 3.0);

  const auto anis = surface_voxels(mask({4, 4, 4}, {{0, 0, 3}}, {1.f, 1.f, 2.5f}));
  const auto anis0 = surface_voxels(mask({4, 4, 4}, {{0, 0, 0}}, {1.f, 1.f, 2.5f}));
  CHECK(hausdorff(anis0, anis) == doctest::Approx(7.5));

  const SurfaceSet empty = surface_voxels(LabelVolume({4, 4, 4}, {}));
  CHECK(code_of([&] { hausdorff(a, empty); }) == Errc::EmptySurface);
  CHECK(code_of([&] { assd(empty, a); }) == Errc::EmptySurface);
}

TEST_CASE("distance transform agrees with brute force") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 60; ++trial) {
    const Dims d{std::size_t(3 + trial % 10), std::size_t(4 + trial % 7), std::size_t(2 + trial % 9)};
    const Spacing sp{1.0f + 0.5f * float(trial % 3), 1.0f, 0.75f + 0.25f * float(trial % 4)};
    auto p = oracle::random_mask(d, rng), t = oracle::random_mask(d, rng);
    p = LabelVolume(d, sp, p.data());
    t = LabelVolume(d, sp, t.data());
    const auto ps = surface_voxels(p), ts = surface_voxels(t);
    if (ps.empty() || ts.empty()) continue;
    const auto ab = oracle::directed(oracle::surface(p), oracle::surface(t), sp);
    const auto ba = oracle::directed(oracle::surface(t), oracle::surface(p), sp);
    const double h = hausdorff(ps, ts), a = assd(ps, ts);
    CHECK(std::abs(h - oracle::hausdorff(ab, ba)) < 1e-9);
    CHECK(std::abs(a - oracle::assd(ab, ba)) < 1e-9);
    CHECK(std::abs(hausdorff(ps, ts, 95.0) - std::max(oracle::percentile(ab, 95), oracle::percentile(ba, 95))) < 1e-9);
    CHECK(a <= h + 1e-12);
    CHECK(hausdorff(ts, ps) == h);
    CHECK(std::abs(assd(ts, ps) - a) < 1e-12);
    CHECK(std::abs(hausdorff(ps, ts, std::nullopt, DistanceMethod::brute_force) - h) < 1e-9);
  }
}

TEST_CASE("percentile option") {
  CHECK(oracle::percentile({0, 1, 2, 3, 4}, 50) == 2.0);
  CHECK(oracle::percentile({0, 10}, 95) == doctest::Approx(9.5));
  const auto a = surface_voxels(mask({12, 1, 1}, {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {11, 0, 0}}));
  const auto b = surface_voxels(mask({12, 1, 1}, {{0, 0, 0}}));
  // directed a->b = {0,1,2,3,11}; b->a = {0}
  CHECK(hausdorff(a, b) == 11.0);
  CHECK(hausdorff(a, b, 50.0) == 2.0);
  CHECK(hausdorff(a, b, 100.0) == 11.0);
  CHECK_THROWS_AS(hausdorff(a, b, 101.0), Error);
}

TEST_CASE("invariances") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{10, 10, 10};
    LabelVolume p(d, {}), t(d, {});
    const auto small_p = oracle::random_mask({6, 6, 6}, rng), small_t = oracle::random_mask({6, 6, 6}, rng);
    LabelVolume p2(d, {}), t2(d, {});
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
          p.at(x, y, z) = small_p.at(x, y, z);
          t.at(x, y, z) = small_t.at(x, y, z);
          p2.at(x + 3, y + 2, z + 4) = small_p.at(x, y, z);
          t2.at(x + 3, y + 2, z + 4) = small_t.at(x, y, z);
        }
    // Masks touching the volume border keep their border surface voxels
    // only when away from it; compare interior-shifted copies against a
    // shifted-by-one reference instead.
    LabelVolume p1(d, {}), t1(d, {});
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) {
          p1.at(x + 1, y + 1, z + 1) = small_p.at(x, y, z);
          t1.at(x + 1, y + 1, z + 1) = small_t.at(x, y, z);
        }
    const auto s1p = surface_voxels(p1), s1t = surface_voxels(t1);
    const auto s2p = surface_voxels(p2), s2t = surface_voxels(t2);
    if (s1p.empty() || s1t.empty()) continue;
    CHECK(std::abs(hausdorff(s1p, s1t) - hausdorff(s2p, s2t)) < 1e-12);
    CHECK(std::abs(assd(s1p, s1t) - assd(s2p, s2t)) < 1e-12);

    const LabelVolume ps(d, {2.f, 2.f, 2.f}, p1.data()), ts(d, {2.f, 2.f, 2.f}, t1.data());
    CHECK(hausdorff(surface_voxels(ps), surface_voxels(ts)) == doctest::Approx(2 * hausdorff(s1p, s1t)));
    CHECK(assd(surface_voxels(ps), surface_voxels(ts)) == doctest::Approx(2 * assd(s1p, s1t)));
    CHECK(confusion_counts(ps, ts) == confusion_counts(p1, t1));
  }
}

TEST_CASE("evaluate_scan") {
  LabelVolume truth({8, 8, 8}, {});
  for (int z = 2; z < 6; ++z)
    for (int y = 2; y < 6; ++y)
      for (int x = 2; x < 6; ++x) truth.at(x, y, z) = 2;
  truth.at(3, 3, 3) = 1;
  truth.at(4, 4, 4) = 4;

  SUBCASE("identical") {
    const auto r = evaluate_scan("a", truth, truth, {});
    for (const auto& reg : r.regions) {
      for (int m = 0; m < 4; ++m) CHECK(*reg.metrics[m].value == 1.0);
      CHECK(*reg.metrics[4].value == 0.0);
      CHECK(*reg.metrics[5].value == 0.0);
    }
  }
  SUBCASE("empty prediction") {
    const auto r = evaluate_scan("a", LabelVolume({8, 8, 8}, {}), truth, {});
    for (const auto& reg : r.regions) {
      CHECK(*reg.metrics[0].value == 0.0);
      CHECK(*reg.metrics[1].value == 0.0);
      CHECK_FALSE(reg.metrics[3].value);
      CHECK(reg.metrics[3].flag.rfind("undefined", 0) == 0);
      CHECK_FALSE(reg.metrics[4].value);
      CHECK(reg.metrics[4].flag == "EmptySurface");
      CHECK(reg.metrics[5].flag == "EmptySurface");
    }
  }
  SUBCASE("random pairs match composed oracles") {
    std::mt19937_64 rng(6);
    static constexpr std::uint8_t legal[] = {0, 1, 2, 4};
    for (int trial = 0; trial < 10; ++trial) {
      LabelVolume p({6, 6, 6}, {}), t({6, 6, 6}, {});
      const auto mp = oracle::random_mask({6, 6, 6}, rng), mt = oracle::random_mask({6, 6, 6}, rng);
      std::uniform_int_distribution<int> lab(1, 3);
      for (std::size_t i = 0; i < p.size(); ++i) {
        p.data()[i] = mp.data()[i] ? legal[lab(rng)] : 0;
        t.data()[i] = mt.data()[i] ? legal[lab(rng)] : 0;
      }
      const auto r = evaluate_scan("x", p, t, {1.f, 1.f, 2.f});
      const auto rp = volcore::decompose_regions(p), rt = volcore::decompose_regions(t);
      const LabelVolume* pm[3] = {&rp.wt, &rp.tc, &rp.et};
      const LabelVolume* tm[3] = {&rt.wt, &rt.tc, &rt.et};
      for (int k = 0; k < 3; ++k) {
        const auto o = oracle::tally(*pm[k], *tm[k]);
        const auto& reg = r.regions[k];
        CHECK(reg.counts.tp == o.tp);
        CHECK(reg.counts.fn == o.fn);
        const double dsc = (o.tp + o.fp + o.fn) ? 2.0 * o.tp / double(2 * o.tp + o.fp + o.fn) : 1.0;
        CHECK(*reg.metrics[0].value == dsc);
        const auto sp = oracle::surface(*pm[k]), st = oracle::surface(*tm[k]);
        if (sp.empty() || st.empty()) {
          CHECK(reg.metrics[4].flag == "EmptySurface");
          continue;
        }
        const auto ab = oracle::directed(sp, st, {1.f, 1.f, 2.f}), ba = oracle::directed(st, sp, {1.f, 1.f, 2.f});
        CHECK(std::abs(*reg.metrics[4].value - oracle::hausdorff(ab, ba)) < 1e-9);
        CHECK(std::abs(*reg.metrics[5].value - oracle::assd(ab, ba)) < 1e-9);
      }
    }
  }
  SUBCASE("errors") {
    CHECK(code_of([&] { evaluate_scan("a", LabelVolume({8, 8, 7}, {}), truth, {}); }) == Errc::DimsMismatch);
    LabelVolume bad = truth;
    bad.at(0, 0, 0) = 3;
    CHECK(code_of([&] { evaluate_scan("a", bad, truth, {}); }) == Errc::IllegalLabel);
  }
}

TEST_CASE("reports") {
  LabelVolume truth({6, 6, 6}, {});
  for (int x = 1; x < 4; ++x) truth.at(x, 2, 2) = 2;
  LabelVolume pred({6, 6, 6}, {});
  pred.at(1, 2, 2) = 2;
  pred.at(2, 2, 2) = 2;
  const auto a = evaluate_scan("b_scan", pred, truth, {});
  const auto b = evaluate_scan("a_scan", truth, truth, {});

  const auto j = to_json(a);
  CHECK(j["scan_id"] == "b_scan");
  CHECK(j["regions"]["WT"]["dice"].get<double>() == doctest::Approx(0.8));
  CHECK(j["regions"]["TC"]["precision"].is_null());
  CHECK(j["regions"]["TC"]["flags"]["hausdorff"] == "EmptySurface");
  CHECK(j["regions"]["WT"]["counts"]["tp"] == 2);

  const auto csv = aggregate_csv({a, b});
  std::istringstream in(csv);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0].rfind("scan_id,WT_dice,WT_sensitivity,WT_specificity,WT_precision,WT_hausdorff,WT_assd,TC_dice", 0) == 0);
  CHECK(lines[1].rfind("a_scan,1.000000,", 0) == 0);
  CHECK(lines[2].rfind("b_scan,0.800000,", 0) == 0);
  CHECK(lines[3].rfind("mean,0.900000,", 0) == 0);
  // sample standard deviation of {1.0, 0.8}
  CHECK(lines[4].rfind("std,0.141421,", 0) == 0);
  CHECK(lines[2].find("NA") != std::string::npos);
  CHECK(aggregate_csv({b, a}) == csv);
}
