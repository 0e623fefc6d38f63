#include <random>
#include <sstream>

#include "doctest.h"
#include "cascade/ctxwin.hpp"
#include "support/oracles.hpp"

using namespace cascade;
using namespace cascade::ctxwin;

namespace {

Rect random_rect(std::mt19937_64& rng, Size2 bounds, int max_side = 20) {
  std::uniform_int_distribution<int> side(1, max_side);
  const int w = std::min(side(rng), bounds.w), h = std::min(side(rng), bounds.h);
  const int x0 = std::uniform_int_distribution<int>(0, bounds.w - w)(rng);
  const int y0 = std::uniform_int_distribution<int>(0, bounds.h - h)(rng);
  return {x0, y0, x0 + w - 1, y0 + h - 1};
}

Proposal centered(double cx, double cy, int half = 2) {
  const int x = static_cast<int>(cx), y = static_cast<int>(cy);
  return {{x - half, y - half, x + half, y + half}, 0.5, 0, 0};
}

}  // namespace

TEST_CASE("iou counts inclusive pixels") {
  const Rect a{0, 0, 3, 3}, b{2, 2, 5, 5};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Rect{4, 4, 6, 6}) == 0.0);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0));
  CHECK(oracle::iou_by_pixels(a, b) == doctest::Approx(1.0 / 7.0));

  std::mt19937_64 rng(2);
  for (int i = 0; i < 200; ++i) {
    const Rect r = random_rect(rng, {30, 30}, 12), s = random_rect(rng, {30, 30}, 12);
    CHECK(iou(r, s) == doctest::Approx(oracle::iou_by_pixels(r, s)).epsilon(1e-12));
    CHECK(iou(r, s) == iou(s, r));
    CHECK((iou(r, s) == 1.0) == (r == s));
    const int dx = std::uniform_int_distribution<int>(-5, 5)(rng), dy = std::uniform_int_distribution<int>(-5, 5)(rng);
    const Rect rt{r.x0 + dx, r.y0 + dy, r.x1 + dx, r.y1 + dy}, st{s.x0 + dx, s.y0 + dy, s.x1 + dx, s.y1 + dy};
    CHECK(iou(rt, st) == iou(r, s));
  }
}

TEST_CASE("enumerate_windows") {
  auto x_starts = [](const std::vector<Rect>& ws) {
    std::vector<int> xs;
    for (const auto& w : ws) xs.push_back(w.x0);
    return xs;
  };
  CHECK(enumerate_windows({8, 8}, {8, 8}, 4).size() == 1);
  CHECK(x_starts(enumerate_windows({12, 8}, {8, 8}, 4)) == std::vector<int>{0, 4});
  CHECK(x_starts(enumerate_windows({10, 8}, {8, 8}, 4)) == std::vector<int>{0, 2});
  CHECK_THROWS_AS(enumerate_windows({7, 8}, {8, 8}, 4), Error);

  SUBCASE("raster order and full coverage") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 40; ++trial) {
      const Size2 dims{std::uniform_int_distribution<int>(8, 50)(rng), std::uniform_int_distribution<int>(8, 50)(rng)};
      const Size2 win{std::uniform_int_distribution<int>(1, dims.w)(rng),
                      std::uniform_int_distribution<int>(1, dims.h)(rng)};
      const int stride = std::uniform_int_distribution<int>(1, std::min({9, win.w, win.h}))(rng);
      const auto ws = enumerate_windows(dims, win, stride);
      std::vector<int> hits(static_cast<std::size_t>(dims.w * dims.h), 0);
      for (std::size_t i = 0; i < ws.size(); ++i) {
        const auto& w = ws[i];
        CHECK(w.width() == win.w);
        CHECK(w.height() == win.h);
        CHECK(w.x0 >= 0);
        CHECK(w.y1 < dims.h);
        CHECK(w.x1 < dims.w);
        if (i > 0) {
          const auto& p = ws[i - 1];
          CHECK((p.y0 < w.y0 || (p.y0 == w.y0 && p.x0 < w.x0)));
        }
        for (int y = w.y0; y <= w.y1; ++y)
          for (int x = w.x0; x <= w.x1; ++x) ++hits[static_cast<std::size_t>(y * dims.w + x)];
      }
      for (int h : hits) CHECK(h >= 1);
    }
  }
}

TEST_CASE("positive_windows double the ground truth around its center") {
  auto one = [](Rect g, Size2 d) { return positive_windows({g}, d).at(0).rect; };
  CHECK(one({10, 10, 19, 19}, {64, 64}) == Rect{5, 5, 24, 24});
  CHECK(one({0, 0, 9, 9}, {64, 64}) == Rect{0, 0, 14, 14});
  CHECK(one({0, 0, 63, 63}, {64, 64}) == Rect{0, 0, 63, 63});
  CHECK(positive_windows({}, {64, 64}).empty());

  std::mt19937_64 rng(4);
  for (int i = 0; i < 200; ++i) {
    const Rect g = random_rect(rng, {40, 40}, 30);
    const auto w = positive_windows({g}, {40, 40}, 2).at(0);
    CHECK(w.kind == WindowKind::positive);
    CHECK(w.scale_id == 2);
    CHECK(w.rect.contains(g));
    CHECK(w.rect.x0 >= 0);
    CHECK(w.rect.x1 < 40);
    CHECK(w.rect.width() <= 2 * g.width());
  }
}

TEST_CASE("negative_windows") {
  const auto grid = enumerate_windows({64, 64}, {16, 16}, 4);
  SUBCASE("nothing survives the positive filter") {
    const std::vector<Window> pos{{{0, 0, 63, 63}, 0, WindowKind::positive}};
    CHECK(negative_windows({centered(10, 10), centered(12, 12)}, pos, grid, 2).empty());
  }
  SUBCASE("three centers in one window") {
    const std::vector<Rect> g{{0, 0, 15, 15}, {20, 20, 35, 35}};
    const auto out = negative_windows({centered(25, 25), centered(26, 27), centered(30, 22)}, {}, g, 2);
    REQUIRE(out.size() == 1);
    CHECK(out[0].rect == g[1]);
    CHECK(out[0].kind == WindowKind::negative);
  }
  SUBCASE("a single leftover center is below P") {
    CHECK(negative_windows({centered(30, 30)}, {}, grid, 2).empty());
  }
  SUBCASE("matches brute-force greedy on random layouts") {
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<Proposal> props;
      for (int i = 0; i < 20; ++i) props.push_back({random_rect(rng, {64, 64}, 10), 0.3, 0, 0});
      const auto pos = positive_windows({random_rect(rng, {64, 64}, 12)}, {64, 64});
      const auto got = negative_windows(props, pos, grid, 2);
      const auto expect = oracle::greedy_negatives(props, pos, grid, 2);
      REQUIRE(got.size() == expect.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].rect == grid[expect[i].grid_index]);
        CHECK(expect[i].covered >= 2);
      }
    }
  }
}

TEST_CASE("box deltas") {
  const Rect p{3, 4, 12, 19}, g{5, 2, 20, 15};
  const auto d = encode_delta(p, g);
  CHECK(decode_delta(p, d) == g);
  const auto z = encode_delta(g, g);
  CHECK(z.dx == 0.0);
  CHECK(z.dy == 0.0);
  CHECK(z.dw == 0.0);
  CHECK(z.dh == 0.0);
  CHECK(d.dx == doctest::Approx((12.5 - 7.5) / 10.0));
  CHECK(d.dw == doctest::Approx(std::log(16.0 / 10.0)));
}

TEST_CASE("assign_proposal_labels") {
  const Rect gt{2, 2, 5, 5};
  const std::vector<Window> wins{{{0, 0, 31, 31}, 0, WindowKind::negative}};
  SUBCASE("proposal equal to gt") {
    const auto out = assign_proposal_labels({{gt, 0.9, 0, 0}}, {gt}, wins);
    REQUIRE(out.size() == 1);
    CHECK(out[0].label == ProposalLabel::positive);
    REQUIRE(out[0].regression_target);
    CHECK(out[0].regression_target->dx == 0.0);
    CHECK(out[0].regression_target->dh == 0.0);
  }
  SUBCASE("low overlap is negative without target") {
    const auto out = assign_proposal_labels({{{0, 0, 3, 3}, 0.9, 0, 0}, {{20, 20, 25, 25}, 0.1, 0, 0}}, {gt}, wins);
    REQUIRE(out.size() == 2);
    for (const auto& lp : out) {
      CHECK(lp.label == ProposalLabel::negative);
      CHECK_FALSE(lp.regression_target);
    }
  }
  SUBCASE("proposals outside every window are dropped") {
    const std::vector<Window> small{{{0, 0, 7, 7}, 0, WindowKind::positive}};
    CHECK(assign_proposal_labels({{{20, 20, 25, 25}, 0.1, 0, 0}}, {gt}, small).empty());
  }
  SUBCASE("decoding a target recovers the matched gt box") {
    std::mt19937_64 rng(13);
    int positives = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const Rect g = random_rect(rng, {48, 48}, 20);
      const auto props = oracle_proposals({g}, {48, 48}, rng(), 40);
      const auto pos = positive_windows({g}, {48, 48});
      for (const auto& lp : assign_proposal_labels(props, {g}, pos)) {
        CHECK(lp.regression_target.has_value() == (lp.label == ProposalLabel::positive));
        if (lp.label != ProposalLabel::positive) continue;
        CHECK(iou(lp.proposal.rect, g) > 0.5);
        CHECK(decode_delta(lp.proposal.rect, *lp.regression_target) == g);
        ++positives;
      }
    }
    CHECK(positives > 50);
  }
}

TEST_CASE("oracle_proposals") {
  const std::vector<Rect> gt{{10, 12, 30, 28}};
  const auto a = oracle_proposals(gt, {64, 64}, 42);
  CHECK(a.size() == 300);
  CHECK(a == oracle_proposals(gt, {64, 64}, 42));
  CHECK(a != oracle_proposals(gt, {64, 64}, 43));
  int near = 0;
  for (const auto& p : a) {
    CHECK(p.score >= 0.0);
    CHECK(p.score <= 1.0);
    CHECK(p.rect.valid());
    CHECK(p.rect.x0 >= 0);
    CHECK(p.rect.y1 < 64);
    near += iou(p.rect, gt[0]) > 0.3;
  }
  CHECK(near >= 100);
  const auto empty = oracle_proposals({}, {64, 64}, 1, 17, 5, 2);
  CHECK(empty.size() == 17);
  for (const auto& p : empty) {
    CHECK(p.slice_z == 5);
    CHECK(p.scale_id == 2);
  }
}

TEST_CASE("aggregate_detections") {
  const auto one = aggregate_detections({{10, {1, 2, 3, 4}, 0.9}}, 0.5);
  REQUIRE(one);
  CHECK(one->min == std::array<int, 3>{1, 2, 10});
  CHECK(one->max == std::array<int, 3>{3, 4, 10});
  CHECK_FALSE(aggregate_detections({{10, {1, 2, 3, 4}, 0.4}}, 0.5));
  CHECK_FALSE(aggregate_detections({}, 0.5));

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> score(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<SliceBox> boxes;
    for (int i = 0; i < 12; ++i)
      boxes.push_back({std::uniform_int_distribution<int>(0, 40)(rng), random_rect(rng, {50, 50}), score(rng)});
    std::array<int, 3> lo{1 << 20, 1 << 20, 1 << 20}, hi{-1, -1, -1};
    for (const auto& b : boxes) {
      if (b.score < 0.6) continue;
      const int mn[3] = {b.rect.x0, b.rect.y0, b.slice_z}, mx[3] = {b.rect.x1, b.rect.y1, b.slice_z};
      for (int a = 0; a < 3; ++a) {
        lo[a] = std::min(lo[a], mn[a]);
        hi[a] = std::max(hi[a], mx[a]);
      }
    }
    const auto got = aggregate_detections(boxes, 0.6);
    if (hi[0] < 0) {
      CHECK_FALSE(got);
    } else {
      REQUIRE(got);
      CHECK(got->min == lo);
      CHECK(got->max == hi);
    }
  }
}

TEST_CASE("scales") {
  const auto s = make_scales({64, 48}, {0.5, 1.0, 2.0}, {24, 24});
  REQUIRE(s.size() == 3);
  CHECK(s[0].scaled_dims == Size2{32, 24});
  CHECK(s[2].scaled_dims == Size2{128, 96});
  CHECK_THROWS_AS(make_scales({64, 48}, {0.25}, {24, 24}), Error);
  const Rect r{10, 6, 19, 13};
  CHECK(unscale_rect(scale_rect(r, 2.0, {128, 96}), 2.0, {64, 48}) == r);
  CHECK(scale_rect(r, 0.5, {32, 24}).contains(Rect{5, 3, 9, 6}));
}

TEST_CASE("records round-trip through text") {
  const std::vector<Record> recs{{0, "positive", {1, 2, 33, 34}, 1.0, 7},
                                 {2, "negative", {0, 0, 31, 31}, std::nullopt, std::nullopt},
                                 {1, "proposal", {5, 6, 9, 12}, 0.123456, 3}};
  std::stringstream ss;
  write_records(ss, recs);
  CHECK(read_records(ss) == recs);
  CHECK(format_record(recs[1]) == "2 negative 0 0 31 31");
  CHECK(format_record(recs[2]) == "1 proposal 5 6 9 12 0.123456 3");
  CHECK_THROWS_AS(parse_record("0 positive 1 2"), Error);
}
