#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "cascade/volcore.hpp"

using namespace cascade;
using namespace cascade::volcore;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "cascade_test_volcore";
  fs::create_directories(dir);
  return dir / name;
}

Errc code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return Errc::IoFailure;
}

LabelVolume random_labels(Dims d, std::mt19937_64& rng) {
  static constexpr std::uint8_t legal[] = {0, 0, 0, 1, 2, 4};
  std::uniform_int_distribution<int> pick(0, 5);
  LabelVolume v(d, {});
  for (auto& x : v.data()) x = legal[pick(rng)];
  return v;
}

MultiModalScan scan_from(const FloatVolume& v) {
  MultiModalScan s;
  s.scan_id = "s";
  for (auto& m : s.modalities) m = v;
  return s;
}

void put(std::vector<char>& buf, const void* p, std::size_t n) {
  const char* c = static_cast<const char*>(p);
  buf.insert(buf.end(), c, c + n);
}

}  // namespace

TEST_CASE("float and label volumes round-trip bit-exactly") {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.f, 100.f);
  FloatVolume f({5, 3, 2}, {1.f, 0.5f, 2.5f});
  for (auto& v : f.data()) v = n(rng);
  f.data()[3] = -0.0f;
  write_volume(f, scratch("f.vvl"));
  auto back = read_volume(scratch("f.vvl"));
  REQUIRE(std::holds_alternative<FloatVolume>(back));
  const auto& g = std::get<FloatVolume>(back);
  CHECK(g.dims() == f.dims());
  CHECK(g.spacing() == f.spacing());
  CHECK(std::memcmp(g.data().data(), f.data().data(), f.size() * sizeof(float)) == 0);

  auto l = random_labels({4, 4, 3}, rng);
  write_volume(l, scratch("l.vvl"));
  CHECK(read_label_volume(scratch("l.vvl")) == l);
}

TEST_CASE("short, foreign and oversized files are rejected") {
  {
    std::ofstream(scratch("short.vvl"), std::ios::binary) << "VVL1abc";
  }
  CHECK(fs::file_size(scratch("short.vvl")) == 7);
  CHECK(code_of([] { read_volume(scratch("short.vvl")); }) == Errc::TruncatedData);

  {
    std::ofstream out(scratch("magic.vvl"), std::ios::binary);
    out << std::string(40, 'x');
  }
  CHECK(code_of([] { read_volume(scratch("magic.vvl")); }) == Errc::BadMagic);

  FloatVolume f({2, 2, 2}, {});
  write_volume(f, scratch("dtype.vvl"));
  {
    std::fstream io(scratch("dtype.vvl"), std::ios::binary | std::ios::in | std::ios::out);
    io.seekp(4);
    io.put(7);
  }
  CHECK(code_of([] { read_volume(scratch("dtype.vvl")); }) == Errc::UnsupportedDtype);

  write_volume(f, scratch("trunc.vvl"));
  fs::resize_file(scratch("trunc.vvl"), kHeaderBytes + 8 * 4 - 1);
  CHECK(code_of([] { read_volume(scratch("trunc.vvl")); }) == Errc::TruncatedData);
}

TEST_CASE("reads a file assembled byte by byte from the format description") {
  static_assert(std::endian::native == std::endian::little);
  std::vector<char> buf{'V', 'V', 'L', '1', 0};
  const std::uint32_t dims[3] = {2, 2, 2};
  const float sp[3] = {1.0f, 1.5f, 2.0f};
  put(buf, dims, sizeof dims);
  put(buf, sp, sizeof sp);
  buf.insert(buf.end(), 4, 0);
  for (int i = 0; i < 8; ++i) {
    const float v = static_cast<float>(i);
    put(buf, &v, 4);
  }
  {
    std::ofstream out(scratch("indep.vvl"), std::ios::binary);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  const auto v = read_float_volume(scratch("indep.vvl"));
  CHECK(v.dims() == Dims{2, 2, 2});
  CHECK(v.spacing() == Spacing{1.0f, 1.5f, 2.0f});
  // x fastest, then y, then z
  CHECK(v.at(1, 0, 0) == 1.0f);
  CHECK(v.at(0, 1, 0) == 2.0f);
  CHECK(v.at(0, 0, 1) == 4.0f);
  CHECK(v.at(1, 1, 1) == 7.0f);
}

TEST_CASE("single voxel payload follows the 33 byte header") {
  write_volume(FloatVolume({1, 1, 1}, {}, 3.5f), scratch("one.vvl"));
  CHECK(fs::file_size(scratch("one.vvl")) == 33 + 4);
  write_volume(LabelVolume({1, 1, 1}, {}, 4), scratch("one_u8.vvl"));
  CHECK(fs::file_size(scratch("one_u8.vvl")) == 33 + 1);
}

TEST_CASE("unwritable destination raises IoFailure") {
  const FloatVolume f({1, 1, 1}, {});
  {
    std::ofstream(scratch("plain_file")) << "x";
  }
  CHECK(code_of([&] { write_volume(f, scratch("plain_file") / "sub.vvl"); }) == Errc::IoFailure);
  CHECK(code_of([&] { write_volume(f, "/proc/version"); }) == Errc::IoFailure);
  CHECK(code_of([] { read_volume(scratch("does_not_exist.vvl")); }) == Errc::IoFailure);
}

TEST_CASE("meta sidecar round-trips") {
  write_meta(scratch("m.vvl"), {"case7", "t1c"});
  const auto m = read_meta(scratch("m.vvl"));
  REQUIRE(m);
  CHECK(m->scan_id == "case7");
  CHECK(m->modality == "t1c");
  CHECK_FALSE(read_meta(scratch("nometa.vvl")));
}

TEST_CASE("decompose_regions") {
  SUBCASE("all zero") {
    const auto r = decompose_regions(LabelVolume({3, 3, 3}, {}));
    for (const auto* m : {&r.wt, &r.tc, &r.et})
      for (auto v : m->data()) CHECK(v == 0);
  }
  SUBCASE("single enhancing voxel") {
    LabelVolume l({3, 3, 3}, {});
    l.at(1, 2, 0) = 4;
    const auto r = decompose_regions(l);
    CHECK(r.wt.at(1, 2, 0) == 1);
    CHECK(r.tc.at(1, 2, 0) == 1);
    CHECK(r.et.at(1, 2, 0) == 1);
    int total = 0;
    for (auto v : r.wt.data()) total += v;
    CHECK(total == 1);
  }
  SUBCASE("random volumes match per-voxel membership and nest") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const auto l = random_labels({8, 8, 8}, rng);
      const auto r = decompose_regions(l);
      for (std::size_t i = 0; i < l.size(); ++i) {
        const auto v = l.data()[i];
        CHECK(r.wt.data()[i] == (v == 1 || v == 2 || v == 4));
        CHECK(r.tc.data()[i] == (v == 1 || v == 4));
        CHECK(r.et.data()[i] == (v == 4));
        CHECK(r.et.data()[i] <= r.tc.data()[i]);
        CHECK(r.tc.data()[i] <= r.wt.data()[i]);
      }
    }
  }
  SUBCASE("illegal value") {
    LabelVolume l({2, 2, 2}, {});
    l.at(1, 1, 1) = 3;
    CHECK(code_of([&] { decompose_regions(l); }) == Errc::IllegalLabel);
  }
}

TEST_CASE("bbox_of_mask") {
  LabelVolume m({8, 8, 8}, {});
  CHECK_FALSE(bbox_of_mask(m));
  m.at(3, 4, 5) = 1;
  const auto b = bbox_of_mask(m);
  REQUIRE(b);
  CHECK(b->min == std::array<int, 3>{3, 4, 5});
  CHECK(b->max == std::array<int, 3>{3, 4, 5});

  std::mt19937_64 rng(11);
  std::bernoulli_distribution sparse(0.01);
  for (int trial = 0; trial < 30; ++trial) {
    LabelVolume r({9, 7, 6}, {});
    for (auto& v : r.data()) v = sparse(rng);
    std::array<int, 3> lo{99, 99, 99}, hi{-1, -1, -1};
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 7; ++y)
        for (int x = 0; x < 9; ++x)
          if (r.at(x, y, z)) {
            const int p[3] = {x, y, z};
            for (int a = 0; a < 3; ++a) {
              lo[a] = std::min(lo[a], p[a]);
              hi[a] = std::max(hi[a], p[a]);
            }
          }
    const auto got = bbox_of_mask(r);
    if (hi[0] < 0) {
      CHECK_FALSE(got);
    } else {
      REQUIRE(got);
      CHECK(got->min == lo);
      CHECK(got->max == hi);
    }
  }
}

TEST_CASE("region boxes nest whenever masks are nonempty") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const auto r = decompose_regions(random_labels({6, 7, 5}, rng));
    const auto wt = bbox_of_mask(r.wt), tc = bbox_of_mask(r.tc), et = bbox_of_mask(r.et);
    if (tc) CHECK(wt->contains(*tc));
    if (et) CHECK(tc->contains(*et));
  }
}

TEST_CASE("grow_and_clip") {
  const Dims d{20, 20, 10};
  const Box3 b{{5, 5, 2}, {8, 9, 3}};
  CHECK(grow_and_clip(b, 6, d) == Box3{{0, 0, 0}, {14, 15, 9}});
  CHECK(grow_and_clip(b, 0, d) == b);
}

TEST_CASE("crop_resize") {
  const Dims d{6, 5, 4};
  FloatVolume ramp(d, {});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) ramp.at(x, y, z) = float(x + 10 * y + 100 * z);

  SUBCASE("whole box at native size is an identity copy") {
    const auto t = crop_resize(scan_from(ramp), Box3::whole(d), 0, d);
    REQUIRE(t.shape() == autonet::Shape{4, 6, 5, 4});
    for (std::size_t c = 0; c < 4; ++c)
      for (int x = 0; x < 6; ++x)
        for (int y = 0; y < 5; ++y)
          for (int z = 0; z < 4; ++z) CHECK(t[((c * 6 + x) * 5 + y) * 4 + z] == ramp.at(x, y, z));
  }
  SUBCASE("constant input stays constant") {
    const FloatVolume c(d, {}, 2.25f);
    for (auto mode : {Interp::trilinear, Interp::nearest}) {
      const auto t = crop_resize(scan_from(c), Box3{{1, 1, 1}, {3, 2, 2}}, 1, {7, 3, 5}, mode);
      for (auto v : t.data()) CHECK(v == doctest::Approx(2.25f));
    }
  }
  SUBCASE("2x along x interpolates ramp midpoints") {
    FloatVolume fx({5, 2, 2}, {});
    for (int z = 0; z < 2; ++z)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 5; ++x) fx.at(x, y, z) = float(x);
    const auto t = crop_resize(scan_from(fx), Box3::whole(fx.dims()), 0, {9, 2, 2});
    for (int i = 0; i < 9; ++i) {
      const double expect = i % 2 == 0 ? i / 2 : 0.5 * (fx.at(i / 2, 0, 0) + fx.at(i / 2 + 1, 0, 0));
      CHECK(t[(std::size_t(i) * 2 + 1) * 2 + 1] == doctest::Approx(expect));
    }
  }
  SUBCASE("nearest mode emits only source values from the crop") {
    const Box3 box{{1, 0, 1}, {3, 2, 2}};
    std::set<float> allowed;
    for (int z = 0; z <= 3; ++z)
      for (int y = 0; y <= 3; ++y)
        for (int x = 0; x <= 4; ++x) allowed.insert(ramp.at(x, y, z));
    const auto t = crop_resize(scan_from(ramp), box, 1, {5, 9, 3}, Interp::nearest);
    for (auto v : t.data()) CHECK(allowed.count(v) == 1);
  }
  SUBCASE("trilinear reproduces affine functions") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> coef(-3, 3);
    for (int trial = 0; trial < 10; ++trial) {
      const double a = coef(rng), b = coef(rng), c = coef(rng), e = coef(rng);
      FloatVolume f({9, 8, 7}, {});
      for (int z = 0; z < 7; ++z)
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 9; ++x) f.at(x, y, z) = float(a + b * x + c * y + e * z);
      const Box3 box{{1, 2, 1}, {6, 5, 5}};
      const Dims out{11, 6, 9};
      const auto t = crop_resize(scan_from(f), box, 0, out);
      for (std::size_t i = 0; i < out.nx; ++i)
        for (std::size_t j = 0; j < out.ny; ++j)
          for (std::size_t k = 0; k < out.nz; ++k) {
            const double px = 1 + double(i) * 5 / double(out.nx - 1);
            const double py = 2 + double(j) * 3 / double(out.ny - 1);
            const double pz = 1 + double(k) * 4 / double(out.nz - 1);
            const double expect = a + b * px + c * py + e * pz;
            const double got = t[((0 * out.nx + i) * out.ny + j) * out.nz + k];
            CHECK(std::abs(got - expect) <= 1e-5 * std::max(1.0, std::abs(expect)));
          }
    }
  }
}

TEST_CASE("paste_labels keeps labels inside the region") {
  LabelVolume patch({4, 4, 4}, {}, 2);
  const Box3 region{{3, 4, 5}, {8, 9, 7}};
  const auto full = paste_labels(patch, region, {12, 12, 12}, {});
  for (int z = 0; z < 12; ++z)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) CHECK((full.at(x, y, z) == 2) == region.contains(x, y, z));
}

TEST_CASE("zscore") {
  std::vector<float> v{1, 2, 3, 4};
  zscore(v);
  double m = 0, s = 0;
  for (float x : v) m += x;
  for (float x : v) s += x * x;
  CHECK(m == doctest::Approx(0).epsilon(1e-6));
  CHECK(s / 4 == doctest::Approx(1.0));
  std::vector<float> c(5, 3.f);
  zscore(c);
  for (float x : c) CHECK(x == 0.f);
}

TEST_CASE("scan validation") {
  MultiModalScan s = scan_from(FloatVolume({2, 2, 2}, {}));
  CHECK_NOTHROW(s.validate());
  s.modalities[2] = FloatVolume({2, 2, 3}, {});
  CHECK(code_of([&] { s.validate(); }) == Errc::DimsMismatch);
}
