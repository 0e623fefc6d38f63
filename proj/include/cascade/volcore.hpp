#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "cascade/error.hpp"
#include "cascade/tensor.hpp"

namespace cascade::volcore {

enum class Dtype : std::uint8_t { float32 = 0, uint8 = 1 };

struct Dims {
  std::size_t nx = 1, ny = 1, nz = 1;

  std::size_t count() const noexcept { return nx * ny * nz; }
  std::size_t operator[](int axis) const noexcept { return axis == 0 ? nx : axis == 1 ? ny : nz; }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Millimetres per voxel along x, y, z.
struct Spacing {
  float sx = 1.0f, sy = 1.0f, sz = 1.0f;

  float operator[](int axis) const noexcept { return axis == 0 ? sx : axis == 1 ? sy : sz; }
  friend bool operator==(const Spacing&, const Spacing&) = default;
};

template <class T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::float32; }
template <>
constexpr Dtype dtype_of<std::uint8_t>() { return Dtype::uint8; }

/// Scalar voxel grid, x fastest-varying, then y, then z.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  Grid(Dims dims, Spacing spacing, T fill = T{});
  Grid(Dims dims, Spacing spacing, std::vector<T> data);

  static constexpr Dtype dtype() { return dtype_of<T>(); }

  const Dims& dims() const noexcept { return dims_; }
  const Spacing& spacing() const noexcept { return spacing_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const noexcept {
    return x + dims_.nx * (y + dims_.ny * z);
  }
  T& at(std::size_t x, std::size_t y, std::size_t z) noexcept { return data_[index(x, y, z)]; }
  const T& at(std::size_t x, std::size_t y, std::size_t z) const noexcept { return data_[index(x, y, z)]; }

  std::vector<T>& data() noexcept { return data_; }
  const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Grid&, const Grid&) = default;

 private:
  Dims dims_;
  Spacing spacing_;
  std::vector<T> data_ = std::vector<T>(1);
};

using FloatVolume = Grid<float>;
using LabelVolume = Grid<std::uint8_t>;
using Volume = std::variant<FloatVolume, LabelVolume>;

enum class Modality { flair = 0, t1 = 1, t1c = 2, t2 = 3 };
inline constexpr std::array<const char*, 4> kModalityNames = {"flair", "t1", "t1c", "t2"};

/// Four co-registered modalities plus optional labels (BRATS coding 0/1/2/4).
struct MultiModalScan {
  std::string scan_id;
  std::array<FloatVolume, 4> modalities;
  std::optional<LabelVolume> labels;

  const FloatVolume& modality(Modality m) const { return modalities[static_cast<int>(m)]; }
  const Dims& dims() const { return modalities[0].dims(); }
  const Spacing& spacing() const { return modalities[0].spacing(); }

  /// Throws DimsMismatch unless every member shares dims and spacing.
  void validate() const;
};

struct RegionMasks {
  LabelVolume wt, tc, et;
};

/// Inclusive voxel box.
struct Box3 {
  std::array<int, 3> min{0, 0, 0};
  std::array<int, 3> max{0, 0, 0};

  int extent(int axis) const noexcept { return max[axis] - min[axis] + 1; }
  bool valid() const noexcept;
  bool contains(int x, int y, int z) const noexcept;
  bool contains(const Box3& other) const noexcept;
  bool within(const Dims& dims) const noexcept;
  static Box3 whole(const Dims& dims);
  friend bool operator==(const Box3&, const Box3&) = default;
};

/// Grows `box` by `offset` on every axis in both directions, then clips.
Box3 grow_and_clip(const Box3& box, int offset, const Dims& dims);

Volume read_volume(const std::filesystem::path& path);
FloatVolume read_float_volume(const std::filesystem::path& path);
LabelVolume read_label_volume(const std::filesystem::path& path);

void write_volume(const Volume& volume, const std::filesystem::path& path);
inline void write_volume(const FloatVolume& v, const std::filesystem::path& p) { write_volume(Volume{v}, p); }
inline void write_volume(const LabelVolume& v, const std::filesystem::path& p) { write_volume(Volume{v}, p); }

inline constexpr std::size_t kHeaderBytes = 33;

/// Optional `<name>.meta` text sidecar.
struct VolumeMeta {
  std::string scan_id;
  std::string modality;
};
void write_meta(const std::filesystem::path& volume_path, const VolumeMeta& meta);
std::optional<VolumeMeta> read_meta(const std::filesystem::path& volume_path);

RegionMasks decompose_regions(const LabelVolume& labels);

std::optional<Box3> bbox_of_mask(const LabelVolume& mask);

enum class Interp { trilinear, nearest };

/// Resamples the voxels inside `region` onto an `out` grid (align-corners).
/// Result keeps x fastest-varying.
FloatVolume resample_region(const FloatVolume& src, const Box3& region, const Dims& out, Interp mode);
LabelVolume resample_region(const LabelVolume& src, const Box3& region, const Dims& out);

/// Crops every modality to `box` grown by `offset`, resamples it to
/// `out_dims` and stacks the results as a (4, W, H, D) tensor.
autonet::TensorF crop_resize(const MultiModalScan& scan, const Box3& box, int offset, const Dims& out_dims,
                             Interp mode = Interp::trilinear);

/// Nearest-resamples `patch` onto `region` of a background volume of `full` dims.
LabelVolume paste_labels(const LabelVolume& patch, const Box3& region, const Dims& full, const Spacing& spacing);

/// Subtracts the mean and divides by the standard deviation in place; a
/// constant input becomes all zeros.
void zscore(std::span<float> values);

}  // namespace cascade::volcore
