#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cascade/volcore.hpp"

namespace cascade::volcore {

namespace {

constexpr char kMagic[4] = {'V', 'V', 'L', '1'};

template <class T>
T byteswap_if_big(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    std::reverse(bytes, bytes + sizeof(T));
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
  value = byteswap_if_big(value);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  out.insert(out.end(), bytes, bytes + sizeof(T));
}

template <class T>
T get_le(const unsigned char* in) {
  T value;
  std::memcpy(&value, in, sizeof(T));
  return byteswap_if_big(value);
}

template <class T>
std::vector<unsigned char> encode(const Grid<T>& v) {
  std::vector<unsigned char> out;
  out.reserve(kHeaderBytes + v.size() * sizeof(T));
  out.insert(out.end(), kMagic, kMagic + 4);
  out.push_back(static_cast<unsigned char>(Grid<T>::dtype()));
  put_le(out, static_cast<std::uint32_t>(v.dims().nx));
  put_le(out, static_cast<std::uint32_t>(v.dims().ny));
  put_le(out, static_cast<std::uint32_t>(v.dims().nz));
  put_le(out, v.spacing().sx);
  put_le(out, v.spacing().sy);
  put_le(out, v.spacing().sz);
  put_le(out, std::uint32_t{0});
  for (T value : v.data()) put_le(out, value);
  return out;
}

template <class T>
Grid<T> decode_payload(const std::vector<unsigned char>& bytes, const Dims& dims, const Spacing& spacing) {
  std::vector<T> data(dims.count());
  const unsigned char* p = bytes.data() + kHeaderBytes;
  for (std::size_t i = 0; i < data.size(); ++i, p += sizeof(T)) data[i] = get_le<T>(p);
  return Grid<T>(dims, spacing, std::move(data));
}

}  // namespace

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(Errc::BadMagic, path.string() + " does not start with VVL1");
  }
  if (bytes.size() < kHeaderBytes) {
    throw Error(Errc::TruncatedData, path.string() + ": " + std::to_string(bytes.size()) + " bytes, header needs 33");
  }

  const auto code = bytes[4];
  if (code > 1) throw Error(Errc::UnsupportedDtype, path.string() + ": dtype code " + std::to_string(code));
  const Dtype dtype = static_cast<Dtype>(code);

  Dims dims{get_le<std::uint32_t>(&bytes[5]), get_le<std::uint32_t>(&bytes[9]), get_le<std::uint32_t>(&bytes[13])};
  Spacing spacing{get_le<float>(&bytes[17]), get_le<float>(&bytes[21]), get_le<float>(&bytes[25])};
  if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0) {
    throw Error(Errc::SpecMismatch, path.string() + ": zero dimension in header");
  }
  if (!(spacing.sx > 0 && spacing.sy > 0 && spacing.sz > 0)) {
    throw Error(Errc::SpecMismatch, path.string() + ": non-positive spacing in header");
  }

  const std::size_t elem = dtype == Dtype::float32 ? 4 : 1;
  const std::size_t expected = kHeaderBytes + dims.count() * elem;
  if (bytes.size() < expected) {
    throw Error(Errc::TruncatedData, path.string() + ": payload has " + std::to_string(bytes.size() - kHeaderBytes) +
                                         " bytes, expected " + std::to_string(expected - kHeaderBytes));
  }
  if (bytes.size() > expected) {
    throw Error(Errc::SpecMismatch, path.string() + ": trailing bytes after payload");
  }

  if (dtype == Dtype::float32) return decode_payload<float>(bytes, dims, spacing);
  return decode_payload<std::uint8_t>(bytes, dims, spacing);
}

FloatVolume read_float_volume(const std::filesystem::path& path) {
  Volume v = read_volume(path);
  if (auto* f = std::get_if<FloatVolume>(&v)) return std::move(*f);
  const auto& l = std::get<LabelVolume>(v);
  return FloatVolume(l.dims(), l.spacing(), std::vector<float>(l.data().begin(), l.data().end()));
}

LabelVolume read_label_volume(const std::filesystem::path& path) {
  Volume v = read_volume(path);
  if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
  throw Error(Errc::UnsupportedDtype, path.string() + ": label volumes must be uint8");
}

void write_volume(const Volume& volume, const std::filesystem::path& path) {
  const auto bytes = std::visit([](const auto& v) { return encode(v); }, volume);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  out.close();
  if (!out) throw Error(Errc::IoFailure, "short write to " + path.string());
}

namespace {
std::filesystem::path meta_path(const std::filesystem::path& volume_path) {
  auto p = volume_path;
  p.replace_extension(".meta");
  return p;
}
}  // namespace

void write_meta(const std::filesystem::path& volume_path, const VolumeMeta& meta) {
  std::ofstream out(meta_path(volume_path));
  if (!out) throw Error(Errc::IoFailure, "cannot write " + meta_path(volume_path).string());
  out << "scan_id=" << meta.scan_id << "\n";
  out << "modality=" << meta.modality << "\n";
}

std::optional<VolumeMeta> read_meta(const std::filesystem::path& volume_path) {
  std::ifstream in(meta_path(volume_path));
  if (!in) return std::nullopt;
  VolumeMeta meta;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const auto key = line.substr(0, eq);
    const auto value = line.substr(eq + 1);
    if (key == "scan_id") meta.scan_id = value;
    else if (key == "modality") meta.modality = value;
  }
  return meta;
}

}  // namespace cascade::volcore
