#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "cascade/autonet.hpp"

namespace cascade::autonet {

namespace {
constexpr char kMagic[] = "CKP1";

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p += ".bin";
  return p;
}
}  // namespace

const TensorF& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return t;
  }
  throw Error(Errc::CheckpointMismatch, "checkpoint has no tensor '" + name + "'");
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes a little-endian host");
  const auto blob = blob_path(path);
  std::ofstream bin(blob, std::ios::binary | std::ios::trunc);
  if (!bin) throw Error(Errc::IoFailure, "cannot write " + blob.string());
  bin.write(kMagic, 4);

  std::ostringstream manifest;
  manifest << kMagic << "\n";
  manifest << "blob " << blob.filename().string() << "\n";
  for (const auto& [key, value] : ckpt.meta) manifest << "meta " << key << " " << value << "\n";
  std::size_t offset = 4;
  for (const auto& [name, t] : ckpt.tensors) {
    manifest << "tensor " << name << " " << t.rank();
    for (auto e : t.shape()) manifest << " " << e;
    manifest << " " << offset << " " << t.size() << "\n";
    bin.write(reinterpret_cast<const char*>(t.ptr()), static_cast<std::streamsize>(t.size() * sizeof(float)));
    offset += t.size() * sizeof(float);
  }
  bin.close();
  if (!bin) throw Error(Errc::IoFailure, "short write to " + blob.string());

  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(Errc::IoFailure, "cannot write " + path.string());
  out << manifest.str();
  if (!out) throw Error(Errc::IoFailure, "short write to " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoFailure, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw Error(Errc::BadMagic, path.string() + " is not a CKP1 manifest");

  std::filesystem::path blob = blob_path(path);
  Checkpoint ckpt;
  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset, count;
  };
  std::vector<Entry> entries;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "blob") {
      std::string name;
      ls >> name;
      blob = path.parent_path() / name;
    } else if (tag == "meta") {
      std::string key, value;
      ls >> key;
      std::getline(ls >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (tag == "tensor") {
      Entry e;
      std::size_t rank = 0;
      ls >> e.name >> rank;
      e.shape.resize(rank);
      for (auto& d : e.shape) ls >> d;
      ls >> e.offset >> e.count;
      if (!ls || shape_size(e.shape) != e.count) {
        throw Error(Errc::CheckpointMismatch, "malformed tensor entry: " + line);
      }
      entries.push_back(std::move(e));
    } else {
      throw Error(Errc::CheckpointMismatch, "unknown manifest line: " + line);
    }
  }

  std::ifstream bin(blob, std::ios::binary);
  if (!bin) throw Error(Errc::IoFailure, "cannot open " + blob.string());
  char magic[4];
  if (!bin.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(Errc::BadMagic, blob.string() + " is not a CKP1 blob");
  }
  for (const auto& e : entries) {
    std::vector<float> data(e.count);
    bin.seekg(static_cast<std::streamoff>(e.offset));
    if (!bin.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(e.count * sizeof(float)))) {
      throw Error(Errc::TruncatedData, blob.string() + ": tensor " + e.name + " runs past end of blob");
    }
    ckpt.tensors.emplace_back(e.name, TensorF(e.shape, std::move(data)));
  }
  return ckpt;
}

}  // namespace cascade::autonet
