#include "sgn/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "sgn/errors.hpp"

namespace sgn {
namespace {

constexpr char kMagic[8] = {'S', 'G', 'N', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw CheckpointError("truncated checkpoint");
  return v;
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1ull << 32)) throw CheckpointError("implausible string length in checkpoint");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw CheckpointError("cannot open " + tmp.string() + " for writing");
    os.write(kMagic, sizeof(kMagic));
    put<std::uint32_t>(os, Checkpoint::kVersion);
    put_string(os, ckpt.fingerprint);
    put<std::uint64_t>(os, ckpt.meta.size());
    for (const auto& [k, v] : ckpt.meta) {
      put_string(os, k);
      put_string(os, v);
    }
    put<std::uint64_t>(os, ckpt.arrays.size());
    for (const auto& [name, m] : ckpt.arrays) {
      put_string(os, name);
      put<std::uint64_t>(os, m.rows());
      put<std::uint64_t>(os, m.cols());
      os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    if (!os) throw CheckpointError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.fingerprint = get_string(is);
  const auto nmeta = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < nmeta; ++i) {
    std::string k = get_string(is);
    ckpt.meta[k] = get_string(is);
  }
  const auto narrays = get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < narrays; ++i) {
    std::string name = get_string(is);
    const auto rows = get<std::uint64_t>(is);
    const auto cols = get<std::uint64_t>(is);
    if (rows * cols > (1ull << 32)) throw CheckpointError("implausible array size for " + name);
    std::vector<double> data(rows * cols);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw CheckpointError("truncated array " + name);
    ckpt.arrays.emplace(std::move(name), Matrix(rows, cols, std::move(data)));
  }
  return ckpt;
}

}  // namespace sgn
