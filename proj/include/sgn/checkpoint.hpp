#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "sgn/tensor.hpp"

namespace sgn {

// Self-describing container: named shaped arrays plus string metadata.
//
// Byte layout (little-endian):
//   8 bytes  magic "SGNCKPT\0"
//   u32      format version
//   str      config fingerprint            (str = u64 length + bytes)
//   u64      metadata count, then (str key, str value) pairs
//   u64      array count, then per array:
//            str name, u64 rows, u64 cols, rows*cols float64 values
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::string fingerprint;
  std::map<std::string, std::string> meta;
  std::map<std::string, Matrix> arrays;
};

// Writes to a temporary sibling and renames, so a crash never leaves a
// truncated checkpoint behind.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace sgn
