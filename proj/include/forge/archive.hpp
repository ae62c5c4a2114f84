#pragma once

// Binary tensor archive used for model and adapter checkpoints.
//
// Layout (all integers little-endian):
//   bytes 0..7    magic "IFARCH01"
//   bytes 8..15   u64 manifest length M
//   next M bytes  JSON manifest {"meta": {...}, "tensors": [{name, shape,
//                 element_size, offset, length}, ...]}
//   remainder     raw little-endian float32 payloads; offsets are relative
//                 to the first payload byte
//
// A reader rejects any file whose size differs from the manifest's declared
// payload extent, so truncation is always detected before any tensor is
// returned.

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/tensor.hpp"

namespace forge {

struct ArchiveEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct TensorArchive {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<ArchiveEntry> entries;

  const ArchiveEntry* find(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_archive(const std::filesystem::path& path);

}  // namespace forge
