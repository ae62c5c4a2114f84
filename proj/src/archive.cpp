#include "forge/archive.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "forge/errors.hpp"

namespace forge {

namespace {

constexpr std::array<char, 8> kMagic = {'I', 'F', 'A', 'R', 'C', 'H', '0', '1'};
constexpr std::size_t kElementSize = 4;
constexpr std::size_t kHeaderBytes = 16;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xffU));
}

float get_f32(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

const ArchiveEntry* TensorArchive::find(const std::string& name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void write_archive(const std::filesystem::path& path, const TensorArchive& archive) {
  nlohmann::json manifest;
  manifest["meta"] = archive.meta;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& e : archive.entries) {
    if (shape_numel(e.shape) != e.values.size())
      throw DimensionError("archive entry '" + e.name + "' has shape " + shape_string(e.shape) +
                           " but " + std::to_string(e.values.size()) + " values");
    const std::size_t offset = payload.size();
    for (float v : e.values) put_f32(payload, v);
    manifest["tensors"].push_back({{"name", e.name},
                                   {"shape", e.shape},
                                   {"element_size", kElementSize},
                                   {"offset", offset},
                                   {"length", e.values.size() * kElementSize}});
  }
  const std::string manifest_text = manifest.dump();
  std::string header(kMagic.begin(), kMagic.end());
  put_u64(header, manifest_text.size());

  // Write to a sibling temp file first so a failed write never leaves a
  // half-written archive under the final name.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + tmp.string() + "' for writing");
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(manifest_text.data(), static_cast<std::streamsize>(manifest_text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw Error("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

TensorArchive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot open archive '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
    throw IntegrityError("'" + path.string() + "' is not a tensor archive");
  const std::uint64_t manifest_len = get_u64(bytes.data() + 8);
  if (manifest_len > bytes.size() - kHeaderBytes)
    throw IntegrityError("archive '" + path.string() + "' is truncated inside its manifest");

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + kHeaderBytes,
                                     bytes.begin() + static_cast<std::ptrdiff_t>(kHeaderBytes + manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("archive '" + path.string() + "' has a corrupt manifest: " + e.what());
  }

  const std::size_t payload_start = kHeaderBytes + manifest_len;
  const std::size_t payload_size = bytes.size() - payload_start;
  TensorArchive archive;
  try {
    archive.meta = manifest.at("meta");
    std::size_t declared_end = 0;
    for (const auto& t : manifest.at("tensors")) {
      ArchiveEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const auto elem = t.at("element_size").get<std::size_t>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto length = t.at("length").get<std::size_t>();
      if (elem != kElementSize)
        throw IntegrityError("tensor '" + e.name + "' has unsupported element size " +
                             std::to_string(elem));
      if (length != shape_numel(e.shape) * elem)
        throw IntegrityError("tensor '" + e.name + "' length disagrees with its shape");
      if (offset + length > payload_size)
        throw IntegrityError("archive '" + path.string() + "' is truncated (tensor '" + e.name +
                             "')");
      declared_end = std::max(declared_end, offset + length);
      e.values.resize(length / elem);
      const char* base = bytes.data() + payload_start + offset;
      for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] = get_f32(base + i * elem);
      archive.entries.push_back(std::move(e));
    }
    if (declared_end != payload_size)
      throw IntegrityError("archive '" + path.string() + "' payload size " +
                           std::to_string(payload_size) + " differs from manifest extent " +
                           std::to_string(declared_end));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("archive '" + path.string() + "' manifest is malformed: " + e.what());
  }
  return archive;
}

}  // namespace forge
