#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forge/generation.hpp"
#include "forge/lora.hpp"
#include "forge/model.hpp"
#include "forge/prompt.hpp"
#include "forge/records.hpp"
#include "forge/training.hpp"

namespace forge {

struct EvalSettings {
  std::vector<std::size_t> shots = {1, 2, 3};
  std::optional<PromptVersion> prompt_version;
  bool length_normalize = false;
};

// Merged settings of every stage. Keys are "section.name"; the only bare key is
// "seed". Files hold one "key = value" per line; '#' starts a comment.
struct RunConfig {
  std::uint64_t seed = 0;
  bool seed_given = false;  // set by a "seed" key
  ModelConfig model;
  LoraConfig lora;
  TrainConfig train;
  PretrainConfig pretrain;
  EvalSettings eval;
  GenerationParams generate;
  PromptVersion prompt_version = PromptVersion::kV02;  // training/inference format
  std::vector<Category> exclude;

  // Throws ConfigError naming the key for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);
  void load_file(const std::filesystem::path& path);

  // Copies `seed` into every seeded component.
  void apply_seed(std::uint64_t value);

  // Checks every section; throws ConfigError.
  void validate() const;

  // Every key with its effective value, in a fixed order. Feeding these lines
  // back through load_file reproduces the configuration.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string echo() const;

  static std::vector<std::string> keys();
};

// Seed resolution: explicit value, then INSTRUCT_FORGE_SEED, then 0.
// A malformed environment value throws ConfigError.
std::uint64_t resolve_seed(std::optional<std::uint64_t> explicit_seed);

std::vector<std::string> split_list(const std::string& text);

}  // namespace forge
