#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "forge/model.hpp"
#include "forge/tokenizer.hpp"

namespace forge {

struct GenerationParams {
  double temperature = 0.0;  // 0 → greedy argmax
  double repetition_penalty = 1.0;
  std::size_t max_new_tokens = 64;
  std::optional<TokenId> stop_token = ByteTokenizer::kEos;
  std::uint64_t seed = 0;  // used only when temperature > 0

  // Throws ContractError for temperature < 0 or repetition_penalty < 1.
  void validate() const;
};

// For every distinct id in `generated`: a positive logit is divided by the
// penalty, a non-positive one multiplied. Penalty < 1 → ContractError.
void apply_repetition_penalty(std::span<float> logits, std::span<const TokenId> generated,
                              double penalty);

struct GenerationResult {
  std::string text;        // decoded continuation only
  TokenSequence tokens;    // generated ids, stop token excluded
  bool stopped = false;    // stop token produced
  bool truncated = false;  // the context filled before stopping
};

// BOS + prompt, then per step: penalty → temperature → argmax or sample.
// A prompt that alone exceeds the context throws ContextOverflowError.
GenerationResult generate(const CausalLM& model, std::string_view prompt,
                          const GenerationParams& params);

}  // namespace forge
