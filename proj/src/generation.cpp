#include "forge/generation.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "forge/errors.hpp"

namespace forge {

void GenerationParams::validate() const {
  if (!(temperature >= 0.0)) throw ContractError("temperature must be >= 0");
  if (!(repetition_penalty >= 1.0)) throw ContractError("repetition penalty must be >= 1");
}

void apply_repetition_penalty(std::span<float> logits, std::span<const TokenId> generated,
                              double penalty) {
  if (!(penalty >= 1.0)) throw ContractError("repetition penalty must be >= 1");
  if (penalty == 1.0) return;
  const std::set<TokenId> seen(generated.begin(), generated.end());
  for (TokenId id : seen) {
    if (id < 0 || static_cast<std::size_t>(id) >= logits.size())
      throw RangeError("generated id " + std::to_string(id) + " outside the logit row");
    float& v = logits[static_cast<std::size_t>(id)];
    v = v > 0.0F ? static_cast<float>(v / penalty) : static_cast<float>(v * penalty);
  }
}

GenerationResult generate(const CausalLM& model, std::string_view prompt,
                          const GenerationParams& params) {
  params.validate();
  TokenSequence tokens{ByteTokenizer::kBos};
  const TokenSequence encoded = ByteTokenizer::encode(prompt);
  tokens.insert(tokens.end(), encoded.begin(), encoded.end());
  const std::size_t ctx = model.max_seq_len();
  if (tokens.size() > ctx)
    throw ContextOverflowError("prompt of " + std::to_string(tokens.size()) +
                               " tokens exceeds the model context of " + std::to_string(ctx));

  const std::size_t vocab = model.vocab_size();
  std::mt19937_64 rng(params.seed);
  GenerationResult out;
  for (std::size_t step = 0; step < params.max_new_tokens; ++step) {
    if (tokens.size() > ctx) {
      out.truncated = true;
      break;
    }
    const std::vector<float> all = model.logits(tokens);
    std::vector<float> row(all.end() - static_cast<std::ptrdiff_t>(vocab), all.end());
    apply_repetition_penalty(row, out.tokens, params.repetition_penalty);

    TokenId next = 0;
    if (params.temperature == 0.0) {
      next = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
    } else {
      double max = -INFINITY;
      for (float v : row) max = std::max(max, static_cast<double>(v) / params.temperature);
      std::vector<double> weights(vocab);
      for (std::size_t i = 0; i < vocab; ++i)
        weights[i] = std::exp(static_cast<double>(row[i]) / params.temperature - max);
      std::discrete_distribution<TokenId> dist(weights.begin(), weights.end());
      next = dist(rng);
    }
    if (params.stop_token && next == *params.stop_token) {
      out.stopped = true;
      break;
    }
    out.tokens.push_back(next);
    tokens.push_back(next);
  }
  out.text = ByteTokenizer::decode(out.tokens);
  return out;
}

}  // namespace forge
