#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/tensor.hpp"
#include "forge/tokenizer.hpp"

namespace forge {

class LoraAdapter;

// Attention projection naming: GPT-NeoX style fused "query_key_value" or
// LLaMA style separate "q_proj"/"k_proj"/"v_proj"/"o_proj".
enum class AttentionLayout { kFusedQkv, kSplitQv };

std::string_view to_string(AttentionLayout layout);
AttentionLayout parse_attention_layout(std::string_view tag);

struct ModelConfig {
  std::size_t vocab_size = ByteTokenizer::kVocabSize;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 4;
  std::size_t max_seq_len = 512;
  std::size_t ffn_multiplier = 4;
  AttentionLayout layout = AttentionLayout::kSplitQv;
  std::uint64_t seed = 0;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ConfigError.
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  bool operator==(const ModelConfig&) const = default;
};

// Anything that yields next-token logits for a token sequence. Evaluation and
// generation are written against this interface.
class CausalLM {
 public:
  virtual ~CausalLM() = default;
  virtual std::size_t vocab_size() const = 0;
  virtual std::size_t max_seq_len() const = 0;
  // Row-major [tokens.size() × vocab_size()] logits, evaluation mode.
  virtual std::vector<float> logits(std::span<const TokenId> tokens) const = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Weight stored [out × in]; applied as x·Wᵀ. May carry a LoRA adapter.
struct Linear {
  std::string name;
  Tensor weight;
  std::shared_ptr<LoraAdapter> adapter;
};

struct LayerNormParams {
  std::string name;
  Tensor gain;
  Tensor bias;
};

struct DecoderLayer {
  LayerNormParams input_norm;
  // fused: {query_key_value, dense}; split: {q_proj, k_proj, v_proj, o_proj}
  std::vector<Linear> attention;
  LayerNormParams post_attention_norm;
  Linear up_proj;
  Linear down_proj;
};

struct ForwardOptions {
  bool training = false;
  // Required when training with active dropout.
  std::mt19937_64* rng = nullptr;
};

class DecoderModel : public CausalLM {
 public:
  // Deterministic in config.seed. Throws ConfigError for an invalid config.
  static DecoderModel init(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::size_t vocab_size() const override { return config_.vocab_size; }
  std::size_t max_seq_len() const override { return config_.max_seq_len; }

  // Base parameters in a fixed order. Adapter tensors are not included.
  std::vector<NamedTensor> named_parameters() const;

  // Every projection matrix, in named_parameters() order.
  std::vector<Linear*> linears();
  std::vector<const Linear*> linears() const;

  // Logits [batch*seq × vocab] for `batch` right-padded rows of length `seq`.
  // Throws ContextOverflowError when seq > max_seq_len.
  Tensor forward(std::span<const TokenId> tokens, std::size_t batch, std::size_t seq,
                 const ForwardOptions& options = {}) const;
  Tensor forward(std::span<const TokenId> tokens) const;

  std::vector<float> logits(std::span<const TokenId> tokens) const override;

  // Deep copy including adapters.
  DecoderModel clone() const;

 private:
  explicit DecoderModel(ModelConfig config) : config_(std::move(config)) {}

  Tensor project(const Linear& linear, const Tensor& x, const ForwardOptions& options) const;

  ModelConfig config_;
  Tensor embed_tokens_;
  std::vector<DecoderLayer> layers_;
  LayerNormParams final_norm_;
  Linear lm_head_;
};

// Checkpoint = tensor archive of named_parameters() plus the config in the
// manifest. Adapters are saved separately (see lora.hpp).
void save_checkpoint(const DecoderModel& model, const std::filesystem::path& path);
DecoderModel load_checkpoint(const std::filesystem::path& path);
// Also requires the stored config (layout included) to equal `expected`.
DecoderModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace forge
