#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/lora.hpp"
#include "forge/model.hpp"
#include "forge/prompt.hpp"
#include "forge/records.hpp"

namespace forge {

enum class MaskPolicy { kResponseOnly, kFullSequence };

std::string_view to_string(MaskPolicy policy);
MaskPolicy parse_mask_policy(std::string_view tag);

struct TrainConfig {
  double learning_rate = 3e-4;
  std::size_t batch_size = 8;
  std::size_t epochs = 1;
  std::size_t train_seq_len = 256;
  MaskPolicy mask_policy = MaskPolicy::kResponseOnly;
  std::uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;

  // Throws ConfigError; train_seq_len is checked against the model context.
  void validate(const ModelConfig& model) const;
  nlohmann::ordered_json to_json() const;
};

// One tokenized example: BOS, rendered prompt, response bytes, EOS.
struct EncodedExample {
  TokenSequence tokens;
  std::size_t response_begin = 0;  // index of the first response token
};

EncodedExample encode_example(const InstructionRecord& record, const PromptFormat& format);

// Rows of exactly seq_len tokens, right-padded with PAD.
struct TrainingBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<TokenId> tokens;        // [batch × seq_len]
  std::vector<std::size_t> targets;   // tokens shifted left by one, PAD past the end
  std::vector<std::uint8_t> loss_mask;
  std::size_t dropped = 0;            // examples whose response alone exceeds seq_len
  std::vector<std::string> warnings;
};

// Render → encode → keep the trailing seq_len tokens → pad → shift → mask.
TrainingBatch build_batch(std::span<const EncodedExample> examples, std::size_t seq_len,
                          MaskPolicy policy);
TrainingBatch build_batch(std::span<const InstructionRecord> records, const PromptFormat& format,
                          const TrainConfig& config);

// Decoupled weight decay Adam over a fixed parameter list.
class AdamW {
 public:
  struct Options {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(std::vector<Tensor> params, Options options);

  void step(const Gradients<float>& grads);
  std::size_t steps() const { return steps_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  Options options_;
  std::vector<std::vector<float>> m_, v_;
  std::size_t steps_ = 0;
};

AdamW make_adapter_optimizer(const DecoderModel& model, const TrainConfig& config);

// Forward → masked cross-entropy → backward → update adapters only. Returns the
// loss before the update. Throws ConfigError when the model has no adapters.
float train_step(DecoderModel& model, const TrainingBatch& batch, AdamW& optimizer,
                 std::mt19937_64& rng);

struct EpochReport {
  std::size_t epoch = 0;
  double mean_loss = 0;
  std::size_t dropped = 0;
  double seconds = 0;
  std::size_t steps = 0;

  nlohmann::ordered_json to_json() const;
};

struct TrainReport {
  std::vector<EpochReport> epochs;
  std::vector<float> step_losses;
  std::size_t dropped = 0;
  double seconds = 0;

  // One JSON object per epoch.
  std::string to_jsonl() const;
};

struct TrainHooks {
  // When set, adapters are written here as adapter-epoch-<n>.bin after each epoch.
  std::optional<std::filesystem::path> checkpoint_dir;
  std::optional<LoraConfig> lora_config;
  std::function<void(const EpochReport&)> on_epoch;
};

// Shuffled mini-batches for config.epochs epochs; deterministic in config.seed.
// Throws ConfigError for an empty dataset or a model without adapters.
TrainReport train(DecoderModel& model, const std::vector<InstructionRecord>& records,
                  const PromptFormat& format, const TrainConfig& config,
                  const TrainHooks& hooks = {});

// Full-parameter language-model training on raw text (used to build base models).
struct PretrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t seq_len = 128;
  std::size_t steps = 200;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
};

// Returns per-step losses. Throws StateError if the model carries adapters.
std::vector<float> pretrain(DecoderModel& model, const std::vector<std::string>& documents,
                            const PretrainConfig& config,
                            const std::function<void(std::size_t, float)>& on_step = {});

}  // namespace forge
