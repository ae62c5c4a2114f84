#include "forge/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <numeric>
#include <sstream>

#include "forge/errors.hpp"

namespace forge {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

float masked_loss_step(DecoderModel& model, const TrainingBatch& batch, AdamW& optimizer,
                       std::mt19937_64& rng) {
  ForwardOptions options{true, &rng};
  const Tensor logits = model.forward(batch.tokens, batch.batch, batch.seq_len, options);
  const Tensor loss = softmax_cross_entropy(logits, batch.targets, batch.loss_mask);
  const auto grads = backward(loss);
  optimizer.step(grads);
  return loss.item();
}

}  // namespace

std::string_view to_string(MaskPolicy policy) {
  return policy == MaskPolicy::kResponseOnly ? "response-only" : "full-sequence";
}

MaskPolicy parse_mask_policy(std::string_view tag) {
  if (tag == "response-only") return MaskPolicy::kResponseOnly;
  if (tag == "full-sequence") return MaskPolicy::kFullSequence;
  throw ConfigError("unknown mask policy \"" + std::string(tag) +
                    "\" (expected response-only or full-sequence)");
}

void TrainConfig::validate(const ModelConfig& model) const {
  if (!(learning_rate >= 0.0)) throw ConfigError("train.lr must be non-negative");
  if (batch_size == 0) throw ConfigError("train.batch must be positive");
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (train_seq_len < 2) throw ConfigError("train.seq_len must be >= 2");
  if (train_seq_len > model.max_seq_len)
    throw ConfigError("train.seq_len (" + std::to_string(train_seq_len) +
                      ") exceeds model.max_seq_len (" + std::to_string(model.max_seq_len) + ")");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("adam eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

nlohmann::ordered_json TrainConfig::to_json() const {
  return {{"lr", learning_rate},
          {"batch", batch_size},
          {"epochs", epochs},
          {"seq_len", train_seq_len},
          {"mask_policy", std::string(to_string(mask_policy))},
          {"seed", seed},
          {"beta1", beta1},
          {"beta2", beta2},
          {"eps", eps},
          {"weight_decay", weight_decay}};
}

EncodedExample encode_example(const InstructionRecord& record, const PromptFormat& format) {
  const std::string prompt = render_prompt(record, format, RenderMode::kInference);
  EncodedExample ex;
  ex.tokens.reserve(prompt.size() + record.output.size() + 2);
  ex.tokens.push_back(ByteTokenizer::kBos);
  for (TokenId t : ByteTokenizer::encode(prompt)) ex.tokens.push_back(t);
  ex.response_begin = ex.tokens.size();
  for (TokenId t : ByteTokenizer::encode(record.output)) ex.tokens.push_back(t);
  ex.tokens.push_back(ByteTokenizer::kEos);
  return ex;
}

TrainingBatch build_batch(std::span<const EncodedExample> examples, std::size_t seq_len,
                          MaskPolicy policy) {
  if (examples.empty()) throw ContractError("build_batch: no examples");
  if (seq_len < 2) throw ContractError("build_batch: seq_len must be >= 2");
  TrainingBatch batch;
  batch.seq_len = seq_len;
  constexpr auto kPad = static_cast<std::size_t>(ByteTokenizer::kPad);

  for (std::size_t idx = 0; idx < examples.size(); ++idx) {
    const auto& ex = examples[idx];
    const std::size_t response_len = ex.tokens.size() - ex.response_begin;
    if (response_len > seq_len) {
      ++batch.dropped;
      batch.warnings.push_back("example " + std::to_string(idx) + ": response of " +
                               std::to_string(response_len) + " tokens exceeds seq_len " +
                               std::to_string(seq_len) + "; dropped");
      continue;
    }
    // Keep the tail so the response survives truncation.
    const std::size_t drop = ex.tokens.size() > seq_len ? ex.tokens.size() - seq_len : 0;
    const std::size_t n = ex.tokens.size() - drop;
    const std::size_t response_begin = ex.response_begin - std::min(drop, ex.response_begin);

    std::vector<TokenId> row(seq_len, ByteTokenizer::kPad);
    std::vector<std::size_t> targets(seq_len, kPad);
    std::vector<std::uint8_t> mask(seq_len, 0);
    std::copy_n(ex.tokens.begin() + static_cast<std::ptrdiff_t>(drop), n, row.begin());
    std::size_t active = 0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      targets[i] = static_cast<std::size_t>(row[i + 1]);
      const bool in_scope = policy == MaskPolicy::kFullSequence || i + 1 >= response_begin;
      if (in_scope && targets[i] != kPad) {
        mask[i] = 1;
        ++active;
      }
    }
    if (active == 0) {
      ++batch.dropped;
      batch.warnings.push_back("example " + std::to_string(idx) +
                               ": no loss-bearing positions; dropped");
      continue;
    }
    batch.tokens.insert(batch.tokens.end(), row.begin(), row.end());
    batch.targets.insert(batch.targets.end(), targets.begin(), targets.end());
    batch.loss_mask.insert(batch.loss_mask.end(), mask.begin(), mask.end());
    ++batch.batch;
  }
  return batch;
}

TrainingBatch build_batch(std::span<const InstructionRecord> records, const PromptFormat& format,
                          const TrainConfig& config) {
  if (records.empty()) throw ContractError("build_batch: no records");
  std::vector<EncodedExample> examples;
  examples.reserve(records.size());
  for (const auto& r : records) examples.push_back(encode_example(r, format));
  return build_batch(examples, config.train_seq_len, config.mask_policy);
}

AdamW::AdamW(std::vector<Tensor> params, Options options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0F);
    v_.emplace_back(p.numel(), 0.0F);
  }
}

void AdamW::step(const Gradients<float>& grads) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(options_.beta1, t);
  const double bc2 = 1.0 - std::pow(options_.beta2, t);
  const auto b1 = static_cast<float>(options_.beta1);
  const auto b2 = static_cast<float>(options_.beta2);
  const auto lr = static_cast<float>(options_.learning_rate);
  const auto step_size = static_cast<float>(options_.learning_rate / bc1);
  const auto inv_sqrt_bc2 = static_cast<float>(1.0 / std::sqrt(bc2));
  const auto eps = static_cast<float>(options_.eps);
  const auto decay = static_cast<float>(options_.learning_rate * options_.weight_decay);
  for (std::size_t p = 0; p < params_.size(); ++p) {
    if (!grads.contains(params_[p])) continue;
    const std::vector<float> g = grads.of(params_[p]);
    std::vector<float> w(params_[p].data().begin(), params_[p].data().end());
    auto& m = m_[p];
    auto& v = v_[p];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0F - b1) * g[i];
      v[i] = b2 * v[i] + (1.0F - b2) * g[i] * g[i];
      const float denom = std::sqrt(v[i]) * inv_sqrt_bc2 + eps;
      w[i] -= decay * w[i];
      w[i] -= step_size * m[i] / denom;
    }
    (void)lr;
    params_[p].assign(w);
  }
}

AdamW make_adapter_optimizer(const DecoderModel& model, const TrainConfig& config) {
  std::vector<Tensor> params;
  for (auto& [name, tensor] : adapter_parameters(model)) params.push_back(tensor);
  return AdamW(std::move(params), {config.learning_rate, config.beta1, config.beta2, config.eps,
                                   config.weight_decay});
}

float train_step(DecoderModel& model, const TrainingBatch& batch, AdamW& optimizer,
                 std::mt19937_64& rng) {
  if (adapter_count(model) == 0)
    throw ConfigError("train_step: the model has no adapters; inject LoRA first");
  if (batch.batch == 0) throw ContractError("train_step: empty batch");
  return masked_loss_step(model, batch, optimizer, rng);
}

nlohmann::ordered_json EpochReport::to_json() const {
  return {{"epoch", epoch}, {"mean_loss", mean_loss}, {"dropped", dropped},
          {"seconds", seconds}, {"steps", steps}};
}

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) out += e.to_json().dump() + "\n";
  return out;
}

TrainReport train(DecoderModel& model, const std::vector<InstructionRecord>& records,
                  const PromptFormat& format, const TrainConfig& config,
                  const TrainHooks& hooks) {
  config.validate(model.config());
  if (records.empty()) throw ConfigError("training dataset is empty");
  if (adapter_count(model) == 0)
    throw ConfigError("train: the model has no adapters; inject LoRA first");
  if (hooks.checkpoint_dir && !hooks.lora_config)
    throw ConfigError("train: per-epoch checkpoints need the LoRA config");

  const auto start = Clock::now();
  TrainReport report;

  // Examples whose response cannot fit are dropped once, up front.
  std::vector<EncodedExample> examples;
  for (const auto& r : records) {
    EncodedExample ex = encode_example(r, format);
    if (ex.tokens.size() - ex.response_begin > config.train_seq_len) {
      ++report.dropped;
      continue;
    }
    examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw ConfigError("every training record was dropped as overlong");

  AdamW optimizer = make_adapter_optimizer(model, config);
  std::mt19937_64 shuffle_rng(config.seed);
  std::mt19937_64 dropout_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(examples.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const std::size_t n_batches = (order.size() + config.batch_size - 1) / config.batch_size;
    auto make_batch = [&](std::size_t b) {
      std::vector<EncodedExample> chunk;
      const std::size_t end = std::min(order.size(), (b + 1) * config.batch_size);
      for (std::size_t i = b * config.batch_size; i < end; ++i) chunk.push_back(examples[order[i]]);
      return build_batch(chunk, config.train_seq_len, config.mask_policy);
    };

    // At most one batch is prepared ahead of the one being trained on.
    std::future<TrainingBatch> next = std::async(std::launch::async, make_batch, 0);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      TrainingBatch batch = next.get();
      if (b + 1 < n_batches) next = std::async(std::launch::async, make_batch, b + 1);
      if (batch.batch == 0) continue;
      const float loss = masked_loss_step(model, batch, optimizer, dropout_rng);
      report.step_losses.push_back(loss);
      loss_sum += loss;
      ++steps;
    }

    EpochReport er;
    er.epoch = epoch;
    er.mean_loss = steps ? loss_sum / static_cast<double>(steps) : 0.0;
    er.dropped = report.dropped;
    er.steps = steps;
    er.seconds = seconds_since(epoch_start);
    report.epochs.push_back(er);
    if (hooks.checkpoint_dir) {
      std::filesystem::create_directories(*hooks.checkpoint_dir);
      save_adapters(model, *hooks.lora_config,
                    *hooks.checkpoint_dir / ("adapter-epoch-" + std::to_string(epoch) + ".bin"));
    }
    if (hooks.on_epoch) hooks.on_epoch(er);
  }
  report.seconds = seconds_since(start);
  return report;
}

std::vector<float> pretrain(DecoderModel& model, const std::vector<std::string>& documents,
                            const PretrainConfig& config,
                            const std::function<void(std::size_t, float)>& on_step) {
  if (adapter_count(model) != 0)
    throw StateError("pretrain updates base weights; remove adapters first");
  if (documents.empty()) throw ConfigError("pretraining corpus is empty");
  if (config.batch_size == 0 || config.seq_len < 2 || config.steps == 0)
    throw ConfigError("pretrain batch, seq_len and steps must be positive");
  if (config.seq_len > model.config().max_seq_len)
    throw ConfigError("pretrain seq_len exceeds model.max_seq_len");

  TokenSequence stream;
  for (const auto& doc : documents) {
    stream.push_back(ByteTokenizer::kBos);
    for (TokenId t : ByteTokenizer::encode(doc)) stream.push_back(t);
    stream.push_back(ByteTokenizer::kEos);
  }
  const std::size_t window = config.seq_len + 1;
  if (stream.size() < window) throw ConfigError("pretraining corpus shorter than one window");

  std::vector<Tensor> params;
  for (auto& [name, tensor] : model.named_parameters()) {
    Tensor t = tensor;
    t.set_requires_grad(true);
    params.push_back(t);
  }
  AdamW optimizer(std::move(params),
                  {config.learning_rate, 0.9, 0.999, 1e-8, config.weight_decay});
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> start_dist(0, stream.size() - window);

  std::vector<float> losses;
  losses.reserve(config.steps);
  for (std::size_t step = 0; step < config.steps; ++step) {
    TrainingBatch batch;
    batch.batch = config.batch_size;
    batch.seq_len = config.seq_len;
    for (std::size_t b = 0; b < config.batch_size; ++b) {
      const std::size_t s = start_dist(rng);
      for (std::size_t i = 0; i < config.seq_len; ++i) {
        batch.tokens.push_back(stream[s + i]);
        batch.targets.push_back(static_cast<std::size_t>(stream[s + i + 1]));
        batch.loss_mask.push_back(1);
      }
    }
    const float loss = masked_loss_step(model, batch, optimizer, rng);
    losses.push_back(loss);
    if (on_step) on_step(step, loss);
  }
  return losses;
}

}  // namespace forge
