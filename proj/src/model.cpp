#include "forge/model.hpp"

#include <cmath>

#include "forge/archive.hpp"
#include "forge/errors.hpp"
#include "forge/lora.hpp"

namespace forge {

namespace {

constexpr float kInitStd = 0.02F;
constexpr float kNormEps = 1e-5F;

Tensor normal_weight(std::size_t rows, std::size_t cols, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0F, stddev);
  std::vector<float> values(rows * cols);
  for (auto& v : values) v = dist(rng);
  return Tensor::from_data({rows, cols}, std::move(values), true);
}

LayerNormParams make_norm(std::string name, std::size_t d) {
  return {std::move(name), Tensor::full({d}, 1.0F, true), Tensor::zeros({d}, true)};
}

void push_norm(std::vector<NamedTensor>& out, const LayerNormParams& norm) {
  out.push_back({norm.name + ".gain", norm.gain});
  out.push_back({norm.name + ".bias", norm.bias});
}

bool same_architecture(const ModelConfig& a, const ModelConfig& b) {
  return a.vocab_size == b.vocab_size && a.d_model == b.d_model && a.n_heads == b.n_heads &&
         a.n_layers == b.n_layers && a.max_seq_len == b.max_seq_len &&
         a.ffn_multiplier == b.ffn_multiplier && a.layout == b.layout;
}

}  // namespace

std::string_view to_string(AttentionLayout layout) {
  return layout == AttentionLayout::kFusedQkv ? "fused-qkv" : "split-qv";
}

AttentionLayout parse_attention_layout(std::string_view tag) {
  if (tag == "fused-qkv") return AttentionLayout::kFusedQkv;
  if (tag == "split-qv") return AttentionLayout::kSplitQv;
  throw ConfigError("unknown attention layout \"" + std::string(tag) +
                    "\" (expected fused-qkv or split-qv)");
}

void ModelConfig::validate() const {
  if (vocab_size == 0) throw ConfigError("model.vocab_size must be positive");
  if (d_model == 0 || n_heads == 0 || n_layers == 0 || ffn_multiplier == 0)
    throw ConfigError("model dimensions must be positive");
  if (d_model % n_heads != 0)
    throw ConfigError("model.d_model (" + std::to_string(d_model) +
                      ") must be divisible by model.n_heads (" + std::to_string(n_heads) + ")");
  if (head_dim() % 2 != 0) throw ConfigError("rotary encoding needs an even head dimension");
  if (max_seq_len < 1) throw ConfigError("model.max_seq_len must be >= 1");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"vocab_size", vocab_size}, {"d_model", d_model},
          {"n_heads", n_heads},       {"n_layers", n_layers},
          {"max_seq_len", max_seq_len}, {"ffn_multiplier", ffn_multiplier},
          {"layout", std::string(forge::to_string(layout))}, {"seed", seed}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.ffn_multiplier = j.at("ffn_multiplier").get<std::size_t>();
  c.layout = parse_attention_layout(j.at("layout").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

DecoderModel DecoderModel::init(const ModelConfig& config) {
  config.validate();
  DecoderModel m(config);
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.d_model;
  const std::size_t hidden = d * config.ffn_multiplier;
  const float out_std = kInitStd / std::sqrt(2.0F * static_cast<float>(config.n_layers));

  m.embed_tokens_ = normal_weight(config.vocab_size, d, kInitStd, rng);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l);
    DecoderLayer layer;
    layer.input_norm = make_norm(p + ".input_norm", d);
    if (config.layout == AttentionLayout::kFusedQkv) {
      layer.attention.push_back({p + ".attn.query_key_value", normal_weight(3 * d, d, kInitStd, rng), nullptr});
      layer.attention.push_back({p + ".attn.dense", normal_weight(d, d, out_std, rng), nullptr});
    } else {
      for (const char* n : {"q_proj", "k_proj", "v_proj"})
        layer.attention.push_back({p + ".attn." + n, normal_weight(d, d, kInitStd, rng), nullptr});
      layer.attention.push_back({p + ".attn.o_proj", normal_weight(d, d, out_std, rng), nullptr});
    }
    layer.post_attention_norm = make_norm(p + ".post_attention_norm", d);
    layer.up_proj = {p + ".mlp.up_proj", normal_weight(hidden, d, kInitStd, rng), nullptr};
    layer.down_proj = {p + ".mlp.down_proj", normal_weight(d, hidden, out_std, rng), nullptr};
    m.layers_.push_back(std::move(layer));
  }
  m.final_norm_ = make_norm("final_norm", d);
  m.lm_head_ = {"lm_head", normal_weight(config.vocab_size, d, kInitStd, rng), nullptr};
  return m;
}

std::vector<NamedTensor> DecoderModel::named_parameters() const {
  std::vector<NamedTensor> out;
  out.push_back({"embed_tokens", embed_tokens_});
  for (const auto& layer : layers_) {
    push_norm(out, layer.input_norm);
    for (const auto& lin : layer.attention) out.push_back({lin.name, lin.weight});
    push_norm(out, layer.post_attention_norm);
    out.push_back({layer.up_proj.name, layer.up_proj.weight});
    out.push_back({layer.down_proj.name, layer.down_proj.weight});
  }
  push_norm(out, final_norm_);
  out.push_back({lm_head_.name, lm_head_.weight});
  return out;
}

std::vector<Linear*> DecoderModel::linears() {
  std::vector<Linear*> out;
  for (auto& layer : layers_) {
    for (auto& lin : layer.attention) out.push_back(&lin);
    out.push_back(&layer.up_proj);
    out.push_back(&layer.down_proj);
  }
  out.push_back(&lm_head_);
  return out;
}

std::vector<const Linear*> DecoderModel::linears() const {
  std::vector<const Linear*> out;
  for (auto* lin : const_cast<DecoderModel*>(this)->linears()) out.push_back(lin);
  return out;
}

Tensor DecoderModel::project(const Linear& lin, const Tensor& x,
                             const ForwardOptions& options) const {
  if (lin.adapter && !lin.adapter->merged()) return lin.adapter->forward(x, options);
  return linear(x, lin.weight);
}

Tensor DecoderModel::forward(std::span<const TokenId> tokens, std::size_t batch, std::size_t seq,
                             const ForwardOptions& options) const {
  if (batch == 0 || seq == 0 || tokens.size() != batch * seq)
    throw DimensionError("forward: " + std::to_string(tokens.size()) + " tokens for batch " +
                         std::to_string(batch) + " × seq " + std::to_string(seq));
  if (seq > config_.max_seq_len)
    throw ContextOverflowError("input of " + std::to_string(seq) +
                               " tokens exceeds the model context of " +
                               std::to_string(config_.max_seq_len));
  const std::size_t d = config_.d_model;
  const std::size_t heads = config_.n_heads;

  Tensor x = embedding(embed_tokens_, tokens);
  for (const auto& layer : layers_) {
    const Tensor h = layer_norm(x, layer.input_norm.gain, layer.input_norm.bias, kNormEps);
    Tensor q, k, v;
    if (config_.layout == AttentionLayout::kFusedQkv) {
      const Tensor qkv = project(layer.attention[0], h, options);
      q = slice_cols(qkv, 0, d);
      k = slice_cols(qkv, d, 2 * d);
      v = slice_cols(qkv, 2 * d, 3 * d);
    } else {
      q = project(layer.attention[0], h, options);
      k = project(layer.attention[1], h, options);
      v = project(layer.attention[2], h, options);
    }
    q = rotary(q, heads, seq);
    k = rotary(k, heads, seq);
    const Tensor attn = causal_attention(q, k, v, batch, seq, heads);
    x = add(x, project(layer.attention.back(), attn, options));

    const Tensor h2 =
        layer_norm(x, layer.post_attention_norm.gain, layer.post_attention_norm.bias, kNormEps);
    const Tensor up = gelu(project(layer.up_proj, h2, options));
    x = add(x, project(layer.down_proj, up, options));
  }
  x = layer_norm(x, final_norm_.gain, final_norm_.bias, kNormEps);
  return project(lm_head_, x, options);
}

Tensor DecoderModel::forward(std::span<const TokenId> tokens) const {
  return forward(tokens, 1, tokens.size());
}

std::vector<float> DecoderModel::logits(std::span<const TokenId> tokens) const {
  NoGradGuard no_grad;
  const Tensor out = forward(tokens);
  return {out.data().begin(), out.data().end()};
}

DecoderModel DecoderModel::clone() const {
  DecoderModel copy(config_);
  auto copy_norm = [](const LayerNormParams& n) {
    return LayerNormParams{n.name, n.gain.clone(), n.bias.clone()};
  };
  auto copy_linear = [](const Linear& lin) {
    Linear out{lin.name, lin.weight.clone(), nullptr};
    if (lin.adapter) out.adapter = std::make_shared<LoraAdapter>(lin.adapter->clone_onto(out.weight));
    return out;
  };
  copy.embed_tokens_ = embed_tokens_.clone();
  for (const auto& layer : layers_) {
    DecoderLayer l;
    l.input_norm = copy_norm(layer.input_norm);
    for (const auto& lin : layer.attention) l.attention.push_back(copy_linear(lin));
    l.post_attention_norm = copy_norm(layer.post_attention_norm);
    l.up_proj = copy_linear(layer.up_proj);
    l.down_proj = copy_linear(layer.down_proj);
    copy.layers_.push_back(std::move(l));
  }
  copy.final_norm_ = copy_norm(final_norm_);
  copy.lm_head_ = copy_linear(lm_head_);
  return copy;
}

void save_checkpoint(const DecoderModel& model, const std::filesystem::path& path) {
  TensorArchive archive;
  archive.meta["kind"] = "model";
  archive.meta["layout"] = std::string(to_string(model.config().layout));
  archive.meta["config"] = model.config().to_json();
  for (const auto& [name, tensor] : model.named_parameters())
    archive.entries.push_back({name, tensor.shape(), {tensor.data().begin(), tensor.data().end()}});
  write_archive(path, archive);
}

DecoderModel load_checkpoint(const std::filesystem::path& path) {
  const TensorArchive archive = read_archive(path);
  ModelConfig config;
  try {
    if (archive.meta.at("kind").get<std::string>() != "model")
      throw IntegrityError("'" + path.string() + "' is not a model checkpoint");
    config = ModelConfig::from_json(archive.meta.at("config"));
    if (archive.meta.at("layout").get<std::string>() != to_string(config.layout))
      throw IntegrityError("checkpoint layout tag disagrees with its config");
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("checkpoint '" + path.string() + "' has an invalid manifest: " + e.what());
  } catch (const ConfigError& e) {
    throw IntegrityError("checkpoint '" + path.string() + "' holds an invalid config: " + e.what());
  }

  DecoderModel model = DecoderModel::init(config);
  const auto params = model.named_parameters();
  if (archive.entries.size() != params.size())
    throw IntegrityError("checkpoint '" + path.string() + "' holds " +
                         std::to_string(archive.entries.size()) + " tensors, config implies " +
                         std::to_string(params.size()));
  for (const auto& [name, tensor] : params) {
    const ArchiveEntry* entry = archive.find(name);
    if (entry == nullptr) throw IntegrityError("checkpoint is missing tensor '" + name + "'");
    if (entry->shape != tensor.shape())
      throw IntegrityError("tensor '" + name + "' has shape " + shape_string(entry->shape) +
                           ", expected " + shape_string(tensor.shape()));
  }
  // Everything validated; only now overwrite the freshly initialized values.
  for (const auto& [name, tensor] : params) {
    Tensor t = tensor;
    t.assign(archive.find(name)->values);
  }
  return model;
}

DecoderModel load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  DecoderModel model = load_checkpoint(path);
  if (!same_architecture(model.config(), expected))
    throw IntegrityError("checkpoint '" + path.string() + "' (" +
                         std::string(to_string(model.config().layout)) + ", d_model " +
                         std::to_string(model.config().d_model) +
                         ") does not match the requested config (" +
                         std::string(to_string(expected.layout)) + ", d_model " +
                         std::to_string(expected.d_model) + ")");
  return model;
}

}  // namespace forge
