#include "forge/lora.hpp"

#include <algorithm>
#include <map>

#include "forge/archive.hpp"
#include "forge/errors.hpp"
#include "forge/kernels.hpp"

namespace forge {

namespace {

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ", ") + s;
  return out;
}

}  // namespace

void LoraConfig::validate() const {
  if (rank == 0) throw ConfigError("lora rank must be positive");
  if (!(alpha > 0.0)) throw ConfigError("lora alpha must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("lora dropout must lie in [0, 1)");
  if (target_names.empty()) throw ConfigError("lora target_names must not be empty");
  for (const auto& t : target_names)
    if (t.empty()) throw ConfigError("lora target pattern must not be empty");
}

nlohmann::ordered_json LoraConfig::to_json() const {
  return {{"rank", rank},
          {"alpha", alpha},
          {"dropout", dropout},
          {"target_names", target_names},
          {"seed", seed}};
}

LoraConfig LoraConfig::from_json(const nlohmann::json& j) {
  LoraConfig c;
  c.rank = j.at("rank").get<std::size_t>();
  c.alpha = j.at("alpha").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.target_names = j.at("target_names").get<std::vector<std::string>>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

LoraAdapter::LoraAdapter(std::string target, Tensor base, std::size_t rank, double alpha,
                         double dropout, std::mt19937_64& rng)
    : target_(std::move(target)),
      base_(std::move(base)),
      rank_(rank),
      scaling_(static_cast<float>(alpha / static_cast<double>(rank))),
      dropout_(dropout) {
  if (base_.rank() != 2) throw DimensionError("lora target '" + target_ + "' is not a matrix");
  const std::size_t d = base_.dim(0), k = base_.dim(1);
  if (rank == 0 || rank > std::min(d, k))
    throw ConfigError("lora rank " + std::to_string(rank) + " invalid for '" + target_ + "' (" +
                      shape_string(base_.shape()) + ")");
  std::normal_distribution<float> dist(0.0F, 1.0F / static_cast<float>(rank));
  std::vector<float> a(rank * k);
  for (auto& v : a) v = dist(rng);
  a_ = Tensor::from_data({rank, k}, std::move(a), true);
  b_ = Tensor::zeros({d, rank}, true);
}

Tensor LoraAdapter::forward(const Tensor& x, const ForwardOptions& options) const {
  if (merged_) throw StateError("adapter '" + target_ + "' is merged; use the plain weight");
  if (x.rank() != 2 || x.dim(1) != in_features())
    throw DimensionError("adapter '" + target_ + "': input " + shape_string(x.shape()) +
                         " needs " + std::to_string(in_features()) + " columns");
  const Tensor frozen = linear(x, base_);
  Tensor xin = x;
  if (options.training && dropout_ > 0.0) {
    if (options.rng == nullptr) throw ContractError("training-mode dropout needs an rng");
    xin = forge::dropout(x, dropout_, true, *options.rng);
  }
  const Tensor low = linear(xin, a_);
  const Tensor delta_out = linear(low, b_);
  return add(frozen, scale(delta_out, scaling_));
}

Tensor LoraAdapter::delta() const {
  const std::size_t d = out_features(), k = in_features();
  std::vector<float> out(d * k);
  kernels::omp::gemm_nn<float>(b_.data(), a_.data(), out, d, rank_, k);
  for (auto& v : out) v *= scaling_;
  return Tensor::from_data({d, k}, std::move(out));
}

Tensor LoraAdapter::merged_weight() const {
  const auto w0 = merged_ ? std::span<const float>(unmerged_base_) : base_.data();
  const Tensor dw = delta();
  std::vector<float> out(w0.begin(), w0.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += dw.data()[i];
  return Tensor::from_data(base_.shape(), std::move(out));
}

void LoraAdapter::merge() {
  if (merged_) throw StateError("adapter '" + target_ + "' is already merged");
  const Tensor w = merged_weight();
  unmerged_base_.assign(base_.data().begin(), base_.data().end());
  base_.assign(w.data());
  merged_ = true;
}

void LoraAdapter::unmerge() {
  if (!merged_) throw StateError("adapter '" + target_ + "' is not merged");
  base_.assign(unmerged_base_);
  unmerged_base_.clear();
  merged_ = false;
}

LoraAdapter LoraAdapter::clone_onto(Tensor base) const {
  if (base.shape() != base_.shape())
    throw DimensionError("clone_onto: weight " + shape_string(base.shape()) + " vs " +
                         shape_string(base_.shape()));
  LoraAdapter copy;
  copy.target_ = target_;
  copy.base_ = std::move(base);
  copy.a_ = a_.clone();
  copy.b_ = b_.clone();
  copy.rank_ = rank_;
  copy.scaling_ = scaling_;
  copy.dropout_ = dropout_;
  copy.merged_ = merged_;
  copy.unmerged_base_ = unmerged_base_;
  return copy;
}

Tensor adapted_forward(const LoraAdapter& adapter, const Tensor& x, const ForwardOptions& options) {
  return adapter.forward(x, options);
}

bool matches_target(std::string_view parameter_name, std::string_view pattern) {
  if (pattern.empty()) return false;
  if (parameter_name == pattern) return true;
  std::size_t start = 0;
  while (start <= parameter_name.size()) {
    const auto dot = parameter_name.find('.', start);
    const auto part = parameter_name.substr(start, dot == std::string_view::npos
                                                       ? std::string_view::npos
                                                       : dot - start);
    if (part == pattern) return true;
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return false;
}

std::size_t inject(DecoderModel& model, const LoraConfig& config) {
  config.validate();
  auto linears = model.linears();

  std::vector<Linear*> selected;
  std::map<std::string, std::size_t> hits;
  for (const auto& pattern : config.target_names) hits[pattern] = 0;
  for (Linear* lin : linears) {
    bool any = false;
    for (const auto& pattern : config.target_names) {
      if (matches_target(lin->name, pattern)) {
        ++hits[pattern];
        any = true;
      }
    }
    if (any) selected.push_back(lin);
  }
  std::vector<std::string> unmatched;
  for (const auto& [pattern, n] : hits)
    if (n == 0) unmatched.push_back(pattern);
  if (!unmatched.empty())
    throw ConfigError("lora target pattern(s) matched no parameter: " + join(unmatched) +
                      " (layout " + std::string(to_string(model.config().layout)) + ")");
  for (const Linear* lin : selected) {
    if (lin->adapter) throw StateError("'" + lin->name + "' already carries an adapter");
    const auto& shape = lin->weight.shape();
    if (config.rank > std::min(shape[0], shape[1]))
      throw ConfigError("lora rank " + std::to_string(config.rank) + " exceeds min(d, k) of '" +
                        lin->name + "' " + shape_string(shape));
  }

  for (auto& [name, tensor] : model.named_parameters()) {
    Tensor t = tensor;
    t.set_requires_grad(false);
  }
  std::mt19937_64 rng(config.seed);
  for (Linear* lin : selected)
    lin->adapter = std::make_shared<LoraAdapter>(lin->name, lin->weight, config.rank,
                                                 config.alpha, config.dropout, rng);
  return selected.size();
}

std::vector<NamedTensor> adapter_parameters(const DecoderModel& model) {
  std::vector<NamedTensor> out;
  for (const Linear* lin : model.linears()) {
    if (!lin->adapter) continue;
    out.push_back({lin->name + ".lora_A", lin->adapter->a()});
    out.push_back({lin->name + ".lora_B", lin->adapter->b()});
  }
  return out;
}

std::size_t adapter_count(const DecoderModel& model) {
  std::size_t n = 0;
  for (const Linear* lin : model.linears()) n += lin->adapter ? 1 : 0;
  return n;
}

std::size_t trainable_param_count(const DecoderModel& model) {
  std::size_t n = 0;
  for (const Linear* lin : model.linears())
    if (lin->adapter) n += lin->adapter->trainable_param_count();
  return n;
}

void merge_all(DecoderModel& model) {
  for (Linear* lin : model.linears())
    if (lin->adapter) lin->adapter->merge();
}

void unmerge_all(DecoderModel& model) {
  for (Linear* lin : model.linears())
    if (lin->adapter) lin->adapter->unmerge();
}

void save_adapters(const DecoderModel& model, const LoraConfig& config,
                   const std::filesystem::path& path) {
  if (adapter_count(model) == 0) throw StateError("model has no adapters to save");
  TensorArchive archive;
  archive.meta["kind"] = "lora";
  archive.meta["lora"] = config.to_json();
  archive.meta["base_config"] = model.config().to_json();
  for (const auto& [name, tensor] : adapter_parameters(model))
    archive.entries.push_back({name, tensor.shape(), {tensor.data().begin(), tensor.data().end()}});
  write_archive(path, archive);
}

LoraConfig load_adapters(DecoderModel& model, const std::filesystem::path& path) {
  const TensorArchive archive = read_archive(path);
  LoraConfig config;
  ModelConfig base;
  try {
    if (archive.meta.at("kind").get<std::string>() != "lora")
      throw IntegrityError("'" + path.string() + "' is not an adapter checkpoint");
    config = LoraConfig::from_json(archive.meta.at("lora"));
    base = ModelConfig::from_json(archive.meta.at("base_config"));
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("adapter checkpoint '" + path.string() + "' has an invalid manifest: " +
                         e.what());
  }
  base.seed = model.config().seed;
  if (!(base == model.config()))
    throw IntegrityError("adapter checkpoint '" + path.string() +
                         "' was trained on a different base architecture");

  DecoderModel candidate = model.clone();
  inject(candidate, config);
  const auto params = adapter_parameters(candidate);
  if (params.size() != archive.entries.size())
    throw IntegrityError("adapter checkpoint holds " + std::to_string(archive.entries.size()) +
                         " tensors, expected " + std::to_string(params.size()));
  for (const auto& [name, tensor] : params) {
    const ArchiveEntry* e = archive.find(name);
    if (e == nullptr || e->shape != tensor.shape())
      throw IntegrityError("adapter checkpoint tensor '" + name + "' missing or misshapen");
  }
  for (const auto& [name, tensor] : params) {
    Tensor t = tensor;
    t.assign(archive.find(name)->values);
  }
  model = std::move(candidate);
  return config;
}

}  // namespace forge
