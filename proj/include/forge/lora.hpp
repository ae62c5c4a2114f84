#pragma once

// Low-rank adaptation of named projection weights.
//
// A frozen weight W0 (d×k, applied as x·W0ᵀ) gains a trainable delta
// ΔW = B·A with A: r×k and B: d×r, so the layer computes
//
//     y = x·W0ᵀ + (alpha / r) · dropout(x)·Aᵀ·Bᵀ
//
// B starts at zero, which makes a freshly injected model reproduce the base
// model exactly. Only A and B are trainable: (d + k)·r values per adapter
// instead of d·k.

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/model.hpp"

namespace forge {

struct LoraConfig {
  std::size_t rank = 4;
  double alpha = 16.0;
  double dropout = 0.05;
  std::vector<std::string> target_names = {"q_proj", "v_proj"};
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
  double scaling() const { return alpha / static_cast<double>(rank); }

  nlohmann::ordered_json to_json() const;
  static LoraConfig from_json(const nlohmann::json& j);
};

class LoraAdapter {
 public:
  // `base` is the layer's weight tensor (shared, not copied).
  LoraAdapter(std::string target, Tensor base, std::size_t rank, double alpha, double dropout,
              std::mt19937_64& rng);

  const std::string& target() const { return target_; }
  std::size_t rank() const { return rank_; }
  std::size_t out_features() const { return base_.dim(0); }  // d
  std::size_t in_features() const { return base_.dim(1); }   // k
  float scaling() const { return scaling_; }
  double dropout() const { return dropout_; }

  const Tensor& a() const { return a_; }
  const Tensor& b() const { return b_; }
  const Tensor& base() const { return base_; }

  // x·W0ᵀ + scaling·dropout(x)·Aᵀ·Bᵀ; dropout only when options.training.
  // Throws DimensionError for a column count != k, StateError while merged.
  Tensor forward(const Tensor& x, const ForwardOptions& options) const;

  // scaling·B·A as a d×k leaf.
  Tensor delta() const;
  // W0 + scaling·B·A as a d×k leaf (the deployable plain weight).
  Tensor merged_weight() const;

  // Fold the delta into the shared base weight / restore the exact pre-merge values.
  void merge();
  void unmerge();
  bool merged() const { return merged_; }

  std::size_t trainable_param_count() const { return (out_features() + in_features()) * rank_; }

  // Copy of A/B/state attached to a different weight tensor of the same shape.
  LoraAdapter clone_onto(Tensor base) const;

 private:
  LoraAdapter() = default;

  std::string target_;
  Tensor base_;
  Tensor a_;
  Tensor b_;
  std::size_t rank_ = 0;
  float scaling_ = 0;
  double dropout_ = 0;
  bool merged_ = false;
  std::vector<float> unmerged_base_;
};

Tensor adapted_forward(const LoraAdapter& adapter, const Tensor& x,
                       const ForwardOptions& options = {});

// A pattern selects a projection when it equals its full name or one of its
// dot-separated components ("v_proj" selects "layers.0.attn.v_proj").
bool matches_target(std::string_view parameter_name, std::string_view pattern);

// Attaches adapters to every matching projection and freezes all base
// parameters. Returns the number of adapters created. Throws ConfigError if a
// pattern matches nothing or the rank exceeds min(d, k), StateError if a
// projection already carries an adapter.
std::size_t inject(DecoderModel& model, const LoraConfig& config);

// "<target>.lora_A" / "<target>.lora_B" pairs in projection order.
std::vector<NamedTensor> adapter_parameters(const DecoderModel& model);
std::size_t adapter_count(const DecoderModel& model);

// Σ (d + k)·r over all adapters; 0 without adapters.
std::size_t trainable_param_count(const DecoderModel& model);

void merge_all(DecoderModel& model);
void unmerge_all(DecoderModel& model);

// Adapter checkpoint: only the A/B tensors plus the LoraConfig and base-model
// architecture in the manifest.
void save_adapters(const DecoderModel& model, const LoraConfig& config,
                   const std::filesystem::path& path);
// Injects adapters per the stored config into an un-adapted model and loads A/B.
// Throws IntegrityError when the base architecture or tensor set disagrees.
LoraConfig load_adapters(DecoderModel& model, const std::filesystem::path& path);

}  // namespace forge
