#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/fewshot.hpp"
#include "forge/model.hpp"
#include "forge/prompt.hpp"

namespace forge {

struct ScoreOptions {
  // Divide the summed log-likelihood by the continuation token count.
  bool length_normalize = false;
};

struct ContinuationScore {
  double log_likelihood = 0;  // summed over continuation tokens
  std::size_t tokens = 0;
  bool truncated = false;     // prompt was left-truncated to fit the context

  double value(const ScoreOptions& options) const {
    return options.length_normalize ? log_likelihood / static_cast<double>(tokens)
                                    : log_likelihood;
  }
};

// Natural-log probabilities in double precision.
std::vector<double> log_softmax(std::span<const float> logits);

// Σ log p(token | prefix) over the continuation tokens of BOS + prompt + continuation.
// Over-long prompts lose tokens from the left (after BOS); `protected_suffix` bytes
// at the end of the prompt must survive or ContextOverflowError is thrown.
// An empty continuation throws ContractError.
ContinuationScore score_continuation(const CausalLM& model, std::string_view prompt,
                                     std::string_view continuation,
                                     std::size_t protected_suffix = 0);

struct Classification {
  std::size_t predicted = 0;
  std::vector<double> scores;
  bool truncated = false;
  std::size_t input_tokens = 0;  // longest untruncated prompt + continuation
};

// Argmax over choices of the scored continuation; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> scores);

Classification classify_by_likelihood(const CausalLM& model, const ChoiceTask& task,
                                      const FewShotSpec& spec, PromptVersion version,
                                      const ScoreOptions& options = {});
Classification classify_by_likelihood(const CausalLM& model, const ChoiceTask& task,
                                      const FewShotSpec& spec, const ScoreOptions& options = {});

struct PerplexityItem {
  std::string question;
  std::string response;
};

struct PerplexityScore {
  double nll = 0;  // summed over response tokens
  std::size_t tokens = 0;
  double perplexity = 0;
  bool truncated = false;
};

// exp of the mean negative log-likelihood of the response tokens after the
// rendered question prompt. No EOS is scored. Empty response → ContractError.
PerplexityScore response_perplexity(const CausalLM& model, const PerplexityItem& item,
                                    const PromptTemplate& tpl = PromptTemplate::question());

struct PerplexitySummary {
  double pooled = 0;  // exp(total NLL / total tokens)
  double mean = 0;    // mean of per-item perplexities
  std::size_t total_tokens = 0;
  std::size_t truncated = 0;
  std::vector<PerplexityScore> items;

  nlohmann::ordered_json to_json() const;
};

PerplexitySummary corpus_perplexity(const CausalLM& model, const std::vector<PerplexityItem>& items,
                                    const PromptTemplate& tpl = PromptTemplate::question());

// JSON Lines {"question", "response"}.
std::vector<PerplexityItem> load_perplexity_items(const std::filesystem::path& path);

struct ShotAccuracy {
  std::size_t k = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
};

struct OverflowCounts {
  std::size_t tuning_length = 0;  // inputs longer than the tuning sequence length
  std::size_t model_length = 0;   // inputs longer than the model context (truncated)
};

struct EvalReport {
  std::vector<ShotAccuracy> shots;
  std::optional<PerplexitySummary> perplexity;
  OverflowCounts overflow;
  std::size_t items = 0;

  nlohmann::ordered_json to_json() const;
};

struct ChoiceEvalOptions {
  std::vector<std::size_t> shots = {1, 2, 3};
  std::optional<PromptVersion> version;  // overrides each task's own version
  ScoreOptions score;
  std::optional<std::size_t> tuning_seq_len;
};

// Every task is classified once per k with the first k demonstrations.
// Items run in parallel; results are reduced in item order.
EvalReport evaluate_choices(const CausalLM& model, const std::vector<ChoiceTask>& tasks,
                            const std::vector<ChoiceTask>& demonstrations,
                            const ChoiceEvalOptions& options);

}  // namespace forge
