#include "forge/evaluation.hpp"

#include <cmath>
#include <exception>
#include <fstream>
#include <limits>

#include "forge/errors.hpp"
#include "forge/tokenizer.hpp"

namespace forge {

namespace {

// Runs fn(i) for i in [0, n) across threads and rethrows the lowest-index failure.
template <typename Fn>
void parallel_items(std::size_t n, Fn&& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    try {
      fn(static_cast<std::size_t>(i));
    } catch (...) {
      errors[static_cast<std::size_t>(i)] = std::current_exception();
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

std::vector<double> log_softmax(std::span<const float> logits) {
  double max = -std::numeric_limits<double>::infinity();
  for (float v : logits) max = std::max(max, static_cast<double>(v));
  double sum = 0;
  for (float v : logits) sum += std::exp(static_cast<double>(v) - max);
  const double lse = max + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

ContinuationScore score_continuation(const CausalLM& model, std::string_view prompt,
                                     std::string_view continuation,
                                     std::size_t protected_suffix) {
  const TokenSequence ptoks = ByteTokenizer::encode(prompt);
  const TokenSequence ctoks = ByteTokenizer::encode(continuation);
  if (ctoks.empty()) throw ContractError("continuation encodes to zero tokens");
  protected_suffix = std::min(protected_suffix, ptoks.size());

  const std::size_t ctx = model.max_seq_len();
  const std::size_t full = 1 + ptoks.size() + ctoks.size();
  std::size_t drop = 0;
  if (full > ctx) {
    drop = full - ctx;
    if (drop > ptoks.size() - protected_suffix)
      throw ContextOverflowError("query and continuation need " +
                                 std::to_string(1 + protected_suffix + ctoks.size()) +
                                 " tokens; the model context is " + std::to_string(ctx));
  }

  TokenSequence tokens;
  tokens.reserve(full - drop);
  tokens.push_back(ByteTokenizer::kBos);
  tokens.insert(tokens.end(), ptoks.begin() + static_cast<std::ptrdiff_t>(drop), ptoks.end());
  const std::size_t begin = tokens.size();
  tokens.insert(tokens.end(), ctoks.begin(), ctoks.end());

  const std::vector<float> logits = model.logits(tokens);
  const std::size_t vocab = model.vocab_size();
  ContinuationScore score;
  score.tokens = ctoks.size();
  score.truncated = drop > 0;
  for (std::size_t j = begin; j < tokens.size(); ++j) {
    const auto row = std::span<const float>(logits).subspan((j - 1) * vocab, vocab);
    score.log_likelihood += log_softmax(row)[static_cast<std::size_t>(tokens[j])];
  }
  return score;
}

std::size_t argmax_lowest(std::span<const double> scores) {
  if (scores.empty()) throw ContractError("argmax of an empty score list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

Classification classify_by_likelihood(const CausalLM& model, const ChoiceTask& task,
                                      const FewShotSpec& spec, PromptVersion version,
                                      const ScoreOptions& options) {
  const FewShotPrompt prompt = assemble_fewshot(task, spec, version);
  const std::string text = prompt.text();
  Classification out;
  for (std::size_t i = 0; i < task.choices.size(); ++i) {
    const std::string cont = choice_continuation(task, i, version);
    const ContinuationScore s = score_continuation(model, text, cont, prompt.query.size());
    out.scores.push_back(s.value(options));
    out.truncated = out.truncated || s.truncated;
    out.input_tokens = std::max(out.input_tokens, 1 + text.size() + cont.size());
  }
  out.predicted = argmax_lowest(out.scores);
  return out;
}

Classification classify_by_likelihood(const CausalLM& model, const ChoiceTask& task,
                                      const FewShotSpec& spec, const ScoreOptions& options) {
  return classify_by_likelihood(model, task, spec, task.version, options);
}

PerplexityScore response_perplexity(const CausalLM& model, const PerplexityItem& item,
                                    const PromptTemplate& tpl) {
  if (item.response.empty()) throw ContractError("perplexity item has an empty response");
  const std::string prompt =
      render_template(tpl, "", item.question, "", RenderMode::kInference);
  const ContinuationScore s = score_continuation(model, prompt, item.response);
  PerplexityScore out;
  out.nll = -s.log_likelihood;
  out.tokens = s.tokens;
  out.perplexity = std::exp(out.nll / static_cast<double>(out.tokens));
  out.truncated = s.truncated;
  return out;
}

nlohmann::ordered_json PerplexitySummary::to_json() const {
  return {{"pooled", pooled},
          {"mean", mean},
          {"items", items.size()},
          {"tokens", total_tokens},
          {"truncated", truncated}};
}

PerplexitySummary corpus_perplexity(const CausalLM& model, const std::vector<PerplexityItem>& items,
                                    const PromptTemplate& tpl) {
  if (items.empty()) throw ContractError("corpus_perplexity needs at least one item");
  PerplexitySummary out;
  out.items.resize(items.size());
  parallel_items(items.size(),
                 [&](std::size_t i) { out.items[i] = response_perplexity(model, items[i], tpl); });
  double nll = 0, ppl_sum = 0;
  for (const auto& s : out.items) {
    nll += s.nll;
    out.total_tokens += s.tokens;
    ppl_sum += s.perplexity;
    out.truncated += s.truncated ? 1 : 0;
  }
  out.pooled = std::exp(nll / static_cast<double>(out.total_tokens));
  out.mean = ppl_sum / static_cast<double>(out.items.size());
  return out;
}

std::vector<PerplexityItem> load_perplexity_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::vector<PerplexityItem> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ": line " + std::to_string(line) + ": ";
    try {
      const auto obj = nlohmann::json::parse(text);
      PerplexityItem item{obj.at("question").get<std::string>(),
                          obj.at("response").get<std::string>()};
      if (item.response.empty()) throw ValidationError(where + "empty response");
      out.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + e.what());
    }
  }
  return out;
}

nlohmann::ordered_json EvalReport::to_json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json acc = nlohmann::ordered_json::object();
  for (const auto& s : shots)
    acc[std::to_string(s.k) + "-shot"] = {
        {"accuracy", s.accuracy()}, {"correct", s.correct}, {"total", s.total}};
  j["accuracy"] = acc;
  j["perplexity"] = perplexity ? perplexity->to_json() : nlohmann::ordered_json(nullptr);
  j["overflow"] = {{"tuning_length", overflow.tuning_length},
                   {"model_length", overflow.model_length}};
  j["items"] = items;
  return j;
}

EvalReport evaluate_choices(const CausalLM& model, const std::vector<ChoiceTask>& tasks,
                            const std::vector<ChoiceTask>& demonstrations,
                            const ChoiceEvalOptions& options) {
  if (tasks.empty()) throw ContractError("no choice tasks to evaluate");
  EvalReport report;
  report.items = tasks.size();
  for (std::size_t k : options.shots) {
    FewShotSpec spec{k, demonstrations};
    spec.validate();
    std::vector<Classification> results(tasks.size());
    parallel_items(tasks.size(), [&](std::size_t i) {
      const PromptVersion version = options.version.value_or(tasks[i].version);
      results[i] = classify_by_likelihood(model, tasks[i], spec, version, options.score);
    });
    ShotAccuracy acc{k, 0, tasks.size()};
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      acc.correct += results[i].predicted == tasks[i].gold ? 1 : 0;
      report.overflow.model_length += results[i].truncated ? 1 : 0;
      if (options.tuning_seq_len && results[i].input_tokens > *options.tuning_seq_len)
        ++report.overflow.tuning_length;
    }
    report.shots.push_back(acc);
  }
  return report;
}

}  // namespace forge
