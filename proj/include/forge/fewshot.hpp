#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "forge/prompt.hpp"

namespace forge {

// Ordered (key, value) context fields, e.g. premise/hypothesis.
using TaskFields = std::vector<std::pair<std::string, std::string>>;

struct ChoiceTask {
  TaskFields fields;
  std::vector<std::string> choices;
  std::size_t gold = 0;
  PromptVersion version = PromptVersion::kV03;
  std::string task = "generic";  // selects the ChoiceTaskFormat

  // >= 2 choices, gold in range, at least one field. Throws ValidationError.
  void validate() const;
};

// Wording of one task family.
struct ChoiceTaskFormat {
  std::string name;
  // v0.2: leading description (may span lines); {choices} lists the choices
  // as "a, b, and c".
  std::string description;
  // Display label per field key; keys absent here use the key itself.
  std::vector<std::pair<std::string, std::string>> field_labels;
  std::string answer_label = "Answer:";
  // v0.3: instruction text of every block; {choice_lines} lists one choice per line.
  std::string instruction;
  // v0.3: when false a single-field input is printed without its label.
  bool label_single_field = true;

  static const ChoiceTaskFormat& find(const std::string& name);  // throws ConfigError
  std::string label_of(const std::string& key) const;
};

struct FewShotSpec {
  std::size_t k = 1;
  std::vector<ChoiceTask> demonstrations;

  // k <= 3 and k <= demonstrations.size(); throws ContractError.
  void validate() const;
};

// The prompt split where left-truncation may cut (prefix) and may not (query).
struct FewShotPrompt {
  std::string prefix;
  std::string query;

  std::string text() const { return prefix + query; }
};

FewShotPrompt assemble_fewshot(const ChoiceTask& task, const FewShotSpec& spec,
                               PromptVersion version);
std::string assemble_fewshot_prompt(const ChoiceTask& task, const FewShotSpec& spec,
                                    PromptVersion version);

// String scored for choice i: " choice" after a v0.2 label, "choice" after a v0.3 header.
std::string choice_continuation(const ChoiceTask& task, std::size_t index, PromptVersion version);

// JSON Lines {"fields": {...}, "choices": [...], "gold": n, "version": "v0.3", "task": "..."}.
// Field order follows the file. Errors carry "line N:".
std::vector<ChoiceTask> load_choice_tasks(const std::filesystem::path& path);
std::vector<ChoiceTask> parse_choice_tasks(const std::string& text);

}  // namespace forge
