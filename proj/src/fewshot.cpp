#include "forge/fewshot.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "forge/errors.hpp"

namespace forge {

namespace {

constexpr std::string_view kV03Header =
    "Below is a combination of instructions explaining the task and contextual inputs. Write a "
    "response that adequately meets the request.";

std::vector<ChoiceTaskFormat> make_formats() {
  std::vector<ChoiceTaskFormat> out;

  ChoiceTaskFormat jnli;
  jnli.name = "jnli";
  jnli.description =
      "Please answer the relationship between the premise and the hypothesis from entailment, "
      "contradiction, and neutral.\n"
      "\n"
      "Constraints:\n"
      "- If the hypothesis can be derived from the premise using logical or common sense "
      "knowledge, output entailment\n"
      "- If the premise and the hypothesis are incompatible, output contradiction\n"
      "- If neither of the above, output neutral";
  jnli.field_labels = {{"premise", "Premise"}, {"hypothesis", "Hypothesis"}};
  jnli.answer_label = "Relationship:";
  jnli.instruction =
      "Please answer the relationship between the given premise and hypothesis.\n"
      "\n"
      "Choose your output from the following:\n"
      "{choice_lines}";
  out.push_back(jnli);

  ChoiceTaskFormat marc;
  marc.name = "marc-ja";
  marc.description =
      "Please classify the product review into either negative or positive sentiment. Please "
      "lowercase the output.";
  marc.field_labels = {{"review", "Product Review"}};
  marc.answer_label = "Sentiment:";
  marc.instruction =
      "Please classify the following product review into either a positive or negative sentiment "
      "class.";
  marc.label_single_field = false;
  out.push_back(marc);

  ChoiceTaskFormat generic;
  generic.name = "generic";
  generic.description = "Choose the answer from {choices}.";
  generic.answer_label = "Answer:";
  generic.instruction = "Choose the answer from the following:\n{choice_lines}";
  out.push_back(generic);
  return out;
}

void replace_all(std::string& text, std::string_view marker, const std::string& value) {
  for (auto pos = text.find(marker); pos != std::string::npos;
       pos = text.find(marker, pos + value.size()))
    text.replace(pos, marker.size(), value);
}

std::string choice_list(const std::vector<std::string>& choices) {
  if (choices.size() == 2) return choices[0] + " and " + choices[1];
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) {
    if (i > 0) out += i + 1 == choices.size() ? ", and " : ", ";
    out += choices[i];
  }
  return out;
}

std::string choice_lines(const std::vector<std::string>& choices) {
  std::string out;
  for (std::size_t i = 0; i < choices.size(); ++i) out += (i ? "\n" : "") + choices[i];
  return out;
}

std::string fill(std::string text, const ChoiceTask& task) {
  replace_all(text, "{choices}", choice_list(task.choices));
  replace_all(text, "{choice_lines}", choice_lines(task.choices));
  return text;
}

std::string v02_block(const ChoiceTaskFormat& fmt, const ChoiceTask& task, bool solved) {
  std::string out;
  for (const auto& [key, value] : task.fields) out += fmt.label_of(key) + ": " + value + "\n";
  out += fmt.answer_label;
  if (solved) out += " " + task.choices[task.gold];
  return out;
}

std::string v03_block(const ChoiceTaskFormat& fmt, const ChoiceTask& task, bool solved) {
  std::string input;
  if (task.fields.size() == 1 && !fmt.label_single_field) {
    input = task.fields.front().second;
  } else {
    for (std::size_t i = 0; i < task.fields.size(); ++i)
      input += (i ? "\n" : "") + fmt.label_of(task.fields[i].first) + ": " + task.fields[i].second;
  }
  std::string out = "### Instructions:\n" + fill(fmt.instruction, task) + "\n\n### Input:\n" +
                    input + "\n\n### Response:\n";
  if (solved) out += task.choices[task.gold];
  return out;
}

ChoiceTask task_from_json(const nlohmann::ordered_json& obj, std::size_t line) {
  const std::string where = "line " + std::to_string(line) + ": ";
  if (!obj.is_object()) throw ValidationError(where + "expected a JSON object");
  ChoiceTask t;
  try {
    const auto& fields = obj.at("fields");
    if (!fields.is_object()) throw ValidationError(where + "\"fields\" must be an object");
    for (const auto& [key, value] : fields.items())
      t.fields.emplace_back(key, value.get<std::string>());
    t.choices = obj.at("choices").get<std::vector<std::string>>();
    const auto& gold = obj.at("gold");
    if (!gold.is_number_integer() || gold.get<long long>() < 0)
      throw ValidationError(where + "\"gold\" must be a non-negative integer");
    t.gold = gold.get<std::size_t>();
    if (auto it = obj.find("version"); it != obj.end())
      t.version = parse_prompt_version(it->get<std::string>());
    if (auto it = obj.find("task"); it != obj.end()) t.task = it->get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(where + e.what());
  } catch (const ConfigError& e) {
    throw ValidationError(where + e.what());
  }
  try {
    t.validate();
  } catch (const ValidationError& e) {
    throw ValidationError(where + e.what());
  }
  return t;
}

}  // namespace

void ChoiceTask::validate() const {
  if (fields.empty()) throw ValidationError("choice task has no fields");
  if (choices.size() < 2) throw ValidationError("choice task needs at least 2 choices");
  for (const auto& c : choices)
    if (c.empty()) throw ValidationError("choice strings must be non-empty");
  if (gold >= choices.size())
    throw ValidationError("gold index " + std::to_string(gold) + " out of range for " +
                          std::to_string(choices.size()) + " choices");
}

const ChoiceTaskFormat& ChoiceTaskFormat::find(const std::string& name) {
  static const std::vector<ChoiceTaskFormat> formats = make_formats();
  for (const auto& f : formats)
    if (f.name == name) return f;
  throw ConfigError("unknown choice task format \"" + name + "\" (jnli, marc-ja, generic)");
}

std::string ChoiceTaskFormat::label_of(const std::string& key) const {
  for (const auto& [k, label] : field_labels)
    if (k == key) return label;
  std::string label = key;
  if (!label.empty() && label[0] >= 'a' && label[0] <= 'z') label[0] = static_cast<char>(label[0] - 32);
  return label;
}

void FewShotSpec::validate() const {
  if (k > 3) throw ContractError("k must lie in 0..3, got " + std::to_string(k));
  if (k > demonstrations.size())
    throw ContractError("k=" + std::to_string(k) + " exceeds the " +
                        std::to_string(demonstrations.size()) + " demonstrations provided");
  for (std::size_t i = 0; i < k; ++i) demonstrations[i].validate();
}

FewShotPrompt assemble_fewshot(const ChoiceTask& task, const FewShotSpec& spec,
                               PromptVersion version) {
  task.validate();
  spec.validate();
  const ChoiceTaskFormat& fmt = ChoiceTaskFormat::find(task.task);
  FewShotPrompt prompt;
  if (version == PromptVersion::kV02) {
    prompt.prefix = fill(fmt.description, task) + "\n\n";
    for (std::size_t i = 0; i < spec.k; ++i)
      prompt.prefix += v02_block(fmt, spec.demonstrations[i], true) + "\n\n";
    prompt.query = v02_block(fmt, task, false);
  } else {
    prompt.prefix = std::string(kV03Header) + "\n\n\n";
    for (std::size_t i = 0; i < spec.k; ++i)
      prompt.prefix += v03_block(fmt, spec.demonstrations[i], true) + "\n\n";
    prompt.query = v03_block(fmt, task, false);
  }
  return prompt;
}

std::string assemble_fewshot_prompt(const ChoiceTask& task, const FewShotSpec& spec,
                                    PromptVersion version) {
  return assemble_fewshot(task, spec, version).text();
}

std::string choice_continuation(const ChoiceTask& task, std::size_t index, PromptVersion version) {
  if (index >= task.choices.size()) throw ContractError("choice index out of range");
  return version == PromptVersion::kV02 ? " " + task.choices[index] : task.choices[index];
}

std::vector<ChoiceTask> parse_choice_tasks(const std::string& text) {
  std::vector<ChoiceTask> out;
  std::istringstream in(text);
  std::string line_text;
  std::size_t line = 0;
  while (std::getline(in, line_text)) {
    ++line;
    if (line_text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::ordered_json obj;
    try {
      obj = nlohmann::ordered_json::parse(line_text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line) + ": malformed JSON (" + e.what() + ")");
    }
    out.push_back(task_from_json(obj, line));
  }
  return out;
}

std::vector<ChoiceTask> load_choice_tasks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_choice_tasks(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

}  // namespace forge
