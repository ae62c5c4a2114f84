#include "forge/records.hpp"

#include <fstream>
#include <istream>

#include "forge/errors.hpp"

namespace forge {

namespace {

constexpr std::array<std::string_view, 8> kCategoryLabels = {
    "commonsense", "summarization", "reading-comprehension", "simplification",
    "correction",  "translation",   "qa",                    "other",
};

std::string line_prefix(std::size_t line) { return "line " + std::to_string(line) + ": "; }

const nlohmann::json& required(const nlohmann::json& obj, const char* key, std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null())
    throw ValidationError(line_prefix(line) + "missing required field \"" + key + "\"");
  if (!it->is_string())
    throw ValidationError(line_prefix(line) + "field \"" + key + "\" must be a string");
  return *it;
}

InstructionRecord record_from_json(const nlohmann::json& obj, std::size_t line) {
  if (!obj.is_object()) throw ValidationError(line_prefix(line) + "expected a JSON object");
  InstructionRecord r;
  r.instruction = required(obj, "instruction", line).get<std::string>();
  r.output = required(obj, "output", line).get<std::string>();
  const auto label = required(obj, "category", line).get<std::string>();
  const auto category = parse_category(label);
  if (!category) throw ValidationError(line_prefix(line) + "unknown category \"" + label + "\"");
  r.category = *category;
  r.source = required(obj, "source", line).get<std::string>();
  if (auto it = obj.find("input"); it != obj.end() && !it->is_null()) {
    if (!it->is_string())
      throw ValidationError(line_prefix(line) + "field \"input\" must be a string or null");
    // An empty input means the record has none.
    if (!it->get_ref<const std::string&>().empty()) r.input = it->get<std::string>();
  }
  try {
    validate(r);
  } catch (const ValidationError& e) {
    throw ValidationError(line_prefix(line) + e.what());
  }
  return r;
}

template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(path.string() + ": " + line_prefix(line) + "malformed JSON (" +
                            e.what() + ")");
    }
    fn(obj, line);
  }
}

}  // namespace

std::string_view to_string(Category c) { return kCategoryLabels[static_cast<std::size_t>(c)]; }

std::optional<Category> parse_category(std::string_view label) {
  for (std::size_t i = 0; i < kCategoryLabels.size(); ++i)
    if (kCategoryLabels[i] == label) return kAllCategories[i];
  return std::nullopt;
}

void validate(const InstructionRecord& record) {
  if (record.instruction.empty()) throw ValidationError("instruction must be non-empty");
  if (record.output.empty()) throw ValidationError("output must be non-empty");
}

nlohmann::ordered_json to_json(const InstructionRecord& record) {
  nlohmann::ordered_json j;
  j["instruction"] = record.instruction;
  j["input"] = record.input ? nlohmann::ordered_json(*record.input) : nlohmann::ordered_json();
  j["output"] = record.output;
  j["category"] = std::string(to_string(record.category));
  j["source"] = record.source;
  return j;
}

std::size_t DatasetManifest::count(Category c) const {
  auto it = per_category.find(std::string(to_string(c)));
  return it == per_category.end() ? 0 : it->second;
}

nlohmann::ordered_json DatasetManifest::to_json() const {
  nlohmann::ordered_json j;
  j["total"] = total;
  j["per_category"] = nlohmann::ordered_json::object();
  for (Category c : kAllCategories) j["per_category"][std::string(to_string(c))] = count(c);
  j["per_source"] = nlohmann::ordered_json::object();
  for (const auto& [source, n] : per_source) j["per_source"][source] = n;
  return j;
}

DatasetManifest dataset_stats(const std::vector<InstructionRecord>& records) {
  DatasetManifest m;
  for (Category c : kAllCategories) m.per_category[std::string(to_string(c))] = 0;
  for (const auto& r : records) {
    ++m.per_category[std::string(to_string(r.category))];
    ++m.per_source[r.source];
  }
  m.total = records.size();
  return m;
}

LoadedRecords parse_records(std::istream& in) {
  LoadedRecords out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(line_prefix(line) + "malformed JSON (" + e.what() + ")");
    }
    out.records.push_back(record_from_json(obj, line));
  }
  out.manifest = dataset_stats(out.records);
  return out;
}

LoadedRecords load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return parse_records(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_records(const std::filesystem::path& path,
                   const std::vector<InstructionRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open '" + path.string() + "' for writing");
  for (const auto& r : records) out << to_json(r).dump() << '\n';
  if (!out) throw Error("write to '" + path.string() + "' failed");
}

std::vector<InstructionRecord> filter_by_category(const std::vector<InstructionRecord>& records,
                                                  const std::set<Category>& excluded) {
  std::vector<InstructionRecord> kept;
  kept.reserve(records.size());
  for (const auto& r : records)
    if (!excluded.contains(r.category)) kept.push_back(r);
  return kept;
}

InstructionRecord convert_typo_pair(std::string_view wrong_text, std::string_view corrected_text,
                                    const ConversionTemplates& templates) {
  if (wrong_text.empty() || corrected_text.empty())
    throw ValidationError("typo pair texts must be non-empty");
  InstructionRecord r{templates.typo_instruction, std::string(wrong_text),
                      std::string(corrected_text), Category::kCorrection, templates.typo_source};
  validate(r);
  return r;
}

InstructionRecord convert_qa_pair(std::string_view question, std::string_view answer,
                                  const ConversionTemplates& templates) {
  if (question.empty() || answer.empty())
    throw ValidationError("question and answer must be non-empty");
  InstructionRecord r{templates.qa_instruction, std::string(question), std::string(answer),
                      Category::kQa, templates.qa_source};
  validate(r);
  return r;
}

std::vector<InstructionRecord> load_typo_pairs(const std::filesystem::path& path,
                                               const ConversionTemplates& templates) {
  std::vector<InstructionRecord> out;
  for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    try {
      out.push_back(convert_typo_pair(required(obj, "wrong", line).get<std::string>(),
                                      required(obj, "corrected", line).get<std::string>(),
                                      templates));
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      throw ValidationError(path.string() + ": " +
                            (msg.starts_with("line ") ? msg : line_prefix(line) + msg));
    }
  });
  return out;
}

std::vector<InstructionRecord> load_qa_pairs(const std::filesystem::path& path,
                                             const ConversionTemplates& templates) {
  std::vector<InstructionRecord> out;
  for_each_json_line(path, [&](const nlohmann::json& obj, std::size_t line) {
    try {
      out.push_back(convert_qa_pair(required(obj, "question", line).get<std::string>(),
                                    required(obj, "answer", line).get<std::string>(), templates));
    } catch (const ValidationError& e) {
      const std::string msg = e.what();
      throw ValidationError(path.string() + ": " +
                            (msg.starts_with("line ") ? msg : line_prefix(line) + msg));
    }
  });
  return out;
}

}  // namespace forge
