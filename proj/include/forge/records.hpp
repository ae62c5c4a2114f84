#pragma once

#include <array>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace forge {

enum class Category {
  kCommonsense,
  kSummarization,
  kReadingComprehension,
  kSimplification,
  kCorrection,
  kTranslation,
  kQa,
  kOther,
};

inline constexpr std::array<Category, 8> kAllCategories = {
    Category::kCommonsense,    Category::kSummarization, Category::kReadingComprehension,
    Category::kSimplification, Category::kCorrection,    Category::kTranslation,
    Category::kQa,             Category::kOther,
};

std::string_view to_string(Category c);
std::optional<Category> parse_category(std::string_view label);

struct InstructionRecord {
  std::string instruction;
  std::optional<std::string> input;
  std::string output;
  Category category = Category::kOther;
  std::string source;

  bool operator==(const InstructionRecord&) const = default;
};

// Throws ValidationError when instruction or output is empty.
void validate(const InstructionRecord& record);

nlohmann::ordered_json to_json(const InstructionRecord& record);

struct DatasetManifest {
  std::map<std::string, std::size_t> per_category;  // every label present, zeros included
  std::map<std::string, std::size_t> per_source;
  std::size_t total = 0;

  std::size_t count(Category c) const;
  nlohmann::ordered_json to_json() const;
};

DatasetManifest dataset_stats(const std::vector<InstructionRecord>& records);

struct LoadedRecords {
  std::vector<InstructionRecord> records;
  DatasetManifest manifest;
};

// JSON Lines, one record per line; blank lines are skipped. The first bad line
// raises ValidationError whose message starts with "line N:".
LoadedRecords load_records(const std::filesystem::path& path);
LoadedRecords parse_records(std::istream& in);
void write_records(const std::filesystem::path& path,
                   const std::vector<InstructionRecord>& records);

// Order-preserving removal of every record whose category is excluded.
std::vector<InstructionRecord> filter_by_category(const std::vector<InstructionRecord>& records,
                                                  const std::set<Category>& excluded);

// Fixed instruction strings used when converting raw pairs into records.
struct ConversionTemplates {
  std::string typo_instruction = "Correct the typos in the following sentence.";
  std::string qa_instruction = "Answer the following question.";
  std::string typo_source = "wikipedia-typo";
  std::string qa_source = "jqac";
};

InstructionRecord convert_typo_pair(std::string_view wrong_text, std::string_view corrected_text,
                                    const ConversionTemplates& templates = {});
InstructionRecord convert_qa_pair(std::string_view question, std::string_view answer,
                                  const ConversionTemplates& templates = {});

// JSON Lines {"wrong", "corrected"} and {"question", "answer"} pair files.
std::vector<InstructionRecord> load_typo_pairs(const std::filesystem::path& path,
                                               const ConversionTemplates& templates = {});
std::vector<InstructionRecord> load_qa_pairs(const std::filesystem::path& path,
                                             const ConversionTemplates& templates = {});

}  // namespace forge
