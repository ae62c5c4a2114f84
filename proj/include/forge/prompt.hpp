#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "forge/records.hpp"

namespace forge {

enum class TemplateKind { kWithInput, kNoInput };
enum class PromptVersion { kV02, kV03 };
enum class RenderMode { kTraining, kInference };

std::string_view to_string(PromptVersion v);
PromptVersion parse_prompt_version(std::string_view tag);

// Plain text with the slot markers {instruction}, {input} and {response}.
// The {response} marker must close the template, so an inference render is
// always a prefix of the matching training render.
class PromptTemplate {
 public:
  static PromptTemplate parse(std::string text, PromptVersion version = PromptVersion::kV02);
  static PromptTemplate load(const std::filesystem::path& path,
                             PromptVersion version = PromptVersion::kV02);

  // The instruction-tuning formats ("Below is an instruction that describes a task...").
  static PromptTemplate builtin(TemplateKind kind, PromptVersion version = PromptVersion::kV02);
  // Question/answer format used for response perplexity.
  static PromptTemplate question();

  TemplateKind kind() const { return kind_; }
  PromptVersion version() const { return version_; }
  const std::string& text() const { return text_; }

 private:
  PromptTemplate(std::string text, TemplateKind kind, PromptVersion version)
      : text_(std::move(text)), kind_(kind), version_(version) {}

  std::string text_;
  TemplateKind kind_;
  PromptVersion version_;
};

// Pair of templates; the record's input decides which one applies.
struct PromptFormat {
  PromptTemplate with_input = PromptTemplate::builtin(TemplateKind::kWithInput);
  PromptTemplate no_input = PromptTemplate::builtin(TemplateKind::kNoInput);

  static PromptFormat builtin(PromptVersion version);
  const PromptTemplate& select(const InstructionRecord& record) const;
};

// Fills the template slots. Training renders append `response`; inference
// renders stop right after the text preceding {response}.
std::string render_template(const PromptTemplate& tpl, std::string_view instruction,
                            std::optional<std::string_view> input, std::string_view response,
                            RenderMode mode);

// Throws ContractError for a with-input template and a record without input.
std::string render_prompt(const InstructionRecord& record, const PromptTemplate& tpl,
                          RenderMode mode);
std::string render_prompt(const InstructionRecord& record, const PromptFormat& format,
                          RenderMode mode);

}  // namespace forge
