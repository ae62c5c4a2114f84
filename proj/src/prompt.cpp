#include "forge/prompt.hpp"

#include <fstream>
#include <sstream>

#include "forge/errors.hpp"

namespace forge {

namespace {

constexpr std::string_view kInstructionSlot = "{instruction}";
constexpr std::string_view kInputSlot = "{input}";
constexpr std::string_view kResponseSlot = "{response}";

constexpr std::string_view kWithInputV02 =
    "Below is an instruction that describes a task, paired with an input that provides further "
    "context. Write a response that appropriately completes the request.\n"
    "\n"
    "### Instruction:\n"
    "{instruction}\n"
    "\n"
    "### Input:\n"
    "{input}\n"
    "\n"
    "### Response:\n"
    "{response}";

constexpr std::string_view kNoInputV02 =
    "Below is an instruction that describes a task. Write a response that appropriately "
    "completes the request.\n"
    "\n"
    "### Instruction:\n"
    "{instruction}\n"
    "\n"
    "### Response:\n"
    "{response}";

constexpr std::string_view kWithInputV03 =
    "Below is a combination of instructions explaining the task and contextual inputs. Write a "
    "response that adequately meets the request.\n"
    "\n"
    "\n"
    "### Instructions:\n"
    "{instruction}\n"
    "\n"
    "### Input:\n"
    "{input}\n"
    "\n"
    "### Response:\n"
    "{response}";

constexpr std::string_view kNoInputV03 =
    "Below is a combination of instructions explaining the task and contextual inputs. Write a "
    "response that adequately meets the request.\n"
    "\n"
    "\n"
    "### Instructions:\n"
    "{instruction}\n"
    "\n"
    "### Response:\n"
    "{response}";

constexpr std::string_view kQuestion =
    "Write a response to answer the following question.\n"
    "\n"
    "### Question:\n"
    "{input}\n"
    "\n"
    "### Response:\n"
    "{response}";

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

}  // namespace

std::string_view to_string(PromptVersion v) { return v == PromptVersion::kV02 ? "v0.2" : "v0.3"; }

PromptVersion parse_prompt_version(std::string_view tag) {
  if (tag == "v0.2" || tag == "0.2") return PromptVersion::kV02;
  if (tag == "v0.3" || tag == "0.3") return PromptVersion::kV03;
  throw ValidationError("unknown prompt version \"" + std::string(tag) + "\" (expected v0.2 or v0.3)");
}

PromptTemplate PromptTemplate::parse(std::string text, PromptVersion version) {
  if (count_occurrences(text, kResponseSlot) != 1 || !std::string_view(text).ends_with(kResponseSlot))
    throw ValidationError("prompt template must end with exactly one {response} marker");
  if (count_occurrences(text, kInstructionSlot) > 1 || count_occurrences(text, kInputSlot) > 1)
    throw ValidationError("prompt template repeats a slot marker");
  const auto kind = count_occurrences(text, kInputSlot) == 1 ? TemplateKind::kWithInput
                                                             : TemplateKind::kNoInput;
  return PromptTemplate(std::move(text), kind, version);
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path, PromptVersion version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open template file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  // Editors append a final newline; the {response} marker still closes the template.
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  try {
    return parse(std::move(text), version);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

PromptTemplate PromptTemplate::builtin(TemplateKind kind, PromptVersion version) {
  std::string_view text;
  if (version == PromptVersion::kV02)
    text = kind == TemplateKind::kWithInput ? kWithInputV02 : kNoInputV02;
  else
    text = kind == TemplateKind::kWithInput ? kWithInputV03 : kNoInputV03;
  return PromptTemplate(std::string(text), kind, version);
}

PromptTemplate PromptTemplate::question() {
  return PromptTemplate(std::string(kQuestion), TemplateKind::kWithInput, PromptVersion::kV02);
}

PromptFormat PromptFormat::builtin(PromptVersion version) {
  return PromptFormat{PromptTemplate::builtin(TemplateKind::kWithInput, version),
                      PromptTemplate::builtin(TemplateKind::kNoInput, version)};
}

const PromptTemplate& PromptFormat::select(const InstructionRecord& record) const {
  return record.input ? with_input : no_input;
}

std::string render_template(const PromptTemplate& tpl, std::string_view instruction,
                            std::optional<std::string_view> input, std::string_view response,
                            RenderMode mode) {
  if (tpl.kind() == TemplateKind::kWithInput && !input)
    throw ContractError("with-input template requires an input");
  const std::string_view text = tpl.text();
  std::string out;
  out.reserve(text.size() + instruction.size() + response.size() + (input ? input->size() : 0));
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto brace = text.find('{', pos);
    if (brace == std::string_view::npos) {
      out.append(text.substr(pos));
      break;
    }
    out.append(text.substr(pos, brace - pos));
    const auto rest = text.substr(brace);
    if (rest.starts_with(kInstructionSlot)) {
      out.append(instruction);
      pos = brace + kInstructionSlot.size();
    } else if (rest.starts_with(kInputSlot)) {
      out.append(input.value_or(std::string_view{}));
      pos = brace + kInputSlot.size();
    } else if (rest.starts_with(kResponseSlot)) {
      if (mode == RenderMode::kTraining) out.append(response);
      pos = brace + kResponseSlot.size();
    } else {
      out.push_back('{');
      pos = brace + 1;
    }
  }
  return out;
}

std::string render_prompt(const InstructionRecord& record, const PromptTemplate& tpl,
                          RenderMode mode) {
  std::optional<std::string_view> input;
  if (record.input) input = *record.input;
  return render_template(tpl, record.instruction, input, record.output, mode);
}

std::string render_prompt(const InstructionRecord& record, const PromptFormat& format,
                          RenderMode mode) {
  return render_prompt(record, format.select(record), mode);
}

}  // namespace forge
