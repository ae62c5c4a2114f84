// instruct_forge: dataset building, LoRA tuning, evaluation and generation.

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "forge/config.hpp"
#include "forge/errors.hpp"
#include "forge/evaluation.hpp"
#include "forge/fewshot.hpp"
#include "forge/generation.hpp"
#include "forge/lora.hpp"
#include "forge/model.hpp"
#include "forge/prompt.hpp"
#include "forge/records.hpp"
#include "forge/training.hpp"

namespace fs = std::filesystem;
using namespace forge;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Flags that map onto RunConfig keys.
struct Overrides {
  struct Binding {
    CLI::Option* option;
    std::string key;
    std::string value;
  };
  std::vector<std::unique_ptr<Binding>> bindings;
  std::optional<fs::path> config_file;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* app, const std::string& flag, const std::string& key,
           const std::string& help) {
    auto b = std::make_unique<Binding>();
    b->key = key;
    b->option = app->add_option(flag, b->value, help + " [" + key + "]");
    bindings.push_back(std::move(b));
  }

  void add_common(CLI::App* app) {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--seed", seed, "seed for every random choice (default: $INSTRUCT_FORGE_SEED, else 0)");
  }

  RunConfig resolve() const {
    RunConfig cfg;
    if (config_file) cfg.load_file(*config_file);
    for (const auto& b : bindings)
      if (b->option->count() > 0) cfg.set(b->key, b->value);
    if (seed || !cfg.seed_given) cfg.apply_seed(resolve_seed(seed));
    return cfg;
  }
};

// Commands that load a checkpoint report the model it actually holds.
RunConfig with_model(RunConfig cfg, const ModelConfig& model) {
  const auto seed = cfg.model.seed;
  cfg.model = model;
  cfg.model.seed = seed;
  return cfg;
}

void echo(const RunConfig& cfg, const std::string& command) {
  std::cerr << "# command: " << command << "\n" << cfg.echo();
}

PromptFormat load_format(PromptVersion version, const std::optional<fs::path>& with_input,
                         const std::optional<fs::path>& no_input) {
  PromptFormat format = PromptFormat::builtin(version);
  if (with_input) format.with_input = PromptTemplate::load(*with_input, version);
  if (no_input) format.no_input = PromptTemplate::load(*no_input, version);
  if (format.with_input.kind() != TemplateKind::kWithInput)
    throw ConfigError("--template-with-input has no {input} slot");
  if (format.no_input.kind() != TemplateKind::kNoInput)
    throw ConfigError("--template-no-input must not contain an {input} slot");
  return format;
}

DecoderModel load_model(const fs::path& base, const std::optional<fs::path>& adapter) {
  DecoderModel model = load_checkpoint(base);
  if (adapter) load_adapters(model, *adapter);
  return model;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(line);
  return out;
}

// ---- build-dataset ----------------------------------------------------------

struct BuildDatasetArgs {
  std::vector<fs::path> inputs;
  std::vector<fs::path> input_dirs;
  std::vector<fs::path> typo_pairs;
  std::vector<fs::path> qa_pairs;
  std::string exclude;
  std::optional<std::string> typo_instruction;
  std::optional<std::string> qa_instruction;
  fs::path output;
};

int cmd_build_dataset(const BuildDatasetArgs& args, const Overrides& ov) {
  RunConfig cfg = ov.resolve();
  std::set<Category> excluded(cfg.exclude.begin(), cfg.exclude.end());
  for (const auto& label : split_list(args.exclude)) {
    const auto cat = parse_category(label);
    if (!cat) throw ConfigError("--exclude: unknown category \"" + label + "\"");
    excluded.insert(*cat);
  }
  cfg.exclude.assign(excluded.begin(), excluded.end());
  echo(cfg, "build-dataset");

  ConversionTemplates templates;
  if (args.typo_instruction) templates.typo_instruction = *args.typo_instruction;
  if (args.qa_instruction) templates.qa_instruction = *args.qa_instruction;

  std::vector<fs::path> files = args.inputs;
  for (const auto& dir : args.input_dirs) {
    if (!fs::is_directory(dir)) throw ValidationError("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> found;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
        found.push_back(entry.path());
    std::sort(found.begin(), found.end());
    files.insert(files.end(), found.begin(), found.end());
  }

  std::vector<InstructionRecord> records;
  for (const auto& f : files) {
    auto loaded = load_records(f);
    records.insert(records.end(), loaded.records.begin(), loaded.records.end());
  }
  for (const auto& f : args.typo_pairs) {
    auto converted = load_typo_pairs(f, templates);
    records.insert(records.end(), converted.begin(), converted.end());
  }
  for (const auto& f : args.qa_pairs) {
    auto converted = load_qa_pairs(f, templates);
    records.insert(records.end(), converted.begin(), converted.end());
  }
  if (records.empty()) {
    std::cerr << "error: no records found in the given sources\n";
    return kExitRuntime;
  }
  records = filter_by_category(records, excluded);
  if (records.empty()) {
    std::cerr << "error: no records left after filtering\n";
    return kExitRuntime;
  }
  write_records(args.output, records);
  std::cout << dataset_stats(records).to_json().dump(2) << "\n";
  return 0;
}

// ---- init / pretrain --------------------------------------------------------

int cmd_init(const fs::path& out, const Overrides& ov) {
  const RunConfig cfg = ov.resolve();
  cfg.model.validate();
  echo(cfg, "init");
  save_checkpoint(DecoderModel::init(cfg.model), out);
  std::cout << nlohmann::ordered_json{{"checkpoint", out.string()},
                                      {"config", cfg.model.to_json()}}.dump(2)
            << "\n";
  return 0;
}

struct PretrainArgs {
  std::optional<fs::path> base;
  fs::path corpus;
  fs::path out;
};

int cmd_pretrain(const PretrainArgs& args, const Overrides& ov) {
  const RunConfig cfg = ov.resolve();
  cfg.model.validate();
  DecoderModel model = args.base ? load_checkpoint(*args.base) : DecoderModel::init(cfg.model);
  echo(with_model(cfg, model.config()), "pretrain");
  const auto losses = pretrain(model, read_lines(args.corpus), cfg.pretrain, [&](std::size_t step, float loss) {
    if ((step + 1) % 50 == 0) std::cerr << "step " << step + 1 << " loss " << loss << "\n";
  });
  save_checkpoint(model, args.out);
  std::cout << nlohmann::ordered_json{{"checkpoint", args.out.string()},
                                      {"steps", losses.size()},
                                      {"final_loss", losses.back()}}.dump(2)
            << "\n";
  return 0;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  fs::path base;
  fs::path data;
  fs::path out;
  std::optional<fs::path> template_with_input;
  std::optional<fs::path> template_no_input;
};

int cmd_train(const TrainArgs& args, const Overrides& ov) {
  RunConfig cfg = ov.resolve();
  cfg.lora.validate();
  DecoderModel model = load_checkpoint(args.base);
  cfg = with_model(cfg, model.config());
  cfg.train.validate(model.config());
  const PromptFormat format =
      load_format(cfg.prompt_version, args.template_with_input, args.template_no_input);
  auto loaded = load_records(args.data);
  std::set<Category> excluded(cfg.exclude.begin(), cfg.exclude.end());
  const auto records = filter_by_category(loaded.records, excluded);
  if (records.empty()) throw ConfigError("training dataset is empty after filtering");
  echo(cfg, "train");

  const std::size_t adapters = inject(model, cfg.lora);
  std::cerr << "adapters = " << adapters << "\ntrainable_params = " << trainable_param_count(model)
            << "\n";
  fs::create_directories(args.out);
  TrainHooks hooks;
  hooks.checkpoint_dir = args.out;
  hooks.lora_config = cfg.lora;
  hooks.on_epoch = [](const EpochReport& e) { std::cerr << e.to_json().dump() << "\n"; };
  const TrainReport report = train(model, records, format, cfg.train, hooks);
  save_adapters(model, cfg.lora, args.out / "adapter.bin");
  write_text(args.out / "train_report.jsonl", report.to_jsonl());
  write_text(args.out / "run.cfg", cfg.echo());
  std::cout << nlohmann::ordered_json{{"adapters", adapters},
                                      {"trainable_params", trainable_param_count(model)},
                                      {"epochs", report.epochs.size()},
                                      {"steps", report.step_losses.size()},
                                      {"dropped", report.dropped},
                                      {"final_mean_loss", report.epochs.back().mean_loss},
                                      {"adapter", (args.out / "adapter.bin").string()},
                                      {"report", (args.out / "train_report.jsonl").string()}}
                   .dump(2)
            << "\n";
  return 0;
}

// ---- eval / ppl / generate ----------------------------------------------------

struct EvalArgs {
  fs::path base;
  std::optional<fs::path> adapter;
  fs::path tasks;
  std::optional<fs::path> demos;
  std::optional<fs::path> ppl_items;
  std::optional<fs::path> report;
};

int cmd_eval(const EvalArgs& args, const Overrides& ov) {
  const RunConfig cfg = ov.resolve();
  for (auto k : cfg.eval.shots)
    if (k > 3) throw ConfigError("--shots entries must lie in 0..3");
  if (cfg.eval.shots.empty()) throw ConfigError("--shots must list at least one k");
  auto tasks = load_choice_tasks(args.tasks);
  std::vector<ChoiceTask> demos;
  if (args.demos) {
    demos = load_choice_tasks(*args.demos);
  } else {
    // Without a demonstration file the first three tasks serve as demonstrations.
    const std::size_t n = std::min<std::size_t>(3, tasks.size());
    demos.assign(tasks.begin(), tasks.begin() + static_cast<std::ptrdiff_t>(n));
    tasks.erase(tasks.begin(), tasks.begin() + static_cast<std::ptrdiff_t>(n));
  }
  if (tasks.empty()) throw ConfigError("no evaluation tasks left after taking demonstrations");
  const std::size_t max_k = *std::max_element(cfg.eval.shots.begin(), cfg.eval.shots.end());
  if (max_k > demos.size())
    throw ConfigError(std::to_string(max_k) + "-shot needs " + std::to_string(max_k) +
                      " demonstrations, only " + std::to_string(demos.size()) + " available");
  const DecoderModel model = load_model(args.base, args.adapter);
  echo(with_model(cfg, model.config()), "eval");

  ChoiceEvalOptions options;
  options.shots = cfg.eval.shots;
  options.version = cfg.eval.prompt_version;
  options.score.length_normalize = cfg.eval.length_normalize;
  options.tuning_seq_len = cfg.train.train_seq_len;
  EvalReport report = evaluate_choices(model, tasks, demos, options);
  if (args.ppl_items) report.perplexity = corpus_perplexity(model, load_perplexity_items(*args.ppl_items));
  const std::string text = report.to_json().dump(2) + "\n";
  if (args.report) write_text(*args.report, text);
  std::cout << text;
  return 0;
}

struct PplArgs {
  fs::path base;
  std::optional<fs::path> adapter;
  fs::path items;
  std::optional<fs::path> report;
  bool per_item = false;
};

int cmd_ppl(const PplArgs& args, const Overrides& ov) {
  const RunConfig cfg = ov.resolve();
  const auto items = load_perplexity_items(args.items);
  if (items.empty()) throw ConfigError("perplexity file has no items");
  const DecoderModel model = load_model(args.base, args.adapter);
  echo(with_model(cfg, model.config()), "ppl");
  EvalReport report;
  report.items = items.size();
  report.perplexity = corpus_perplexity(model, items);
  for (const auto& s : report.perplexity->items) report.overflow.model_length += s.truncated;
  auto j = report.to_json();
  j.erase("accuracy");
  if (args.per_item) {
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const auto& s : report.perplexity->items)
      per.push_back({{"perplexity", s.perplexity}, {"tokens", s.tokens}, {"truncated", s.truncated}});
    j["per_item"] = per;
  }
  const std::string text = j.dump(2) + "\n";
  if (args.report) write_text(*args.report, text);
  std::cout << text;
  return 0;
}

struct GenerateArgs {
  fs::path base;
  std::optional<fs::path> adapter;
  std::optional<std::string> prompt;
  std::optional<std::string> instruction;
  std::optional<std::string> input;
  bool json = false;
};

int cmd_generate(const GenerateArgs& args, const Overrides& ov) {
  const RunConfig cfg = ov.resolve();
  cfg.generate.validate();
  if (args.prompt.has_value() == args.instruction.has_value())
    throw ConfigError("give exactly one of --prompt or --instruction");
  std::string prompt;
  if (args.prompt) {
    prompt = *args.prompt;
  } else {
    InstructionRecord r;
    r.instruction = *args.instruction;
    if (args.input && !args.input->empty()) r.input = *args.input;
    r.output = "-";
    prompt = render_prompt(r, PromptFormat::builtin(cfg.prompt_version), RenderMode::kInference);
  }
  const DecoderModel model = load_model(args.base, args.adapter);
  echo(with_model(cfg, model.config()), "generate");
  const GenerationResult result = generate(model, prompt, cfg.generate);
  if (args.json) {
    std::cout << nlohmann::ordered_json{{"text", result.text},
                                        {"tokens", result.tokens.size()},
                                        {"stopped", result.stopped},
                                        {"truncated", result.truncated}}
                     .dump(2, ' ', false, nlohmann::ordered_json::error_handler_t::replace)
              << "\n";
  } else {
    std::cout << result.text << "\n";
  }
  if (result.truncated) std::cerr << "warning: output truncated at the model context\n";
  return 0;
}

void add_model_flags(CLI::App* app, Overrides& ov) {
  ov.add(app, "--vocab-size", "model.vocab_size", "vocabulary size");
  ov.add(app, "--d-model", "model.d_model", "model width");
  ov.add(app, "--heads", "model.n_heads", "attention heads");
  ov.add(app, "--layers", "model.n_layers", "decoder layers");
  ov.add(app, "--max-seq-len", "model.max_seq_len", "model context length");
  ov.add(app, "--layout", "model.layout", "fused-qkv or split-qv");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Instruction dataset building, LoRA tuning and likelihood evaluation"};
  app.require_subcommand(1);

  Overrides build_ov, init_ov, pretrain_ov, train_ov, eval_ov, ppl_ov, gen_ov;

  BuildDatasetArgs bd;
  auto* build = app.add_subcommand("build-dataset", "merge, convert and filter instruction records");
  build_ov.add_common(build);
  build->add_option("--input", bd.inputs, "record JSON Lines file (repeatable)");
  build->add_option("--input-dir", bd.input_dirs, "directory of *.jsonl record files");
  build->add_option("--typo-pairs", bd.typo_pairs, "JSON Lines {wrong, corrected}");
  build->add_option("--qa-pairs", bd.qa_pairs, "JSON Lines {question, answer}");
  build->add_option("--exclude", bd.exclude, "comma-separated categories to drop");
  build->add_option("--typo-instruction", bd.typo_instruction, "instruction for typo records");
  build->add_option("--qa-instruction", bd.qa_instruction, "instruction for QA records");
  build->add_option("--output", bd.output, "output JSON Lines")->required();

  fs::path init_out;
  auto* init = app.add_subcommand("init", "write a randomly initialized base checkpoint");
  init_ov.add_common(init);
  add_model_flags(init, init_ov);
  init->add_option("--out", init_out, "checkpoint path")->required();

  PretrainArgs pa;
  auto* pre = app.add_subcommand("pretrain", "full-parameter language modelling on a text corpus");
  pretrain_ov.add_common(pre);
  add_model_flags(pre, pretrain_ov);
  pre->add_option("--base", pa.base, "start from this checkpoint instead of a fresh init");
  pre->add_option("--corpus", pa.corpus, "text file, one document per line")->required();
  pre->add_option("--out", pa.out, "checkpoint path")->required();
  pretrain_ov.add(pre, "--steps", "pretrain.steps", "optimizer steps");
  pretrain_ov.add(pre, "--lr", "pretrain.lr", "learning rate");
  pretrain_ov.add(pre, "--batch", "pretrain.batch", "windows per step");
  pretrain_ov.add(pre, "--seq-len", "pretrain.seq_len", "window length");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "LoRA instruction tuning");
  train_ov.add_common(tr);
  tr->add_option("--base", ta.base, "base checkpoint")->required();
  tr->add_option("--data", ta.data, "record JSON Lines")->required();
  tr->add_option("--out", ta.out, "output directory")->required();
  tr->add_option("--template-with-input", ta.template_with_input, "prompt template file");
  tr->add_option("--template-no-input", ta.template_no_input, "prompt template file");
  train_ov.add(tr, "--lr", "train.lr", "learning rate");
  train_ov.add(tr, "--batch", "train.batch", "batch size");
  train_ov.add(tr, "--epochs", "train.epochs", "epochs");
  train_ov.add(tr, "--seq-len", "train.seq_len", "tuning sequence length");
  train_ov.add(tr, "--mask-policy", "train.mask_policy", "response-only or full-sequence");
  train_ov.add(tr, "--weight-decay", "train.weight_decay", "decoupled weight decay");
  train_ov.add(tr, "--rank", "lora.rank", "LoRA rank r");
  train_ov.add(tr, "--alpha", "lora.alpha", "LoRA alpha");
  train_ov.add(tr, "--dropout", "lora.dropout", "LoRA dropout");
  train_ov.add(tr, "--targets", "lora.targets", "comma-separated target names");
  train_ov.add(tr, "--prompt-version", "data.prompt_version", "v0.2 or v0.3 instruction format");
  train_ov.add(tr, "--exclude", "data.exclude", "comma-separated categories to drop");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "likelihood-argmax few-shot classification");
  eval_ov.add_common(ev);
  ev->add_option("--base", ea.base, "base checkpoint")->required();
  ev->add_option("--adapter", ea.adapter, "adapter checkpoint");
  ev->add_option("--tasks", ea.tasks, "choice task JSON Lines")->required();
  ev->add_option("--demos", ea.demos, "demonstration JSON Lines (default: first 3 tasks)");
  ev->add_option("--ppl-items", ea.ppl_items, "also report perplexity on these items");
  ev->add_option("--report", ea.report, "write the JSON report here");
  eval_ov.add(ev, "--shots", "eval.shots", "comma-separated k values");
  eval_ov.add(ev, "--prompt-version", "eval.prompt_version", "v0.2, v0.3 or task");
  eval_ov.add(ev, "--length-normalize", "eval.length_normalize", "true or false");
  eval_ov.add(ev, "--tuning-seq-len", "train.seq_len", "length counted as tuning overflow");

  PplArgs pp;
  auto* ppl = app.add_subcommand("ppl", "response-only perplexity");
  ppl_ov.add_common(ppl);
  ppl->add_option("--base", pp.base, "base checkpoint")->required();
  ppl->add_option("--adapter", pp.adapter, "adapter checkpoint");
  ppl->add_option("--items", pp.items, "JSON Lines {question, response}")->required();
  ppl->add_option("--report", pp.report, "write the JSON report here");
  ppl->add_flag("--per-item", pp.per_item, "include per-item values");

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "greedy or sampled continuation");
  gen_ov.add_common(gen);
  gen->add_option("--base", ga.base, "base checkpoint")->required();
  gen->add_option("--adapter", ga.adapter, "adapter checkpoint");
  gen->add_option("--prompt", ga.prompt, "raw prompt text");
  gen->add_option("--instruction", ga.instruction, "render the instruction format");
  gen->add_option("--input", ga.input, "input for --instruction");
  gen->add_flag("--json", ga.json, "print a JSON result");
  gen_ov.add(gen, "--temperature", "generate.temperature", "0 for greedy");
  gen_ov.add(gen, "--repetition-penalty", "generate.repetition_penalty", ">= 1");
  gen_ov.add(gen, "--max-new-tokens", "generate.max_new_tokens", "token budget");
  gen_ov.add(gen, "--prompt-version", "data.prompt_version", "v0.2 or v0.3 instruction format");

  CLI11_PARSE(app, argc, argv);

  try {
    if (build->parsed()) return cmd_build_dataset(bd, build_ov);
    if (init->parsed()) return cmd_init(init_out, init_ov);
    if (pre->parsed()) return cmd_pretrain(pa, pretrain_ov);
    if (tr->parsed()) return cmd_train(ta, train_ov);
    if (ev->parsed()) return cmd_eval(ea, eval_ov);
    if (ppl->parsed()) return cmd_ppl(pp, ppl_ov);
    if (gen->parsed()) return cmd_generate(ga, gen_ov);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitRuntime;
}
