// Acceptance run: one PASS/FAIL line per criterion, each against its own time
// limit. Exit status is 0 only when every criterion passes.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "forge/evaluation.hpp"
#include "forge/fewshot.hpp"
#include "forge/generation.hpp"
#include "forge/lora.hpp"
#include "forge/prompt.hpp"
#include "forge/records.hpp"
#include "forge/training.hpp"
#include "gradcheck.hpp"
#include "rigged.hpp"
#include "synthetic.hpp"
#include "tempdir.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool ok = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelConfig toy_config() {
  ModelConfig c;  // split-qv, 4 layers, d_model 64
  c.seed = 1;
  return c;
}

std::vector<TokenId> random_ids(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<TokenId> d(0, 258);
  std::vector<TokenId> ids(n);
  for (auto& x : ids) x = d(rng);
  return ids;
}

// ---- 1 ----------------------------------------------------------------------

Outcome gradient_fidelity() {
  std::mt19937_64 rng(2024);
  double worst = 0;
  std::string worst_op;
  std::size_t ops = 0;
  for (const auto& op : gradcheck::all_ops()) {
    ++ops;
    for (int trial = 0; trial < 100; ++trial) {
      auto inputs = op.make_inputs(rng);
      const double e = gradcheck::check(op.loss, inputs).rel_error;
      if (e > worst) {
        worst = e;
        worst_op = op.name;
      }
    }
  }
  return {worst < 1e-3, std::to_string(ops) + " ops x 100 trials, worst relative error " +
                            fmt("%.2e", worst) + " (" + worst_op + ")"};
}

// ---- 2 ----------------------------------------------------------------------

Outcome zero_init_identity() {
  const DecoderModel base = DecoderModel::init(toy_config());
  DecoderModel adapted = base.clone();
  inject(adapted, LoraConfig{});
  std::mt19937_64 rng(5);
  std::size_t equal = 0;
  for (int i = 0; i < 50; ++i) {
    const auto ids = random_ids(1 + rng() % 64, rng);
    equal += adapted.logits(ids) == base.logits(ids);
  }
  return {equal == 50, std::to_string(equal) + "/50 inputs bit-identical"};
}

// ---- 3 ----------------------------------------------------------------------

Outcome merge_equivalence() {
  DecoderModel m = DecoderModel::init(toy_config());
  LoraConfig lc;
  lc.seed = 2;
  inject(m, lc);
  const synth::World w;
  const auto records = synth::qa_records(w, 2, 3, true);
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.train_seq_len = 160;
  const TrainingBatch batch = build_batch(records, PromptFormat{}, tc);
  AdamW opt = make_adapter_optimizer(m, tc);
  std::mt19937_64 rng(4);
  for (int s = 0; s < 100; ++s) train_step(m, batch, opt, rng);

  std::mt19937_64 probe_rng(6);
  const auto probe = random_ids(64, probe_rng);
  const auto adapted = m.logits(probe);
  merge_all(m);
  const auto merged = m.logits(probe);
  unmerge_all(m);
  const auto restored = m.logits(probe);
  double diff = 0;
  for (std::size_t i = 0; i < adapted.size(); ++i) diff = std::max(diff, double(std::abs(adapted[i] - merged[i])));
  const bool exact = restored == adapted;
  return {diff < 1e-5 && exact, "max |adapted - merged| = " + fmt("%.2e", diff) +
                                    (exact ? ", unmerge bit-exact" : ", unmerge NOT bit-exact")};
}

// ---- 4 ----------------------------------------------------------------------

Outcome parameter_accounting() {
  DecoderModel m = DecoderModel::init(toy_config());
  LoraConfig lc;
  lc.rank = 4;
  lc.target_names = {"q_proj", "v_proj"};
  const std::size_t adapters = inject(m, lc);
  const std::size_t count = trainable_param_count(m);
  const std::size_t law = 8 * (64 + 64) * 4;
  return {count == law && adapters == 8,
          std::to_string(adapters) + " adapters, " + std::to_string(count) + " trainable (expected " +
              std::to_string(law) + ")"};
}

// ---- 5 ----------------------------------------------------------------------

Outcome perplexity_oracle() {
  const auto uniform = rigged::uniform();
  double worst_uniform = 0;
  for (const char* resp : {"a", "hello world", "multi\nline response", "\xc3\xa9t\xc3\xa9"})
    worst_uniform = std::max(worst_uniform, std::abs(response_perplexity(uniform, {"Why?", resp}).perplexity - 259.0));
  const auto half = rigged::with_probabilities({{'a', 0.5}, {'b', 0.5}});
  const double p2 = response_perplexity(half, {"Q", "abbaab"}).perplexity;
  const bool ok = worst_uniform < 1e-4 && std::abs(p2 - 2.0) < 1e-9;
  return {ok, "uniform |ppl - 259| <= " + fmt("%.1e", worst_uniform) + ", p=0.5 model ppl = " + fmt("%.12f", p2)};
}

// ---- 6 ----------------------------------------------------------------------

std::string golden(const std::string& name) { return read_file(fs::path(FORGE_GOLDEN_DIR) / name); }

ChoiceTask nli(std::string premise, std::string hypothesis, std::size_t gold) {
  ChoiceTask t;
  t.fields = {{"premise", std::move(premise)}, {"hypothesis", std::move(hypothesis)}};
  t.choices = {"entailment", "contradiction", "neutral"};
  t.gold = gold;
  t.task = "jnli";
  return t;
}

Outcome prompt_bytes() {
  std::size_t checked = 0, matched = 0;
  auto check = [&](const std::string& got, const std::string& file) {
    ++checked;
    matched += got == golden(file);
  };
  InstructionRecord with, without;
  with.instruction = "Summarize.";
  with.input = "abc";
  with.output = "ab";
  without.instruction = "Name a primary color.";
  without.output = "red";
  for (auto [v, tag] : {std::pair{PromptVersion::kV02, "v02"}, std::pair{PromptVersion::kV03, "v03"}}) {
    const PromptFormat f = PromptFormat::builtin(v);
    check(render_prompt(with, f, RenderMode::kTraining), std::string("prompt_") + tag + "_with_input.txt");
    check(render_prompt(without, f, RenderMode::kTraining), std::string("prompt_") + tag + "_no_input.txt");
  }
  const std::vector<ChoiceTask> demos = {
      nli("Two women are jumping to catch a frisbee in the grass.", "The women are trying to catch a frisbee.", 0),
      nli("Two women are jumping to catch a frisbee in the grass.",
          "The two women are holding a tray with donuts on it.", 1),
      nli("A man is riding a bicycle down the street.", "The man is wearing a helmet.", 2)};
  const ChoiceTask query = nli("There are two children, and bananas and kiwis are placed next to the mixer.",
                               "There are children with droppers at the table where the mixer is placed.", 2);
  for (std::size_t k = 1; k <= 3; ++k) {
    const FewShotSpec spec{k, demos};
    check(assemble_fewshot_prompt(query, spec, PromptVersion::kV02), "fewshot_jnli_v02_k" + std::to_string(k) + ".txt");
    check(assemble_fewshot_prompt(query, spec, PromptVersion::kV03), "fewshot_jnli_v03_k" + std::to_string(k) + ".txt");
  }
  return {checked == matched, std::to_string(matched) + "/" + std::to_string(checked) + " fixtures byte-identical"};
}

// ---- 7 ----------------------------------------------------------------------

std::size_t longest_run(const TokenSequence& t) {
  std::size_t best = 0, run = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    run = (i > 0 && t[i] == t[i - 1]) ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

Outcome repetition_penalty() {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> nd(0.0F, 3.0F);
  bool identity = true;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<float> l(259);
    for (auto& v : l) v = nd(rng);
    const auto before = l;
    const auto gen = random_ids(20, rng);
    apply_repetition_penalty(l, gen, 1.0);
    identity = identity && l == before;
  }
  std::vector<float> row(259, rigged::kNever);
  row['X'] = 1.0F;
  row['Y'] = 0.8F;
  const rigged::FixedRowLM looping(row);
  GenerationParams p;
  p.max_new_tokens = 32;
  const std::size_t plain = longest_run(generate(looping, "go", p).tokens);
  p.repetition_penalty = 1.5;
  const std::size_t penalized = longest_run(generate(looping, "go", p).tokens);
  return {identity && penalized < plain,
          std::string(identity ? "penalty 1.0 is the identity" : "penalty 1.0 CHANGED logits") +
              "; longest repeat run " + std::to_string(plain) + " at 1.0 vs " + std::to_string(penalized) +
              " at 1.5"};
}

// ---- 8 and 9: shared pretrained base ------------------------------------------

struct SharedBase {
  std::optional<DecoderModel> model;
  double seconds = 0;
  float final_loss = 0;
};

SharedBase& shared_base() {
  static SharedBase base;
  if (!base.model) {
    const auto t0 = Clock::now();
    DecoderModel m = DecoderModel::init(toy_config());
    const synth::World w;
    PretrainConfig pc;
    pc.steps = 500;
    pc.learning_rate = 3e-3;
    pc.batch_size = 8;
    pc.seq_len = 256;
    pc.seed = 2;
    base.final_loss = pretrain(m, synth::pretrain_corpus(w, 4000, 3), pc).back();
    base.model.emplace(std::move(m));
    base.seconds = seconds_since(t0);
  }
  return base;
}

TrainConfig tuning_config() {
  TrainConfig tc;
  tc.learning_rate = 3e-3;
  tc.epochs = 6;
  tc.batch_size = 8;
  tc.train_seq_len = 256;
  tc.seed = 5;
  return tc;
}

LoraConfig tuning_lora() {
  LoraConfig lc;  // r = 4, alpha = 16, dropout 0.05, q_proj + v_proj
  lc.seed = 4;
  return lc;
}

Outcome perplexity_direction(double& shared_seconds) {
  SharedBase& base = shared_base();
  shared_seconds = base.seconds;
  const synth::World w;
  // Tuning records and held-out items are rendered with the same question template.
  const PromptFormat question{PromptTemplate::question(), PromptTemplate::question()};
  const auto held_out = synth::qa_items(w, 100, 99);
  const double before = corpus_perplexity(*base.model, held_out).pooled;
  DecoderModel tuned = base.model->clone();
  inject(tuned, tuning_lora());
  train(tuned, synth::qa_records(w, 200, 11, true), question, tuning_config());
  const double after = corpus_perplexity(tuned, held_out).pooled;
  const double drop = 1.0 - after / before;
  return {drop >= 0.20, "held-out perplexity " + fmt("%.3f", before) + " -> " + fmt("%.3f", after) + " (" +
                            fmt("%.1f", 100 * drop) + "% lower; pretraining loss " +
                            fmt("%.3f", base.final_loss) + ")"};
}

Outcome classification_direction(double& shared_seconds) {
  SharedBase& base = shared_base();
  shared_seconds = base.seconds;
  const synth::World w;
  const auto tasks = synth::color_tasks(w, 300, 77);
  const auto demos = synth::color_tasks(w, 3, 55);
  ChoiceEvalOptions eo;
  eo.shots = {1};
  const double before = evaluate_choices(*base.model, tasks, demos, eo).shots[0].accuracy();
  DecoderModel tuned = base.model->clone();
  inject(tuned, tuning_lora());
  // Tuning covers choice questions about food and objects only; no color question appears.
  train(tuned, synth::choice_records(w, 200, 11), PromptFormat::builtin(PromptVersion::kV03), tuning_config());
  const double after = evaluate_choices(tuned, tasks, demos, eo).shots[0].accuracy();
  return {after >= 1.0 / 3.0 + 0.10, "1-shot accuracy on 300 held-out color items " + fmt("%.3f", before) +
                                         " -> " + fmt("%.3f", after) + " (chance 0.333, need >= 0.433)"};
}

// ---- 10 ---------------------------------------------------------------------

Outcome filter_correctness() {
  TempDir dir;
  const std::vector<std::pair<std::string, std::string>> mixed = {
      {"r0", "qa"},          {"r1", "translation"}, {"r2", "correction"}, {"r3", "translation"},
      {"r4", "commonsense"}, {"r5", "summarization"}, {"r6", "translation"}, {"r7", "other"}};
  std::string text;
  for (const auto& [id, cat] : mixed)
    text += nlohmann::json{{"instruction", id}, {"input", nullptr}, {"output", "o"}, {"category", cat}, {"source", "fixture"}}
                .dump() +
            "\n";
  write_file(dir / "mixed.jsonl", text);
  const std::string cmd = std::string("'") + FORGE_CLI_PATH + "' build-dataset --input '" +
                          (dir / "mixed.jsonl").string() + "' --exclude translation --output '" +
                          (dir / "out.jsonl").string() + "' >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return {false, "build-dataset failed"};
  const auto out = load_records(dir / "out.jsonl").records;
  std::vector<std::string> want;
  for (const auto& [id, cat] : mixed)
    if (cat != "translation") want.push_back(id);
  std::vector<std::string> got;
  std::size_t translation = 0;
  for (const auto& r : out) {
    got.push_back(r.instruction);
    translation += r.category == Category::kTranslation;
  }
  return {translation == 0 && got == want, std::to_string(out.size()) + " records kept, " +
                                               std::to_string(translation) + " translation, order " +
                                               (got == want ? "preserved" : "CHANGED")};
}

struct Criterion {
  int id;
  const char* name;
  double limit;
  std::function<Outcome(double& extra_seconds)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient fidelity", 60, [](double&) { return gradient_fidelity(); }},
      {2, "LoRA zero-init identity", 5, [](double&) { return zero_init_identity(); }},
      {3, "merge equivalence", 30, [](double&) { return merge_equivalence(); }},
      {4, "parameter accounting", 1, [](double&) { return parameter_accounting(); }},
      {5, "perplexity oracle", 5, [](double&) { return perplexity_oracle(); }},
      {6, "prompt byte-exactness", 5, [](double&) { return prompt_bytes(); }},
      {7, "repetition-penalty contract", 10, [](double&) { return repetition_penalty(); }},
      {8, "tuning lowers held-out perplexity", 600, perplexity_direction},
      {9, "tuning helps an unseen classification task", 600, classification_direction},
      {10, "filter correctness", 5, [](double&) { return filter_correctness(); }},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    Outcome o;
    double shared = 0;
    const auto t0 = Clock::now();
    try {
      o = c.run(shared);
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    // Time spent building a shared pretrained base counts for every criterion using it.
    const double own = seconds_since(t0);
    const double elapsed = own + (shared > 0 && own < shared ? shared : 0);
    const bool in_time = elapsed <= c.limit;
    const bool pass = o.ok && in_time;
    failed += !pass;
    std::printf("[%s] %d. %s: %s; %.2f s of %.0f s%s\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                elapsed, c.limit, in_time ? "" : " (TIME LIMIT EXCEEDED)");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
