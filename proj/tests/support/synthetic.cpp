#include "synthetic.hpp"

#include <algorithm>

namespace synth {

namespace {

template <typename T>
const T& pick(const std::vector<T>& v, std::mt19937_64& rng) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

struct Fact {
  std::string sentence;
  std::string question;
  std::string answer;
  bool color = false;
};

Fact fact_about(const World& w, const std::string& n, std::mt19937_64& rng) {
  switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
    case 0: {
      const auto& o = pick(w.objects, rng);
      return {n + " has a " + o + ".", "What does " + n + " have?", o};
    }
    case 1: {
      const auto& f = pick(w.foods, rng);
      return {n + " eats " + f + ".", "What does " + n + " eat?", f};
    }
    default: {
      const auto& c = pick(w.colors, rng);
      return {n + " likes " + c + ".", "What does " + n + " like?", c, true};
    }
  }
}

Fact random_fact(const World& w, std::mt19937_64& rng) { return fact_about(w, pick(w.names, rng), rng); }

}  // namespace

std::vector<std::string> pretrain_corpus(const World& w, std::size_t documents, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> out;
  for (std::size_t d = 0; d < documents; ++d) {
    // Facts about different people. Half the documents ask right after a fact,
    // the rest ask at the end about any earlier fact.
    std::vector<std::string> names = w.names;
    std::shuffle(names.begin(), names.end(), rng);
    const int n = std::uniform_int_distribution<int>(2, 4)(rng);
    const bool inline_questions = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    std::vector<Fact> facts;
    std::string doc;
    for (int i = 0; i < n; ++i) {
      facts.push_back(fact_about(w, names[static_cast<std::size_t>(i)], rng));
      const Fact& f = facts.back();
      doc += (doc.empty() ? "" : " ") + f.sentence;
      if (inline_questions && std::uniform_int_distribution<int>(0, 1)(rng) == 0)
        doc += " " + f.question + " " + f.answer + ".";
    }
    if (!inline_questions) {
      const int q = std::uniform_int_distribution<int>(1, 3)(rng);
      for (int i = 0; i < q; ++i) {
        const Fact& f = pick(facts, rng);
        doc += " " + f.question + (std::uniform_int_distribution<int>(0, 1)(rng) ? " The answer is " : " ") +
               f.answer + ".";
      }
    }
    out.push_back(doc);
  }
  return out;
}

std::vector<forge::InstructionRecord> qa_records(const World& w, std::size_t n,
                                                 std::uint64_t seed, bool with_colors) {
  std::mt19937_64 rng(seed);
  std::vector<forge::InstructionRecord> out;
  while (out.size() < n) {
    const Fact a = random_fact(w, rng);
    const Fact b = random_fact(w, rng);
    const bool first = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    const Fact& asked = first ? a : b;
    if (!with_colors && (a.color || b.color)) continue;
    forge::InstructionRecord r;
    r.instruction = "Answer the question about the text.";
    r.input = a.sentence + " " + b.sentence + "\n" + asked.question;
    r.output = asked.answer;
    r.category = forge::Category::kQa;
    r.source = "synthetic";
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<forge::PerplexityItem> qa_items(const World& w, std::size_t n, std::uint64_t seed) {
  std::vector<forge::PerplexityItem> out;
  for (const auto& r : qa_records(w, n, seed, true)) out.push_back({*r.input, r.output});
  return out;
}

std::vector<forge::InstructionRecord> choice_records(const World& w, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<forge::InstructionRecord> out;
  while (out.size() < n) {
    const int family = std::uniform_int_distribution<int>(0, 2)(rng);
    const auto& pool = family == 0 ? w.foods : family == 1 ? w.objects : w.colors;
    std::vector<std::string> choices = pool;
    std::shuffle(choices.begin(), choices.end(), rng);
    choices.resize(3);
    const std::string answer = choices[0];
    std::shuffle(choices.begin(), choices.end(), rng);
    std::string target, question, subject;
    if (family == 2) {
      subject = pick(w.objects, rng);
      target = "the " + subject + " is " + answer + ".";
      question = "What color is the " + subject + "?";
    } else {
      subject = pick(w.names, rng);
      target = family == 0 ? subject + " eats " + answer + "." : subject + " has a " + answer + ".";
      question = "What does " + subject + (family == 0 ? " eat?" : " have?");
    }
    Fact other = random_fact(w, rng);
    while (other.color || other.sentence.starts_with(subject + " ") ||
           other.sentence.find(" " + subject + ".") != std::string::npos)
      other = random_fact(w, rng);
    const bool first = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    forge::InstructionRecord r;
    r.instruction = "Choose the answer from the following:";
    for (const auto& c : choices) r.instruction += "\n" + c;
    r.input = "Text: " + (first ? target + " " + other.sentence : other.sentence + " " + target) +
              "\nQuestion: " + question;
    r.output = answer;
    r.category = forge::Category::kOther;
    r.source = "synthetic";
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<forge::ChoiceTask> color_tasks(const World& w, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<forge::ChoiceTask> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gold = i % w.colors.size();
    const std::string& name = pick(w.names, rng);
    const std::string target = name + " likes " + w.colors[gold] + ".";
    Fact other = random_fact(w, rng);
    while (other.color) other = random_fact(w, rng);
    const bool first = std::uniform_int_distribution<int>(0, 1)(rng) == 0;
    forge::ChoiceTask t;
    t.fields = {{"text", first ? target + " " + other.sentence : other.sentence + " " + target},
                {"question", "What does " + name + " like?"}};
    t.choices = w.colors;
    t.gold = gold;
    t.version = forge::PromptVersion::kV03;
    out.push_back(std::move(t));
  }
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace synth
