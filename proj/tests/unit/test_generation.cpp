#include <doctest.h>

#include <random>

#include "forge/errors.hpp"
#include "forge/generation.hpp"
#include "rigged.hpp"

using namespace forge;

namespace {

// Longest run of one repeated token.
std::size_t longest_run(const TokenSequence& t) {
  std::size_t best = 0, run = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    run = (i > 0 && t[i] == t[i - 1]) ? run + 1 : 1;
    best = std::max(best, run);
  }
  return best;
}

rigged::FixedRowLM looping() {
  std::vector<float> row(259, rigged::kNever);
  row['X'] = 1.0F;
  row['Y'] = 0.8F;
  return rigged::FixedRowLM(row);
}

DecoderModel small_model() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.max_seq_len = 64;
  c.seed = 11;
  return DecoderModel::init(c);
}

}  // namespace

TEST_SUITE("generation") {
  TEST_CASE("penalty 1 is the identity") {
    std::vector<float> logits = {2.0F, -1.0F, 0.0F, 3.5F};
    const auto before = logits;
    const TokenSequence gen = {0, 1, 3};
    apply_repetition_penalty(logits, gen, 1.0);
    CHECK(logits == before);
  }

  TEST_CASE("penalty formula") {
    std::vector<float> logits = {2.0F, -1.0F, 0.0F, 3.0F};
    const TokenSequence gen = {0, 1, 0, 2};
    apply_repetition_penalty(logits, gen, 2.0);
    CHECK(logits[0] == 1.0F);   // divided once despite repeating
    CHECK(logits[1] == -2.0F);
    CHECK(logits[2] == 0.0F);
    CHECK(logits[3] == 3.0F);   // never generated

    std::vector<float> l2 = {2.0F};
    apply_repetition_penalty(l2, TokenSequence{0}, 1.05);
    CHECK(l2[0] == doctest::Approx(2.0 / 1.05).epsilon(1e-6));
    CHECK(l2[0] == doctest::Approx(1.90476).epsilon(1e-5));
  }

  TEST_CASE("penalty never raises a positive logit of a generated token") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<float> d(-5, 5);
    for (int trial = 0; trial < 200; ++trial) {
      std::vector<float> l(10);
      for (auto& v : l) v = d(rng);
      const auto before = l;
      const TokenSequence gen = {1, 3, 5, 7};
      apply_repetition_penalty(l, gen, 1.0 + trial * 0.01);
      for (TokenId g : gen) CHECK(l[g] <= std::max(before[g], 0.0F));
      for (TokenId i : {0, 2, 4, 6, 8, 9}) CHECK(l[i] == before[i]);
    }
  }

  TEST_CASE("invalid parameters") {
    std::vector<float> l = {1.0F};
    CHECK_THROWS_AS(apply_repetition_penalty(l, TokenSequence{0}, 0.9), ContractError);
    CHECK_THROWS_AS(apply_repetition_penalty(l, TokenSequence{4}, 1.5), RangeError);
    GenerationParams p;
    p.temperature = -1;
    CHECK_THROWS_AS(generate(looping(), "", p), ContractError);
    p = GenerationParams{};
    p.repetition_penalty = 0.5;
    CHECK_THROWS_AS(generate(looping(), "", p), ContractError);
  }

  TEST_CASE("penalty breaks a loop") {
    GenerationParams p;
    p.max_new_tokens = 20;
    const auto plain = generate(looping(), "go", p);
    CHECK(plain.text == std::string(20, 'X'));
    CHECK(longest_run(plain.tokens) == 20);
    p.repetition_penalty = 1.5;
    const auto penalized = generate(looping(), "go", p);
    CHECK(penalized.tokens.size() == 20);
    CHECK(longest_run(penalized.tokens) < longest_run(plain.tokens));
    CHECK(penalized.text.substr(0, 2) == "XY");
  }

  TEST_CASE("greedy decoding is deterministic") {
    const DecoderModel m = small_model();
    GenerationParams p;
    p.max_new_tokens = 12;
    p.stop_token.reset();
    const auto a = generate(m, "hello", p), b = generate(m, "hello", p);
    CHECK(a.tokens == b.tokens);
    CHECK(a.tokens.size() == 12);
  }

  TEST_CASE("sampling is deterministic in the seed") {
    const DecoderModel m = small_model();
    GenerationParams p;
    p.temperature = 1.0;
    p.max_new_tokens = 16;
    p.stop_token.reset();
    p.seed = 1;
    const auto a = generate(m, "x", p), b = generate(m, "x", p);
    CHECK(a.tokens == b.tokens);
    p.seed = 2;
    CHECK(generate(m, "x", p).tokens != a.tokens);
  }

  TEST_CASE("max_new_tokens 0 gives an empty string") {
    GenerationParams p;
    p.max_new_tokens = 0;
    const auto r = generate(looping(), "prompt", p);
    CHECK(r.text.empty());
    CHECK_FALSE(r.stopped);
  }

  TEST_CASE("stop token ends generation and is not returned") {
    std::vector<float> row(259, rigged::kNever);
    row[ByteTokenizer::kEos] = 1.0F;
    row['a'] = 0.5F;
    const rigged::FixedRowLM lm(row);
    const auto r = generate(lm, "p", GenerationParams{});
    CHECK(r.stopped);
    CHECK(r.tokens.empty());
  }

  TEST_CASE("context overflow") {
    GenerationParams p;
    p.max_new_tokens = 100;
    CHECK_THROWS_AS(generate(looping(), std::string(5000, 'a'), p), ContextOverflowError);
    std::vector<float> row(259, rigged::kNever);
    row['z'] = 0.0F;
    const rigged::FixedRowLM tight(row, 8);
    const auto r = generate(tight, "abc", p);
    CHECK(r.truncated);
    CHECK_FALSE(r.stopped);
    CHECK(r.tokens.size() == 5);  // BOS + 3 prompt bytes, then predictions until the context is full
    CHECK(r.text == "zzzzz");
  }
}
