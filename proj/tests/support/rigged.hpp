#pragma once

// Hand-built CausalLM stand-ins whose next-token distributions are known in
// closed form.

#include <cmath>
#include <functional>
#include <map>

#include "forge/errors.hpp"
#include "forge/model.hpp"

namespace rigged {

using forge::TokenId;

constexpr float kNever = -1e30F;

// Same logits row at every position.
class FixedRowLM : public forge::CausalLM {
 public:
  explicit FixedRowLM(std::vector<float> row, std::size_t ctx = 4096) : row_(std::move(row)), ctx_(ctx) {}
  std::size_t vocab_size() const override { return row_.size(); }
  std::size_t max_seq_len() const override { return ctx_; }
  std::vector<float> logits(std::span<const TokenId> tokens) const override {
    if (tokens.size() > ctx_) throw forge::ContextOverflowError("rigged model context exceeded");
    std::vector<float> out;
    out.reserve(tokens.size() * row_.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) out.insert(out.end(), row_.begin(), row_.end());
    return out;
  }

 private:
  std::vector<float> row_;
  std::size_t ctx_;
};

inline FixedRowLM uniform(std::size_t ctx = 4096) { return FixedRowLM(std::vector<float>(259, 0.0F), ctx); }

// Next-byte probabilities given explicitly; every other token is impossible.
inline FixedRowLM with_probabilities(const std::map<char, double>& p, std::size_t ctx = 4096) {
  std::vector<float> row(259, kNever);
  for (const auto& [c, prob] : p) row[static_cast<unsigned char>(c)] = static_cast<float>(std::log(prob));
  return FixedRowLM(std::move(row), ctx);
}

// Logits computed from the previous token only.
class BigramLM : public forge::CausalLM {
 public:
  using Rule = std::function<std::vector<float>(TokenId previous)>;
  explicit BigramLM(Rule rule, std::size_t ctx = 4096) : rule_(std::move(rule)), ctx_(ctx) {}
  std::size_t vocab_size() const override { return 259; }
  std::size_t max_seq_len() const override { return ctx_; }
  std::vector<float> logits(std::span<const TokenId> tokens) const override {
    if (tokens.size() > ctx_) throw forge::ContextOverflowError("rigged model context exceeded");
    std::vector<float> out;
    for (TokenId t : tokens) {
      const auto row = rule_(t);
      out.insert(out.end(), row.begin(), row.end());
    }
    return out;
  }

 private:
  Rule rule_;
  std::size_t ctx_;
};

// Adds a constant to every logit of another model.
class ShiftedLM : public forge::CausalLM {
 public:
  ShiftedLM(const forge::CausalLM& base, float shift) : base_(base), shift_(shift) {}
  std::size_t vocab_size() const override { return base_.vocab_size(); }
  std::size_t max_seq_len() const override { return base_.max_seq_len(); }
  std::vector<float> logits(std::span<const TokenId> tokens) const override {
    auto out = base_.logits(tokens);
    for (auto& v : out) v += shift_;
    return out;
  }

 private:
  const forge::CausalLM& base_;
  float shift_;
};

}  // namespace rigged
