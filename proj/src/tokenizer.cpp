#include "forge/tokenizer.hpp"

#include "forge/errors.hpp"

namespace forge {

TokenSequence ByteTokenizer::encode(std::string_view text) {
  TokenSequence ids;
  ids.reserve(text.size());
  for (char c : text) ids.push_back(static_cast<TokenId>(static_cast<unsigned char>(c)));
  return ids;
}

std::string ByteTokenizer::decode(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= kVocabSize)
      throw RangeError("token id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(kVocabSize));
    if (is_special(id)) continue;
    out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }
  return out;
}

}  // namespace forge
