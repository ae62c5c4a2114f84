#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace forge {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by three specials.
class ByteTokenizer {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kPad = 258;
  static constexpr std::size_t kVocabSize = 259;

  static TokenSequence encode(std::string_view text);
  // Special ids decode to nothing; ids >= kVocabSize throw RangeError.
  static std::string decode(std::span<const TokenId> ids);

  static bool is_special(TokenId id) { return id >= kBos; }
};

}  // namespace forge
