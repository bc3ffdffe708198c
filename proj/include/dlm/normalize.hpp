#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace dlm {

struct NormalizedText {
  std::string text;
  // Malformed UTF-8 sequences replaced by U+FFFD.
  std::size_t repaired = 0;
};

// Arabic-aware canonicalization, applied in this order:
//   1. malformed UTF-8 -> U+FFFD, then Unicode NFC
//   2. drop harakat/tanwin (U+064B..U+065F), superscript alef (U+0670), tatweel (U+0640)
//   3. alef with hamza/madda (U+0623, U+0625, U+0622) -> bare alef (U+0627),
//      alef maqsura (U+0649) -> yeh (U+064A)
//   4. runs of Unicode white space collapse to one ASCII space; ends trimmed
NormalizedText normalize_counted(std::string_view text);
std::string normalize(std::string_view text);

// Byte offsets of every code point start, plus text.size() as a final entry.
// Input must be valid UTF-8 (as produced by normalize).
std::vector<std::size_t> utf8_boundaries(std::string_view text);

// Splits on single ASCII spaces; empty fields are skipped.
std::vector<std::string_view> split_words(std::string_view text);

}  // namespace dlm
