#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dlm {

using TokenId = std::int32_t;

// Bidirectional token <-> id table. Ids are dense; the five special tokens
// occupy ids 0..4. Word-internal pieces carry the "##" prefix.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kCls = 2;
  static constexpr TokenId kSep = 3;
  static constexpr TokenId kMask = 4;
  static constexpr std::size_t kNumSpecial = 5;
  static constexpr std::string_view kContinuation = "##";
  static constexpr std::string_view kHeaderTag = "#wordpiece-v1";

  static const std::vector<std::string>& special_tokens();

  Vocab();  // specials only
  // `tokens` must start with the specials in id order; duplicates rejected.
  explicit Vocab(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  std::optional<TokenId> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  const std::string& token(TokenId id) const;
  static bool is_special(TokenId id) { return id >= 0 && static_cast<std::size_t>(id) < kNumSpecial; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // "#wordpiece-v1 size=<n>" then one token per line; line k after the header is id k.
  std::string serialize() const;
  static Vocab parse(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

struct VocabTrainOptions {
  std::size_t target_size = 50000;
  std::size_t min_frequency = 2;
};

// Frequency-greedy pair merging over whitespace-split normalized words.
// Ties go to the lexicographically smallest (left, right) pair.
Vocab train_vocab(std::span<const std::string> corpus, const VocabTrainOptions& options);

// Number of distinct initial symbols train_vocab would start from.
std::size_t alphabet_size(std::span<const std::string> corpus);

struct WordSpan {
  std::size_t begin = 0;  // inclusive index into ids
  std::size_t end = 0;    // exclusive
  std::size_t size() const { return end - begin; }
  bool operator==(const WordSpan&) const = default;
};

struct TokenizedSequence {
  std::vector<TokenId> ids;
  std::vector<WordSpan> word_spans;

  // Tokens covered by word spans, i.e. everything except CLS/SEP/PAD.
  std::size_t maskable_count() const;
};

inline constexpr std::size_t kMaxCharsPerWord = 100;

// Greedy longest-match-first pieces of one normalized word, or {UNK} when
// some position has no match (or the word exceeds kMaxCharsPerWord).
std::vector<TokenId> segment_word(std::string_view word, const Vocab& vocab);

// Normalizes, then frames as [CLS] pieces... [SEP]; truncated to max_len
// with the trailing [SEP] kept. max_len >= 3.
TokenizedSequence encode(std::string_view text, const Vocab& vocab, std::size_t max_len);

// Specials dropped; continuation pieces glued; words single-spaced.
std::string decode(std::span<const TokenId> ids, const Vocab& vocab);

}  // namespace dlm
