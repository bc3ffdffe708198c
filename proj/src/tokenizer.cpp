#include "dlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include "dlm/normalize.hpp"

namespace dlm {

const std::vector<std::string>& Vocab::special_tokens() {
  static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"};
  return specials;
}

Vocab::Vocab() : Vocab(special_tokens()) {}

Vocab::Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& specials = special_tokens();
  if (tokens_.size() < specials.size() || !std::equal(specials.begin(), specials.end(), tokens_.begin())) {
    throw std::invalid_argument("vocabulary must begin with [PAD] [UNK] [CLS] [SEP] [MASK]");
  }
  index_.reserve(tokens_.size());
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    const std::string& tok = tokens_[id];
    if (tok.empty() || tok.find_first_of(" \t\r\n") != std::string::npos) {
      throw std::invalid_argument("vocabulary token " + std::to_string(id) + " is empty or contains white space");
    }
    if (!index_.emplace(tok, static_cast<TokenId>(id)).second) {
      throw std::invalid_argument("duplicate vocabulary token '" + tok + "'");
    }
  }
}

std::optional<TokenId> Vocab::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  out += kHeaderTag;
  out += " size=" + std::to_string(tokens_.size()) + "\n";
  for (const auto& tok : tokens_) {
    out += tok;
    out += '\n';
  }
  return out;
}

Vocab Vocab::parse(std::string_view text) {
  const std::size_t header_end = text.find('\n');
  if (header_end == std::string_view::npos) throw std::invalid_argument("vocabulary file has no header line");
  const std::string header(text.substr(0, header_end));
  const std::string prefix = std::string(kHeaderTag) + " size=";
  if (header.rfind(prefix, 0) != 0) throw std::invalid_argument("bad vocabulary header: '" + header + "'");
  std::size_t declared = 0;
  try {
    std::size_t used = 0;
    declared = std::stoul(header.substr(prefix.size()), &used);
    if (used != header.size() - prefix.size()) throw std::invalid_argument("trailing characters");
  } catch (const std::exception&) {
    throw std::invalid_argument("bad vocabulary size in header: '" + header + "'");
  }

  std::vector<std::string> tokens;
  tokens.reserve(declared);
  std::size_t pos = header_end + 1;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    tokens.emplace_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  if (tokens.size() != declared) {
    throw std::invalid_argument("vocabulary header declares " + std::to_string(declared) + " tokens, file has " +
                                std::to_string(tokens.size()));
  }
  return Vocab(std::move(tokens));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary file " + path.string());
  out << serialize();
  if (!out) throw std::runtime_error("failed writing vocabulary file " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read vocabulary file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str());
}

namespace {

struct WordCounts {
  std::vector<std::string> words;  // sorted
  std::vector<std::int64_t> counts;
};

WordCounts count_words(std::span<const std::string> corpus) {
  std::map<std::string, std::int64_t> counts;
  for (const auto& sentence : corpus) {
    const std::string norm = normalize(sentence);
    for (std::string_view word : split_words(norm)) {
      if (utf8_boundaries(word).size() - 1 > kMaxCharsPerWord) continue;
      ++counts[std::string(word)];
    }
  }
  WordCounts result;
  for (auto& [word, n] : counts) {
    result.words.push_back(word);
    result.counts.push_back(n);
  }
  return result;
}

std::vector<std::string> initial_symbols(std::string_view word) {
  const auto bounds = utf8_boundaries(word);
  std::vector<std::string> symbols;
  for (std::size_t i = 0; i + 1 < bounds.size(); ++i) {
    std::string sym = i == 0 ? std::string() : std::string(Vocab::kContinuation);
    sym.append(word.substr(bounds[i], bounds[i + 1] - bounds[i]));
    symbols.push_back(std::move(sym));
  }
  return symbols;
}

std::uint64_t pair_key(std::int32_t left, std::int32_t right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) | static_cast<std::uint32_t>(right);
}

bool is_continuation(std::string_view s) { return s.starts_with(Vocab::kContinuation); }

class MergeTrainer {
 public:
  explicit MergeTrainer(const WordCounts& counts) {
    std::map<std::string, int> alphabet;
    for (const auto& word : counts.words) {
      for (auto& sym : initial_symbols(word)) alphabet.emplace(std::move(sym), 0);
    }
    for (auto& [sym, id] : alphabet) id = intern(sym);
    for (std::size_t w = 0; w < counts.words.size(); ++w) {
      std::vector<std::int32_t> seq;
      for (const auto& sym : initial_symbols(counts.words[w])) seq.push_back(alphabet.at(sym));
      words_.push_back(std::move(seq));
      freqs_.push_back(counts.counts[w]);
    }
    alphabet_.reserve(alphabet.size());
    for (const auto& [sym, id] : alphabet) alphabet_.push_back(sym);
  }

  const std::vector<std::string>& alphabet() const { return alphabet_; }

  std::vector<std::string> run(std::size_t merge_budget, std::size_t min_frequency) {
    for (std::uint32_t w = 0; w < words_.size(); ++w) add_pairs(w, +1);
    for (const auto& [key, count] : pair_counts_) push(key, count);

    std::vector<std::string> merged_tokens;
    const std::unordered_set<std::string> specials(Vocab::special_tokens().begin(), Vocab::special_tokens().end());

    while (merged_tokens.size() < merge_budget && !heap_.empty()) {
      const Candidate top = heap_.top();
      heap_.pop();
      const auto it = pair_counts_.find(top.key);
      if (it == pair_counts_.end() || it->second != top.count || banned_.count(top.key)) continue;  // stale
      if (static_cast<std::size_t>(top.count) < min_frequency) break;

      const std::string& left = symbols_[top.left];
      const std::string& right = symbols_[top.right];
      std::string merged = left + right.substr(Vocab::kContinuation.size());
      // Special strings are never produced by merging, and a word-initial
      // token may not look like a continuation piece.
      if (specials.count(merged) || (!is_continuation(left) && is_continuation(merged))) {
        banned_.insert(top.key);
        continue;
      }
      const bool fresh = symbol_ids_.find(merged) == symbol_ids_.end();
      const std::int32_t merged_id = intern(merged);
      if (fresh) merged_tokens.push_back(merged);
      apply_merge(top.key, top.left, top.right, merged_id);
    }
    return merged_tokens;
  }

 private:
  struct Candidate {
    std::int64_t count;
    std::uint64_t key;
    std::int32_t left;
    std::int32_t right;
  };

  struct Lower {
    const std::vector<std::string>* symbols;
    // Max-heap order: larger count first, then lexicographically smaller pair.
    bool operator()(const Candidate& a, const Candidate& b) const {
      if (a.count != b.count) return a.count < b.count;
      const auto& sa = (*symbols)[a.left];
      const auto& sb = (*symbols)[b.left];
      if (sa != sb) return sb < sa;
      return (*symbols)[b.right] < (*symbols)[a.right];
    }
  };

  std::int32_t intern(const std::string& sym) {
    const auto [it, inserted] = symbol_ids_.emplace(sym, static_cast<std::int32_t>(symbols_.size()));
    if (inserted) symbols_.push_back(sym);
    return it->second;
  }

  void push(std::uint64_t key, std::int64_t count) {
    if (count <= 0) return;
    heap_.push(Candidate{count, key, static_cast<std::int32_t>(key >> 32),
                         static_cast<std::int32_t>(key & 0xFFFFFFFFu)});
  }

  void add_pairs(std::uint32_t w, int sign) {
    const auto& seq = words_[w];
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) {
      const std::uint64_t key = pair_key(seq[i], seq[i + 1]);
      pair_counts_[key] += sign * freqs_[w];
      if (sign > 0) where_[key].push_back(w);
      touched_.push_back(key);
    }
  }

  void apply_merge(std::uint64_t key, std::int32_t left, std::int32_t right, std::int32_t merged) {
    std::vector<std::uint32_t> affected = std::move(where_[key]);
    where_.erase(key);
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    touched_.clear();
    for (std::uint32_t w : affected) {
      auto& seq = words_[w];
      bool present = false;
      for (std::size_t i = 0; i + 1 < seq.size(); ++i) present |= (seq[i] == left && seq[i + 1] == right);
      if (!present) continue;
      add_pairs(w, -1);
      std::vector<std::int32_t> next;
      next.reserve(seq.size());
      for (std::size_t i = 0; i < seq.size();) {
        if (i + 1 < seq.size() && seq[i] == left && seq[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(seq[i]);
          ++i;
        }
      }
      seq = std::move(next);
      add_pairs(w, +1);
    }
    std::sort(touched_.begin(), touched_.end());
    touched_.erase(std::unique(touched_.begin(), touched_.end()), touched_.end());
    for (std::uint64_t k : touched_) {
      const auto it = pair_counts_.find(k);
      if (it == pair_counts_.end()) continue;
      if (it->second <= 0) {
        pair_counts_.erase(it);
      } else {
        push(k, it->second);
      }
    }
  }

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, std::int32_t> symbol_ids_;
  std::vector<std::string> alphabet_;
  std::vector<std::vector<std::int32_t>> words_;
  std::vector<std::int64_t> freqs_;
  std::unordered_map<std::uint64_t, std::int64_t> pair_counts_;
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> where_;
  std::vector<std::uint64_t> touched_;
  std::unordered_set<std::uint64_t> banned_;
  std::priority_queue<Candidate, std::vector<Candidate>, Lower> heap_{Lower{&symbols_}};
};

}  // namespace

std::size_t alphabet_size(std::span<const std::string> corpus) {
  return MergeTrainer(count_words(corpus)).alphabet().size();
}

Vocab train_vocab(std::span<const std::string> corpus, const VocabTrainOptions& options) {
  if (corpus.empty()) throw std::invalid_argument("train_vocab: corpus is empty");
  const WordCounts counts = count_words(corpus);
  if (counts.words.empty()) throw std::invalid_argument("train_vocab: corpus has no words");
  MergeTrainer trainer(counts);
  const std::size_t base = trainer.alphabet().size() + Vocab::kNumSpecial;
  if (options.target_size <= base) {
    throw std::invalid_argument("train_vocab: target_size " + std::to_string(options.target_size) +
                                " must exceed alphabet (" + std::to_string(trainer.alphabet().size()) +
                                ") + specials (" + std::to_string(Vocab::kNumSpecial) + ")");
  }
  std::vector<std::string> tokens = Vocab::special_tokens();
  for (const auto& sym : trainer.alphabet()) tokens.push_back(sym);
  for (auto& tok : trainer.run(options.target_size - base, std::max<std::size_t>(options.min_frequency, 1))) {
    tokens.push_back(std::move(tok));
  }
  return Vocab(std::move(tokens));
}

std::size_t TokenizedSequence::maskable_count() const {
  std::size_t total = 0;
  for (const auto& span : word_spans) total += span.size();
  return total;
}

std::vector<TokenId> segment_word(std::string_view word, const Vocab& vocab) {
  const auto bounds = utf8_boundaries(word);
  const std::size_t chars = bounds.size() - 1;
  if (chars == 0) return {};
  if (chars > kMaxCharsPerWord) return {Vocab::kUnk};

  std::vector<TokenId> pieces;
  std::string candidate;
  std::size_t start = 0;
  while (start < chars) {
    std::optional<TokenId> match;
    std::size_t stop = chars;
    for (; stop > start; --stop) {
      candidate.clear();
      if (start > 0) candidate += Vocab::kContinuation;
      candidate.append(word.substr(bounds[start], bounds[stop] - bounds[start]));
      if (start == 0 && is_continuation(candidate)) continue;
      match = vocab.find(candidate);
      if (match && !Vocab::is_special(*match)) break;
      match.reset();
    }
    if (!match) return {Vocab::kUnk};
    pieces.push_back(*match);
    start = stop;
  }
  return pieces;
}

TokenizedSequence encode(std::string_view text, const Vocab& vocab, std::size_t max_len) {
  if (max_len < 3) throw std::invalid_argument("encode: max_len must be at least 3");
  TokenizedSequence seq;
  seq.ids.push_back(Vocab::kCls);
  const std::size_t limit = max_len - 1;  // room left for [SEP]
  const std::string norm = normalize(text);
  for (std::string_view word : split_words(norm)) {
    if (seq.ids.size() >= limit) break;
    const auto pieces = segment_word(word, vocab);
    const std::size_t take = std::min(pieces.size(), limit - seq.ids.size());
    const std::size_t begin = seq.ids.size();
    seq.ids.insert(seq.ids.end(), pieces.begin(), pieces.begin() + static_cast<std::ptrdiff_t>(take));
    seq.word_spans.push_back(WordSpan{begin, seq.ids.size()});
  }
  seq.ids.push_back(Vocab::kSep);
  return seq;
}

std::string decode(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token(id);
    if (Vocab::is_special(id)) continue;
    if (is_continuation(tok)) {
      out.append(tok, Vocab::kContinuation.size());
    } else {
      if (!out.empty()) out.push_back(' ');
      out += tok;
    }
  }
  return out;
}

}  // namespace dlm
