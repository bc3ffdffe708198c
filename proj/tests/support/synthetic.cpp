#include "synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <unordered_set>

namespace dlm::testing {

const std::vector<std::string>& stable_letters() {
  static const std::vector<std::string> letters{"ا", "ب", "ت", "ث", "ج", "ح", "خ", "د", "ذ", "ر", "ز", "س", "ش", "ص",
                                                "ض", "ط", "ظ", "ع", "غ", "ف", "ق", "ك", "ل", "م", "ن", "ه", "و", "ي"};
  return letters;
}

std::vector<std::string> make_lexicon(std::size_t count, Rng& rng, const std::vector<std::string>& exclude) {
  const auto& letters = stable_letters();
  std::set<std::string> taken(exclude.begin(), exclude.end());
  std::vector<std::string> words;
  while (words.size() < count) {
    const std::size_t len = 3 + rng.uniform_index(4);
    std::string w;
    for (std::size_t i = 0; i < len; ++i) w += letters[rng.uniform_index(letters.size())];
    if (taken.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += ' ';
    out += words[i];
  }
  return out;
}

std::vector<std::string> markov_corpus(const std::vector<std::string>& lexicon, std::size_t sentences,
                                       std::size_t min_words, std::size_t max_words, std::size_t branching,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<std::size_t>> next(lexicon.size());
  for (auto& succ : next) {
    for (std::size_t b = 0; b < branching; ++b) succ.push_back(rng.uniform_index(lexicon.size()));
  }
  std::vector<std::string> corpus;
  for (std::size_t s = 0; s < sentences; ++s) {
    const std::size_t len = min_words + rng.uniform_index(max_words - min_words + 1);
    std::size_t w = rng.uniform_index(lexicon.size());
    std::vector<std::string> words;
    for (std::size_t i = 0; i < len; ++i) {
      words.push_back(lexicon[w]);
      w = next[w][rng.uniform_index(branching)];
    }
    corpus.push_back(join_words(words));
  }
  return corpus;
}

std::string random_sentence(const std::vector<std::string>& lexicon, std::size_t min_words, std::size_t max_words,
                            Rng& rng) {
  const std::size_t len = min_words + rng.uniform_index(max_words - min_words + 1);
  std::vector<std::string> words;
  for (std::size_t i = 0; i < len; ++i) words.push_back(lexicon[rng.uniform_index(lexicon.size())]);
  return join_words(words);
}

LabeledCorpus separable_corpus(std::size_t per_class, std::size_t num_classes, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::string> all;
  const auto filler = make_lexicon(40, rng);
  all = filler;
  std::vector<std::vector<std::string>> cues;
  for (std::size_t c = 0; c < num_classes; ++c) {
    cues.push_back(make_lexicon(15, rng, all));
    all.insert(all.end(), cues.back().begin(), cues.back().end());
  }
  LabeledCorpus out;
  for (std::size_t i = 0; i < per_class * num_classes; ++i) {
    const auto c = static_cast<std::int32_t>(i % num_classes);
    std::vector<std::string> words;
    const std::size_t n_cue = 2 + rng.uniform_index(2);
    const std::size_t n_fill = 2 + rng.uniform_index(4);
    for (std::size_t k = 0; k < n_cue; ++k) words.push_back(cues[c][rng.uniform_index(cues[c].size())]);
    for (std::size_t k = 0; k < n_fill; ++k) words.push_back(filler[rng.uniform_index(filler.size())]);
    rng.shuffle(std::span<std::string>(words));
    out.texts.push_back(join_words(words));
    out.labels.push_back(c);
  }
  return out;
}

DialectLexicons dialect_lexicons(std::size_t words_per_class, std::uint64_t seed) {
  Rng rng(seed);
  DialectLexicons lex;
  lex.msa = make_lexicon(words_per_class, rng);
  lex.dialect = make_lexicon(words_per_class, rng, lex.msa);
  return lex;
}

namespace {

// Same sentence after normalization: tatweel inside a word, doubled spaces
// or a trailing CR.
std::string disguise(const std::string& sentence, Rng& rng) {
  switch (rng.uniform_index(4)) {
    case 0: {
      // After the first letter (two bytes in UTF-8).
      std::string s = sentence;
      s.insert(2, "ـ");
      return s;
    }
    case 1: {
      std::string s;
      for (char ch : sentence) {
        s += ch;
        if (ch == ' ') s += ' ';
      }
      return "  " + s;
    }
    case 2:
      return sentence + "\r";
    default:
      return sentence;
  }
}

}  // namespace

Dump make_dump(const DialectLexicons& lex, std::size_t total, std::size_t duplicates, std::uint64_t seed) {
  if (duplicates >= total) throw std::invalid_argument("make_dump: duplicates must be fewer than total lines");
  Rng rng(seed);
  Dump dump;
  dump.unique = total - duplicates;
  dump.duplicates = duplicates;

  std::vector<bool> is_dup(total, false);
  {
    std::vector<std::size_t> slots(total - 1);
    std::iota(slots.begin(), slots.end(), std::size_t{1});
    rng.shuffle(std::span<std::size_t>(slots));
    for (std::size_t i = 0; i < duplicates; ++i) is_dup[slots[i]] = true;
  }

  std::unordered_set<std::string> seen;
  seen.reserve(dump.unique * 2);
  std::vector<std::size_t> firsts;  // line index of each unique sentence
  firsts.reserve(dump.unique);
  dump.lines.reserve(total);
  dump.label.reserve(total);
  for (std::size_t i = 0; i < total; ++i) {
    if (is_dup[i]) {
      const std::size_t src = firsts[rng.uniform_index(firsts.size())];
      dump.lines.push_back(disguise(dump.lines[src], rng));
      dump.label.push_back(dump.label[src]);
      continue;
    }
    const std::int32_t label = rng.uniform() < 0.5 ? 0 : 1;
    std::string s;
    do {
      s = random_sentence(label == 0 ? lex.msa : lex.dialect, 4, 10, rng);
    } while (!seen.insert(s).second);
    firsts.push_back(i);
    dump.lines.push_back(std::move(s));
    dump.label.push_back(label);
    (label == 0 ? dump.unique_msa : dump.unique_dialect) += 1;
  }
  return dump;
}

}  // namespace dlm::testing
