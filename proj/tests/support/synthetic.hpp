#pragma once

// Synthetic corpora with properties known by construction.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dlm/rng.hpp"

namespace dlm::testing {

// Arabic letters that normalization leaves untouched.
const std::vector<std::string>& stable_letters();

// `count` distinct words of 3..6 letters drawn from `letters`; words in
// `exclude` are never produced.
std::vector<std::string> make_lexicon(std::size_t count, Rng& rng, const std::vector<std::string>& exclude = {});

std::string join_words(const std::vector<std::string>& words);

// Sentences from a first-order chain over `lexicon`: every word has
// `branching` successors chosen up front, so context predicts the next word.
std::vector<std::string> markov_corpus(const std::vector<std::string>& lexicon, std::size_t sentences,
                                       std::size_t min_words, std::size_t max_words, std::size_t branching,
                                       std::uint64_t seed);

// A sentence of `min_words..max_words` words drawn uniformly from `lexicon`.
std::string random_sentence(const std::vector<std::string>& lexicon, std::size_t min_words, std::size_t max_words,
                            Rng& rng);

struct LabeledCorpus {
  std::vector<std::string> texts;
  std::vector<std::int32_t> labels;
};

// Class c sentences mix `cue_words` words of class c's private lexicon with
// shared filler words, so a bag-of-tokens rule separates the classes perfectly.
LabeledCorpus separable_corpus(std::size_t per_class, std::size_t num_classes, std::uint64_t seed);

// Two disjoint lexicons standing in for MSA (label 0) and dialect (label 1).
struct DialectLexicons {
  std::vector<std::string> msa;
  std::vector<std::string> dialect;
};
DialectLexicons dialect_lexicons(std::size_t words_per_class, std::uint64_t seed);

struct Dump {
  std::vector<std::string> lines;          // raw lines as written to disk
  std::vector<std::int32_t> label;         // per line: 0 = MSA, 1 = dialect
  std::size_t unique = 0;
  std::size_t duplicates = 0;
  std::size_t unique_dialect = 0;
  std::size_t unique_msa = 0;
};

// `total` lines of which exactly `duplicates` repeat an earlier line (after
// normalization; repeats may carry tatweel or a trailing CR). Labels are
// drawn with probability 1/2 per unique sentence.
Dump make_dump(const DialectLexicons& lex, std::size_t total, std::size_t duplicates, std::uint64_t seed);

}  // namespace dlm::testing
