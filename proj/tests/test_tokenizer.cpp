#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "dlm/normalize.hpp"
#include "dlm/rng.hpp"
#include "dlm/tokenizer.hpp"
#include "support/oracles.hpp"
#include "support/synthetic.hpp"

using namespace dlm;
using dlm::testing::brute_force_segment;
using dlm::testing::naive_merge_vocab;

namespace {

std::vector<std::string> letter_corpus(std::size_t sentences, std::uint64_t seed) {
  Rng rng(seed);
  const auto lexicon = dlm::testing::make_lexicon(300, rng);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < sentences; ++i) out.push_back(dlm::testing::random_sentence(lexicon, 3, 12, rng));
  return out;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("dlm_tok_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Normalize, CollapsesWhitespace) {
  EXPECT_EQ(normalize("hello  world"), "hello world");
  EXPECT_EQ(normalize("  a\t\tb\n c  "), "a b c");
  EXPECT_EQ(normalize("a  b"), "a b");
}

TEST(Normalize, DropsTatweel) { EXPECT_EQ(normalize("كـــتاب"), "كتاب"); }

TEST(Normalize, DropsDiacriticsAndUnifiesAlef) {
  EXPECT_EQ(normalize("أَحْمَد"), "احمد");
  EXPECT_EQ(normalize("إسلام آمن"), "اسلام امن");
  EXPECT_EQ(normalize("على"), "علي");
  EXPECT_EQ(normalize("كتابٌ"), "كتاب");
  EXPECT_EQ(normalize("هٰذا"), "هذا");
}

TEST(Normalize, AppliesNfc) {
  EXPECT_EQ(normalize("e\xCC\x81"), "\xC3\xA9");
  // Waw + combining hamza composes to U+0624 before harakat removal.
  EXPECT_EQ(normalize("\xD9\x88\xD9\x94"), "\xD8\xA4");
}

TEST(Normalize, LeavesOtherCharactersAlone) {
  EXPECT_EQ(normalize("Hello, World! 123"), "Hello, World! 123");
  EXPECT_EQ(normalize("ة ؤ ئ ء"), "ة ؤ ئ ء");
}

TEST(Normalize, RepairsMalformedUtf8) {
  const auto r = normalize_counted("ab\xFF" "cd\xC3");
  EXPECT_EQ(r.text, "ab�cd�");
  EXPECT_EQ(r.repaired, 2u);
  EXPECT_EQ(normalize_counted("سلام").repaired, 0u);
}

TEST(Normalize, Idempotent) {
  for (const auto& s : letter_corpus(200, 3)) {
    const std::string once = normalize(s);
    EXPECT_EQ(normalize(once), once);
  }
}

TEST(TrainVocab, MergesRepeatedPair) {
  const std::vector<std::string> corpus{"ab ab ab"};
  ASSERT_EQ(alphabet_size(corpus), 2u);
  const Vocab v = train_vocab(corpus, {.target_size = 2 + Vocab::kNumSpecial + 1, .min_frequency = 1});
  EXPECT_TRUE(v.contains("ab"));
  EXPECT_EQ(v.size(), 8u);
  EXPECT_EQ(v.tokens(), naive_merge_vocab(corpus, 8, 1));
}

TEST(TrainVocab, TargetTooSmallThrows) {
  const std::vector<std::string> corpus{"ab ab ab"};
  EXPECT_THROW(train_vocab(corpus, {.target_size = 6, .min_frequency = 1}), std::invalid_argument);
  EXPECT_THROW(train_vocab(corpus, {.target_size = 7, .min_frequency = 1}), std::invalid_argument);
}

TEST(TrainVocab, EmptyCorpusThrows) {
  const std::vector<std::string> corpus;
  EXPECT_THROW(train_vocab(corpus, {}), std::invalid_argument);
}

TEST(TrainVocab, TieGoesToSmallerPair) {
  const std::vector<std::string> corpus{"cd ab"};
  const Vocab v = train_vocab(corpus, {.target_size = 4 + Vocab::kNumSpecial + 1, .min_frequency = 1});
  EXPECT_TRUE(v.contains("ab"));
  EXPECT_FALSE(v.contains("cd"));
}

TEST(TrainVocab, MinFrequencyStopsMerging) {
  const std::vector<std::string> corpus{"ab ab cd"};
  const Vocab v = train_vocab(corpus, {.target_size = 100, .min_frequency = 2});
  EXPECT_TRUE(v.contains("ab"));
  EXPECT_FALSE(v.contains("cd"));
  EXPECT_EQ(v.size(), Vocab::kNumSpecial + 4 + 1);
}

TEST(TrainVocab, ContinuationPiecesCarryMarker) {
  const std::vector<std::string> corpus{"abc abc abc"};
  const Vocab v = train_vocab(corpus, {.target_size = 100, .min_frequency = 1});
  EXPECT_TRUE(v.contains("a"));
  EXPECT_TRUE(v.contains("##b"));
  EXPECT_TRUE(v.contains("##c"));
  EXPECT_TRUE(v.contains("abc"));
  EXPECT_FALSE(v.contains("b"));
}

TEST(TrainVocab, MatchesNaiveMergeLoop) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto corpus = letter_corpus(150, seed);
    for (std::size_t target : {80u, 200u, 400u}) {
      for (std::size_t minf : {1u, 3u}) {
        const Vocab v = train_vocab(corpus, {.target_size = target, .min_frequency = minf});
        EXPECT_EQ(v.tokens(), naive_merge_vocab(corpus, target, minf))
            << "seed " << seed << " target " << target << " min_frequency " << minf;
      }
    }
  }
}

TEST(TrainVocab, SpecialsFirstAndNeverMerged) {
  const std::vector<std::string> corpus{"[MASK] [MASK] [MASK] [UNK]"};
  const Vocab v = train_vocab(corpus, {.target_size = 200, .min_frequency = 1});
  for (std::size_t i = 0; i < Vocab::kNumSpecial; ++i) EXPECT_EQ(v.token(static_cast<TokenId>(i)), Vocab::special_tokens()[i]);
  std::size_t count = 0;
  for (const auto& t : v.tokens()) count += (t == "[MASK]");
  EXPECT_EQ(count, 1u);
}

TEST(TrainVocab, Deterministic) {
  const auto corpus = letter_corpus(500, 9);
  const VocabTrainOptions opts{.target_size = 500, .min_frequency = 2};
  EXPECT_EQ(train_vocab(corpus, opts).serialize(), train_vocab(corpus, opts).serialize());
}

TEST(VocabFile, SerializeRoundTripsByteIdentically) {
  const auto corpus = letter_corpus(500, 4);
  const Vocab v = train_vocab(corpus, {.target_size = 800, .min_frequency = 2});
  const std::string text = v.serialize();
  EXPECT_EQ(text.rfind("#wordpiece-v1 size=" + std::to_string(v.size()) + "\n", 0), 0u);
  EXPECT_EQ(Vocab::parse(text).serialize(), text);
  const auto path = temp_path("vocab.txt");
  v.save(path);
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  EXPECT_EQ(buf.str(), text);
  EXPECT_EQ(Vocab::load(path), v);
  std::filesystem::remove(path);
}

TEST(VocabFile, RejectsBadInput) {
  EXPECT_THROW(Vocab::parse("nonsense\n"), std::invalid_argument);
  EXPECT_THROW(Vocab::parse("#wordpiece-v1 size=6\n[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n"), std::invalid_argument);
  EXPECT_THROW(Vocab::parse("#wordpiece-v1 size=6\n[PAD]\n[UNK]\n[CLS]\n[SEP]\n[MASK]\n[PAD]\n"),
               std::invalid_argument);
  EXPECT_THROW(Vocab::parse("#wordpiece-v1 size=5\n[UNK]\n[PAD]\n[CLS]\n[SEP]\n[MASK]\n"), std::invalid_argument);
  EXPECT_THROW(Vocab::load("/nonexistent/vocab.txt"), std::runtime_error);
}

TEST(VocabFile, IdsAreMutualInverses) {
  const Vocab v = train_vocab(letter_corpus(200, 5), {.target_size = 300, .min_frequency = 1});
  for (std::size_t id = 0; id < v.size(); ++id) {
    EXPECT_EQ(v.find(v.token(static_cast<TokenId>(id))), static_cast<TokenId>(id));
  }
}

TEST(Encode, SingleInVocabWord) {
  const Vocab v({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "كتاب"});
  const auto seq = encode("كتاب", v, 128);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{Vocab::kCls, 5, Vocab::kSep}));
  ASSERT_EQ(seq.word_spans.size(), 1u);
  EXPECT_EQ(seq.word_spans[0], (WordSpan{1, 2}));
  EXPECT_EQ(seq.maskable_count(), 1u);
}

TEST(Encode, UnknownCharacterGivesWholeWordUnk) {
  const Vocab v({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "##b"});
  const auto seq = encode("abz", v, 128);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{Vocab::kCls, Vocab::kUnk, Vocab::kSep}));
  ASSERT_EQ(seq.word_spans.size(), 1u);
  EXPECT_EQ(seq.word_spans[0].size(), 1u);
}

TEST(Encode, NormalizesFirst) {
  const Vocab v({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "احمد"});
  EXPECT_EQ(encode("  أَحْمَد ", v, 16).ids, (std::vector<TokenId>{2, 5, 3}));
}

TEST(Encode, EmptyTextIsClsSep) {
  const Vocab v;
  const auto seq = encode("   ", v, 8);
  EXPECT_EQ(seq.ids, (std::vector<TokenId>{Vocab::kCls, Vocab::kSep}));
  EXPECT_TRUE(seq.word_spans.empty());
}

TEST(Encode, MaxLenBelowThreeThrows) { EXPECT_THROW(encode("a", Vocab(), 2), std::invalid_argument); }

TEST(Encode, TruncatesLongSentenceKeepingSep) {
  // Single-letter vocabulary: a 4-letter word is 4 pieces, 50 words give 200.
  const auto& letters = dlm::testing::stable_letters();
  std::vector<std::string> tokens = Vocab::special_tokens();
  for (const auto& l : letters) tokens.push_back(l);
  for (const auto& l : letters) tokens.push_back("##" + l);
  const Vocab v(tokens);
  Rng rng(11);
  std::vector<std::string> words;
  for (int i = 0; i < 50; ++i) {
    std::string w;
    for (int k = 0; k < 4; ++k) w += letters[rng.uniform_index(letters.size())];
    words.push_back(w);
  }
  const std::string text = dlm::testing::join_words(words);

  std::vector<TokenId> pieces;
  std::vector<WordSpan> spans;
  for (const auto& w : words) {
    const auto seg = brute_force_segment(w, v);
    const std::size_t begin = 1 + pieces.size();
    pieces.insert(pieces.end(), seg.begin(), seg.end());
    spans.push_back({begin, 1 + pieces.size()});
  }
  ASSERT_EQ(pieces.size(), 200u);

  const auto seq = encode(text, v, 128);
  ASSERT_EQ(seq.ids.size(), 128u);
  EXPECT_EQ(seq.ids.front(), Vocab::kCls);
  EXPECT_EQ(seq.ids.back(), Vocab::kSep);
  EXPECT_TRUE(std::equal(seq.ids.begin() + 1, seq.ids.end() - 1, pieces.begin()));
  // 126 body slots: 31 whole words, then 2 pieces of the 32nd.
  ASSERT_EQ(seq.word_spans.size(), 32u);
  for (std::size_t i = 0; i < 31; ++i) EXPECT_EQ(seq.word_spans[i], spans[i]);
  EXPECT_EQ(seq.word_spans[31], (WordSpan{125, 127}));
}

TEST(Encode, SpansPartitionNonSpecialPositions) {
  const auto corpus = letter_corpus(300, 6);
  const Vocab v = train_vocab(corpus, {.target_size = 400, .min_frequency = 2});
  for (const auto& s : corpus) {
    const auto seq = encode(s, v, 20);
    std::vector<int> owner(seq.ids.size(), 0);
    std::size_t prev_end = 1;
    for (const auto& span : seq.word_spans) {
      EXPECT_EQ(span.begin, prev_end);
      EXPECT_GT(span.size(), 0u);
      for (std::size_t i = span.begin; i < span.end; ++i) ++owner[i];
      prev_end = span.end;
    }
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
      EXPECT_EQ(owner[i], Vocab::is_special(seq.ids[i]) && seq.ids[i] != Vocab::kUnk ? 0 : 1);
    }
  }
}

TEST(Segment, MatchesBruteForceOnRandomWords) {
  const auto corpus = letter_corpus(2000, 7);
  const Vocab v = train_vocab(corpus, {.target_size = 1500, .min_frequency = 2});
  const auto& letters = dlm::testing::stable_letters();
  Rng rng(8);
  std::size_t unk = 0;
  for (int i = 0; i < 1000; ++i) {
    std::string w;
    const std::size_t len = 1 + rng.uniform_index(10);
    for (std::size_t k = 0; k < len; ++k) w += letters[rng.uniform_index(letters.size())];
    if (i % 50 == 0) w += "z";
    const auto got = segment_word(w, v);
    EXPECT_EQ(got, brute_force_segment(w, v)) << w;
    unk += got == std::vector<TokenId>{Vocab::kUnk};
  }
  EXPECT_GE(unk, 20u);
}

TEST(Segment, PiecesConcatenateToWord) {
  const auto corpus = letter_corpus(1000, 10);
  const Vocab v = train_vocab(corpus, {.target_size = 900, .min_frequency = 2});
  for (const auto& s : corpus) {
    for (auto w : split_words(s)) {
      std::string glued;
      for (TokenId id : segment_word(w, v)) {
        const std::string& t = v.token(id);
        glued += t.rfind("##", 0) == 0 ? t.substr(2) : t;
      }
      EXPECT_EQ(glued, w);
    }
  }
}

TEST(Segment, OverlongWordIsUnk) {
  const Vocab v({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "a", "##a"});
  EXPECT_EQ(segment_word(std::string(kMaxCharsPerWord, 'a'), v).size(), kMaxCharsPerWord);
  EXPECT_EQ(segment_word(std::string(kMaxCharsPerWord + 1, 'a'), v), std::vector<TokenId>{Vocab::kUnk});
}

TEST(Decode, RoundTripsUnkFreeCorpus) {
  const auto corpus = letter_corpus(10000, 12);
  const Vocab v = train_vocab(corpus, {.target_size = 2000, .min_frequency = 2});
  for (const auto& s : corpus) {
    const auto seq = encode(s, v, 512);
    ASSERT_EQ(std::count(seq.ids.begin(), seq.ids.end(), Vocab::kUnk), 0);
    ASSERT_EQ(decode(seq.ids, v), normalize(s));
  }
}

TEST(Decode, SpecialsOnlyIsEmpty) {
  const Vocab v;
  const std::vector<TokenId> ids{Vocab::kCls, Vocab::kSep};
  EXPECT_EQ(decode(ids, v), "");
}

TEST(Decode, OutOfRangeIdThrows) {
  const Vocab v;
  const std::vector<TokenId> ids{Vocab::kCls, static_cast<TokenId>(v.size())};
  EXPECT_THROW(decode(ids, v), std::out_of_range);
  const std::vector<TokenId> neg{-1};
  EXPECT_THROW(decode(neg, v), std::out_of_range);
}

TEST(Decode, GluesContinuationPieces) {
  const Vocab v({"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "ab", "##cd", "x"});
  const std::vector<TokenId> ids{2, 5, 6, 7, 0, 3};
  EXPECT_EQ(decode(ids, v), "abcd x");
}
