#include <gtest/gtest.h>

#include <sstream>

#include "dlm/masking.hpp"
#include "dlm/rng.hpp"
#include "dlm/tokenizer.hpp"

using namespace dlm;

namespace {

// Framed sequence with word lengths drawn from 1..max_word and random regular ids.
TokenizedSequence random_sequence(Rng& rng, std::size_t words, std::size_t max_word, std::size_t vocab_size) {
  TokenizedSequence seq;
  seq.ids.push_back(Vocab::kCls);
  for (std::size_t w = 0; w < words; ++w) {
    const std::size_t len = 1 + rng.uniform_index(max_word);
    const std::size_t begin = seq.ids.size();
    for (std::size_t k = 0; k < len; ++k) {
      seq.ids.push_back(static_cast<TokenId>(Vocab::kNumSpecial + rng.uniform_index(vocab_size - Vocab::kNumSpecial)));
    }
    seq.word_spans.push_back({begin, seq.ids.size()});
  }
  seq.ids.push_back(Vocab::kSep);
  return seq;
}

std::size_t selected_count(const MaskedExample& ex, std::int32_t ignore = kDefaultIgnoreIndex) {
  return static_cast<std::size_t>(
      std::count_if(ex.labels.begin(), ex.labels.end(), [&](std::int32_t l) { return l != ignore; }));
}

}  // namespace

TEST(MaskBudget, CeilingOfRate) {
  EXPECT_EQ(mask_budget(0.15, 20), 3u);
  EXPECT_EQ(mask_budget(0.15, 21), 4u);
  EXPECT_EQ(mask_budget(0.15, 1), 1u);
  EXPECT_EQ(mask_budget(0.15, 0), 0u);
  EXPECT_EQ(mask_budget(0.0, 50), 0u);
  EXPECT_EQ(mask_budget(1.0, 50), 50u);
  EXPECT_EQ(mask_budget(0.1, 30), 3u);
  EXPECT_THROW(mask_budget(-0.1, 5), std::invalid_argument);
  EXPECT_THROW(mask_budget(1.5, 5), std::invalid_argument);
}

TEST(SequenceSeed, XorOfGlobalAndIndex) {
  EXPECT_EQ(sequence_seed(0xF0, 0x0F), 0xFFu);
  EXPECT_EQ(sequence_seed(12345, 0), 12345u);
}

TEST(MakeExample, ZeroRateLeavesInputsAlone) {
  Rng rng(1);
  const auto seq = random_sequence(rng, 10, 3, 100);
  MaskingConfig cfg;
  cfg.mask_rate = 0.0;
  cfg.max_len = 64;
  const auto ex = make_example(seq, 100, cfg, std::uint64_t{7});
  EXPECT_TRUE(std::equal(seq.ids.begin(), seq.ids.end(), ex.input_ids.begin()));
  EXPECT_EQ(selected_count(ex), 0u);
}

TEST(MakeExample, FullRateSelectsEveryInSpanToken) {
  Rng rng(2);
  const auto seq = random_sequence(rng, 12, 3, 100);
  MaskingConfig cfg;
  cfg.mask_rate = 1.0;
  cfg.max_len = 64;
  const auto ex = make_example(seq, 100, cfg, std::uint64_t{7});
  EXPECT_EQ(selected_count(ex), seq.maskable_count());
  for (const auto& span : seq.word_spans) {
    for (std::size_t i = span.begin; i < span.end; ++i) EXPECT_EQ(ex.labels[i], seq.ids[i]);
  }
  EXPECT_EQ(ex.labels[0], kDefaultIgnoreIndex);
  EXPECT_EQ(ex.labels[seq.ids.size() - 1], kDefaultIgnoreIndex);
}

TEST(MakeExample, PaddingAndAttention) {
  Rng rng(3);
  const auto seq = random_sequence(rng, 5, 2, 50);
  MaskingConfig cfg;
  cfg.max_len = 32;
  const auto ex = make_example(seq, 50, cfg, std::uint64_t{1});
  ASSERT_EQ(ex.input_ids.size(), 32u);
  ASSERT_EQ(ex.attention_mask.size(), 32u);
  ASSERT_EQ(ex.labels.size(), 32u);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(ex.attention_mask[i], i < seq.ids.size() ? 1 : 0);
    if (i >= seq.ids.size()) {
      EXPECT_EQ(ex.input_ids[i], Vocab::kPad);
      EXPECT_EQ(ex.labels[i], kDefaultIgnoreIndex);
    }
  }
}

TEST(MakeExample, NoMaskableTokensIsNotAnError) {
  TokenizedSequence seq{{Vocab::kCls, Vocab::kSep}, {}};
  MaskingConfig cfg;
  cfg.max_len = 8;
  const auto ex = make_example(seq, 50, cfg, std::uint64_t{1});
  EXPECT_EQ(selected_count(ex), 0u);
}

TEST(MakeExample, RejectsBadInput) {
  Rng rng(4);
  const auto seq = random_sequence(rng, 20, 2, 50);
  MaskingConfig cfg;
  cfg.max_len = 8;
  EXPECT_THROW(make_example(seq, 50, cfg, std::uint64_t{1}), std::invalid_argument);
  cfg.max_len = 128;
  cfg.mask_rate = 2.0;
  EXPECT_THROW(make_example(seq, 50, cfg, std::uint64_t{1}), std::invalid_argument);
  cfg.mask_rate = 0.15;
  EXPECT_THROW(make_example(seq, Vocab::kNumSpecial, cfg, std::uint64_t{1}), std::invalid_argument);
}

TEST(MakeExample, IgnoreIndexConfigurable) {
  Rng rng(5);
  const auto seq = random_sequence(rng, 10, 2, 50);
  MaskingConfig cfg;
  cfg.max_len = 40;
  cfg.ignore_index = -1;
  const auto ex = make_example(seq, 50, cfg, std::uint64_t{9});
  EXPECT_EQ(std::count(ex.labels.begin(), ex.labels.end(), kDefaultIgnoreIndex), 0);
  EXPECT_GT(std::count(ex.labels.begin(), ex.labels.end(), -1), 0);
  EXPECT_GT(selected_count(ex, -1), 0u);
}

TEST(MakeExample, DeterministicPerSeed) {
  Rng rng(6);
  const auto seq = random_sequence(rng, 40, 3, 500);
  const MaskingConfig cfg;
  const auto a = make_example(seq, 500, cfg, std::uint64_t{42});
  const auto b = make_example(seq, 500, cfg, std::uint64_t{42});
  EXPECT_EQ(a.input_ids, b.input_ids);
  EXPECT_EQ(a.labels, b.labels);
  bool differs = false;
  for (std::uint64_t s = 43; s < 53 && !differs; ++s) differs = make_example(seq, 500, cfg, s).labels != a.labels;
  EXPECT_TRUE(differs);
}

TEST(MakeExample, WholeWordsAndBudgetBounds) {
  Rng rng(7);
  const MaskingConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    const auto seq = random_sequence(rng, 1 + rng.uniform_index(40), 4, 300);
    const auto ex = make_example(seq, 300, cfg, rng);
    std::size_t longest = 0;
    for (const auto& span : seq.word_spans) {
      longest = std::max(longest, span.size());
      std::size_t labelled = 0;
      for (std::size_t i = span.begin; i < span.end; ++i) labelled += ex.labels[i] != kDefaultIgnoreIndex;
      ASSERT_TRUE(labelled == 0 || labelled == span.size());
    }
    EXPECT_EQ(ex.labels[0], kDefaultIgnoreIndex);
    const std::size_t budget = mask_budget(0.15, seq.maskable_count());
    const std::size_t got = selected_count(ex);
    EXPECT_GE(got, budget);
    EXPECT_LE(got, budget + (longest ? longest - 1 : 0));
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i] == kDefaultIgnoreIndex) {
        EXPECT_EQ(ex.input_ids[i], i < seq.ids.size() ? seq.ids[i] : Vocab::kPad);
      } else {
        EXPECT_EQ(ex.labels[i], seq.ids[i]);
        EXPECT_FALSE(Vocab::is_special(ex.input_ids[i]) && ex.input_ids[i] != Vocab::kMask);
      }
    }
  }
}

TEST(MakeExample, ReplacementFrequencies) {
  // Single-piece words make the selected fraction exact up to the ceiling.
  Rng rng(8);
  const std::size_t vocab = 5000;
  const MaskingConfig cfg;
  MaskTally tally;
  std::size_t mask = 0, random = 0, keep = 0, selected = 0, maskable = 0;
  while (maskable < 200000) {
    const auto seq = random_sequence(rng, 100, 1, vocab);
    const auto ex = make_example(seq, vocab, cfg, rng, &tally);
    maskable += seq.maskable_count();
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
      if (ex.labels[i] == kDefaultIgnoreIndex) continue;
      ++selected;
      if (ex.input_ids[i] == Vocab::kMask) {
        ++mask;
      } else if (ex.input_ids[i] == seq.ids[i]) {
        ++keep;
      } else {
        ++random;
      }
    }
  }
  EXPECT_EQ(tally.selected, selected);
  EXPECT_EQ(tally.maskable, maskable);
  EXPECT_EQ(tally.masked, mask);
  EXPECT_NEAR(static_cast<double>(selected) / maskable, 0.15, 0.005);
  const double n = static_cast<double>(selected);
  EXPECT_NEAR(mask / n, 0.80, 0.01);
  EXPECT_NEAR(random / n, 0.10, 0.01);
  EXPECT_NEAR(keep / n, 0.10, 0.01);
}

TEST(MakeBatches, SizesAndOrder) {
  Rng rng(9);
  MaskingConfig cfg;
  cfg.max_len = 16;
  std::vector<MaskedExample> examples;
  for (int i = 0; i < 130; ++i) examples.push_back(make_example(random_sequence(rng, 3, 2, 40), 40, cfg, rng));
  const auto batches = make_batches(examples, 64);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].tokens.batch, 64u);
  EXPECT_EQ(batches[1].tokens.batch, 64u);
  EXPECT_EQ(batches[2].tokens.batch, 2u);
  EXPECT_EQ(batches[2].tokens.length, 16u);
  EXPECT_EQ(batches[2].tokens.input_ids.size(), 32u);
  EXPECT_TRUE(std::equal(examples[129].input_ids.begin(), examples[129].input_ids.end(),
                         batches[2].tokens.input_ids.begin() + 16));
  EXPECT_TRUE(std::equal(examples[64].labels.begin(), examples[64].labels.end(), batches[1].labels.begin()));
}

TEST(MakeBatches, EmptyAndMixed) {
  EXPECT_TRUE(make_batches({}, 64).empty());
  Rng rng(10);
  MaskingConfig a;
  a.max_len = 16;
  MaskingConfig b;
  b.max_len = 20;
  const auto seq = random_sequence(rng, 3, 2, 40);
  const std::vector<MaskedExample> mixed{make_example(seq, 40, a, rng), make_example(seq, 40, b, rng)};
  EXPECT_THROW(make_batches(mixed, 4), std::invalid_argument);
  EXPECT_THROW(make_batches(mixed, 0), std::invalid_argument);
}

TEST(TrimPadding, DropsAllPadColumns) {
  Rng rng(11);
  MaskingConfig cfg;
  cfg.max_len = 32;
  const std::vector<MaskedExample> examples{make_example(random_sequence(rng, 2, 1, 40), 40, cfg, rng),
                                            make_example(random_sequence(rng, 5, 1, 40), 40, cfg, rng)};
  const auto batch = make_batches(examples, 2).front();
  const auto trimmed = trim_padding(batch);
  EXPECT_EQ(trimmed.tokens.length, 7u);
  EXPECT_EQ(trimmed.tokens.input_ids.size(), 14u);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 7; ++c) {
      EXPECT_EQ(trimmed.tokens.input_ids[r * 7 + c], batch.tokens.input_ids[r * 32 + c]);
      EXPECT_EQ(trimmed.labels[r * 7 + c], batch.labels[r * 32 + c]);
    }
  }
}

TEST(Dump, RoundTrips) {
  Rng rng(12);
  MaskingConfig cfg;
  cfg.max_len = 12;
  std::vector<MaskedExample> examples;
  for (int i = 0; i < 5; ++i) examples.push_back(make_example(random_sequence(rng, 3, 2, 40), 40, cfg, rng));
  std::stringstream buf;
  write_dump(buf, examples);
  const std::string text = buf.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 5);
  const auto back = read_dump(buf);
  ASSERT_EQ(back.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(back[i].input_ids, examples[i].input_ids);
    EXPECT_EQ(back[i].attention_mask, examples[i].attention_mask);
    EXPECT_EQ(back[i].labels, examples[i].labels);
  }
}

TEST(Dump, GoldenLine) {
  MaskedExample ex{{2, 7, 4, 3, 0}, {1, 1, 1, 1, 0}, {-100, -100, 9, -100, -100}};
  std::ostringstream out;
  write_dump(out, std::span<const MaskedExample>(&ex, 1));
  EXPECT_EQ(out.str(), "2 7 4 3 0|1 1 1 1 0|-100 -100 9 -100 -100\n");
  std::istringstream bad("1 2|1 1\n");
  EXPECT_THROW(read_dump(bad), std::invalid_argument);
}
